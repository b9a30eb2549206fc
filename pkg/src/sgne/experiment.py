"""Experiment configuration: parsing, step resolution and replicated runs."""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np

from .diagnostics import RunRecord
from .game import GameProblem, validate_game
from .oracle import BatchSchedule
from .scenarios import SCENARIOS, build_game
from .solvers import ConfigError, OracleConfig, SolverConfig, SolverKind, run, validate_config
from .tuning import StepConfig, TuneResult, Vanishing, instability_tuner

log = logging.getLogger(__name__)

DEFAULT_GRID = tuple(1e-4 * 2 ** (j / 2) for j in range(0, 41))
DEFAULT_PROBE_BUDGET = 500


class ConfigParseError(ValueError):
    """Malformed or schema-violating experiment configuration."""


@dataclass(frozen=True)
class TuneSpec:
    grid: tuple[float, ...] = DEFAULT_GRID
    probe_budget: int = DEFAULT_PROBE_BUDGET
    seed: int = 0


@dataclass(frozen=True)
class SolverSpec:
    kind: SolverKind
    label: str
    delta: float
    steps: dict[str, Any] | None  # None means instability-tuned
    ratios: tuple[float, float, float] = (1.0, 1.0, 1.0)
    tune: TuneSpec = field(default_factory=TuneSpec)
    oracle: OracleConfig = field(default_factory=OracleConfig)
    vanishing: Vanishing | None = None
    dual_sign: int = 1


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str
    scenario_params: dict[str, Any]
    solvers: tuple[SolverSpec, ...]
    max_iters: int
    tol_res: float | None
    seeds: tuple[int, ...]
    outdir: str = "results"

    def with_seeds(self, seeds) -> "ExperimentConfig":
        return replace(self, seeds=tuple(int(s) for s in seeds))


# --------------------------------------------------------------------------
# parsing
# --------------------------------------------------------------------------


def _req(d: dict, key: str, where: str):
    if key not in d:
        raise ConfigParseError(f"{where}: missing field {key!r}")
    return d[key]


def _number(v, where: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ConfigParseError(f"{where}: expected a finite number, got {v!r}")
    return float(v)


def _parse_steps(raw, where: str) -> dict[str, Any] | None:
    if raw == "auto":
        return None
    if isinstance(raw, (int, float)) and not isinstance(raw, bool):
        v = _number(raw, where)
        return {"alpha": v, "nu": v, "sigma": v}
    if isinstance(raw, dict):
        if "alpha" not in raw:
            raise ConfigParseError(f"{where}: step object needs 'alpha'")
        out = {}
        for key in ("alpha", "nu", "sigma"):
            val = raw.get(key, raw["alpha"])
            if isinstance(val, list):
                out[key] = [_number(v, f"{where}.{key}") for v in val]
            else:
                out[key] = _number(val, f"{where}.{key}")
        return out
    raise ConfigParseError(f"{where}: steps must be 'auto', a number or an object")


def _parse_grid(raw, where: str) -> tuple[float, ...]:
    """A list of steps, or a geometric grid {start, factor, count}."""
    if isinstance(raw, dict):
        try:
            start, factor = _number(raw["start"], where), _number(raw["factor"], where)
            count = raw["count"]
        except KeyError as exc:
            raise ConfigParseError(f"{where}: missing field {exc}") from None
        if isinstance(count, bool) or not isinstance(count, int) or count < 1 or factor <= 1:
            raise ConfigParseError(f"{where}: need integer count >= 1 and factor > 1")
        return tuple(start * factor**j for j in range(count))
    if not isinstance(raw, (list, tuple)):
        raise ConfigParseError(f"{where}: expected a list or a geometric grid object")
    return tuple(_number(g, where) for g in raw)


def _parse_solver(raw: Any, idx: int) -> SolverSpec:
    where = f"solvers[{idx}]"
    if not isinstance(raw, dict):
        raise ConfigParseError(f"{where}: expected an object")
    try:
        kind = SolverKind(_req(raw, "kind", where))
    except ValueError as exc:
        raise ConfigParseError(f"{where}: {exc}") from None
    delta = _number(raw.get("delta", 0.0), f"{where}.delta")
    steps = _parse_steps(raw.get("steps", "auto"), f"{where}.steps")
    oracle_raw = raw.get("oracle", {})
    if not isinstance(oracle_raw, dict):
        raise ConfigParseError(f"{where}.oracle: expected an object")
    try:
        schedule = BatchSchedule(
            c=_number(oracle_raw.get("c", 1.0), f"{where}.oracle.c"),
            k0=_number(oracle_raw.get("k0", 1.0), f"{where}.oracle.k0"),
            a=_number(oracle_raw.get("a", 0.2), f"{where}.oracle.a"),
            cap=oracle_raw.get("cap"),
        )
        oracle = OracleConfig(oracle_raw.get("mode", "saa"), schedule)
        vanishing = None
        if "vanishing" in raw:
            v = raw["vanishing"]
            vanishing = Vanishing(_number(v["gamma0"], f"{where}.vanishing.gamma0"), float(v.get("eta", 1.0)), float(v.get("offset", 1.0)))
    except (ValueError, ConfigError, KeyError, TypeError) as exc:
        raise ConfigParseError(f"{where}: {exc}") from None
    ratios = tuple(_number(r, f"{where}.ratios") for r in raw.get("ratios", (1.0, 1.0, 1.0)))
    if len(ratios) != 3 or min(ratios) <= 0:
        raise ConfigParseError(f"{where}.ratios: need three positive numbers")
    tune_raw = raw.get("tune", {})
    tune = TuneSpec(
        grid=_parse_grid(tune_raw.get("grid", DEFAULT_GRID), f"{where}.tune.grid"),
        probe_budget=int(tune_raw.get("probe_budget", DEFAULT_PROBE_BUDGET)),
        seed=int(tune_raw.get("seed", 0)),
    )
    if not tune.grid or min(tune.grid) <= 0:
        raise ConfigParseError(f"{where}.tune.grid: need positive step values")
    dual_sign = raw.get("dual_sign", 1)
    if dual_sign not in (1, -1):
        raise ConfigParseError(f"{where}.dual_sign: must be 1 or -1")
    return SolverSpec(
        kind=kind,
        label=str(raw.get("label", kind.value)),
        delta=delta,
        steps=steps,
        ratios=ratios,
        tune=tune,
        oracle=oracle,
        vanishing=vanishing,
        dual_sign=dual_sign,
    )


def parse_config(raw: dict[str, Any]) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigParseError("top level must be a JSON object")
    scenario = _req(raw, "scenario", "config")
    if scenario not in SCENARIOS:
        raise ConfigParseError(f"unknown scenario {scenario!r}")
    params = raw.get("scenario_params", {})
    if not isinstance(params, dict):
        raise ConfigParseError("scenario_params must be an object")
    solvers_raw = _req(raw, "solvers", "config")
    if not isinstance(solvers_raw, list) or not solvers_raw:
        raise ConfigParseError("solvers must be a non-empty array")
    solvers = tuple(_parse_solver(s, i) for i, s in enumerate(solvers_raw))
    labels = [s.label for s in solvers]
    if len(set(labels)) != len(labels):
        raise ConfigParseError("solver labels must be unique (set 'label' when a kind repeats)")
    budget = raw.get("budget", {})
    max_iters = budget.get("max_iters", 1000)
    if isinstance(max_iters, bool) or not isinstance(max_iters, int) or max_iters < 0:
        raise ConfigParseError("budget.max_iters must be a nonnegative integer")
    tol = budget.get("tol_res")
    tol = None if tol is None else _number(tol, "budget.tol_res")
    seeds = raw.get("seeds", [0])
    if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) and not isinstance(s, bool) for s in seeds):
        raise ConfigParseError("seeds must be a non-empty array of integers")
    if len(set(seeds)) != len(seeds):
        raise ConfigParseError("seeds must be distinct")
    outdir = raw.get("outdir", "results")
    if not isinstance(outdir, str):
        raise ConfigParseError("outdir must be a string")
    return ExperimentConfig(scenario, params, solvers, max_iters, tol, tuple(seeds), outdir)


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigParseError(f"cannot read {path}: {exc}") from None
    return parse_config(raw)


# --------------------------------------------------------------------------
# resolution
# --------------------------------------------------------------------------


def _step_config(game: GameProblem, spec: SolverSpec, scale: float | None) -> StepConfig:
    N = game.n_players
    if spec.steps is None:
        return StepConfig.uniform(N, scale, spec.delta, spec.ratios, spec.vanishing)

    def arr(v):
        a = np.broadcast_to(np.asarray(v, dtype=float), (N,)) if np.ndim(v) == 0 else np.asarray(v, dtype=float)
        return a.copy()

    try:
        return StepConfig(spec.delta, arr(spec.steps["alpha"]), arr(spec.steps["nu"]), arr(spec.steps["sigma"]), spec.vanishing)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def solver_config(game: GameProblem, spec: SolverSpec, exp: ExperimentConfig, seed: int, scale: float | None = None) -> SolverConfig:
    return SolverConfig(
        kind=spec.kind,
        steps=_step_config(game, spec, 1.0 if scale is None else scale),
        oracle=spec.oracle,
        max_iters=exp.max_iters,
        tol_res=exp.tol_res,
        seed=seed,
        dual_sign=spec.dual_sign,
    )


def tune_solver(game: GameProblem, spec: SolverSpec, exp: ExperimentConfig) -> TuneResult:
    base = solver_config(game, spec, exp, spec.tune.seed, scale=1.0)
    return instability_tuner(game, base, spec.tune.grid, spec.tune.probe_budget, spec.tune.seed)


@dataclass
class Resolved:
    spec: SolverSpec
    steps: StepConfig
    tuned: TuneResult | None = None


def resolve_solvers(game: GameProblem, exp: ExperimentConfig) -> list[Resolved]:
    out = []
    for spec in exp.solvers:
        if spec.steps is None:
            tr = tune_solver(game, spec, exp)
            if tr.no_instability:
                log.warning("%s: no instability on the grid; using the largest grid step", spec.label)
            out.append(Resolved(spec, _step_config(game, spec, tr.step), tr))
        else:
            out.append(Resolved(spec, _step_config(game, spec, None)))
    return out


def validation_problems(game: GameProblem, exp: ExperimentConfig) -> list[str]:
    problems = [f"game: {c.name}: {c.detail}" for c in validate_game(game).checks if c.passed is False]
    for spec in exp.solvers:
        probe = solver_config(game, spec, exp, 0, scale=1.0)
        problems += [f"{spec.label}: {p}" for p in validate_config(game, probe)]
    return problems


# --------------------------------------------------------------------------
# execution
# --------------------------------------------------------------------------


def csv_name(exp: ExperimentConfig, label: str, seed: int) -> str:
    return f"{exp.scenario}_{label}_{seed}.csv"


def _run_one(game, exp, res: Resolved, seed: int, outdir: Path, timing: bool) -> tuple[str, int, RunRecord]:
    cfg = replace(solver_config(game, res.spec, exp, seed), steps=res.steps)
    rec = run(game, cfg, timing=timing, check_identities=True)
    rec.write_csv(outdir / csv_name(exp, res.spec.label, seed))
    return res.spec.label, seed, rec


def run_in_memory(exp: ExperimentConfig, game: GameProblem | None = None) -> tuple[list[Resolved], list[tuple[str, int, RunRecord]]]:
    """Resolve steps and run every (solver, seed) pair without writing files."""
    game = build_experiment_game(exp) if game is None else game
    resolved = resolve_solvers(game, exp)
    results = []
    for res in resolved:
        for seed in exp.seeds:
            cfg = replace(solver_config(game, res.spec, exp, seed), steps=res.steps)
            results.append((res.spec.label, seed, run(game, cfg, check_identities=True)))
    return resolved, results


def build_experiment_game(exp: ExperimentConfig) -> GameProblem:
    return build_game({"scenario": exp.scenario, "scenario_params": exp.scenario_params})


def run_experiment(
    exp: ExperimentConfig,
    outdir: str | Path | None = None,
    threads: int = 1,
    timing: bool = False,
    game: GameProblem | None = None,
) -> tuple[int, dict]:
    """Run every (solver, seed) pair; returns (exit code, manifest)."""
    game = build_experiment_game(exp) if game is None else game
    problems = validation_problems(game, exp)
    if problems:
        for p in problems:
            log.error("validation: %s", p)
        return 2, {"validation_errors": problems}
    resolved = resolve_solvers(game, exp)
    out = Path(outdir if outdir is not None else exp.outdir)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(r, s) for r in resolved for s in exp.seeds]
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        results = list(pool.map(lambda job: _run_one(game, exp, job[0], job[1], out, timing), jobs))
    manifest = build_manifest(exp, resolved, results)
    with open(out / "manifest.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    all_diverged = all(rec.diverged for _, _, rec in results)
    return (3 if all_diverged and results else 0), manifest


def build_manifest(exp: ExperimentConfig, resolved: list[Resolved], results) -> dict:
    from . import __name__ as pkg

    solvers = []
    for r in resolved:
        entry = {
            "label": r.spec.label,
            "kind": r.spec.kind.value,
            "steps": r.steps.to_dict(),
            "steps_source": "tuned" if r.tuned is not None else "config",
            "oracle": {
                "mode": r.spec.oracle.mode,
                "c": r.spec.oracle.schedule.c,
                "k0": r.spec.oracle.schedule.k0,
                "a": r.spec.oracle.schedule.a,
                "cap": r.spec.oracle.schedule.cap,
            },
            "dual_sign": r.spec.dual_sign,
        }
        if r.tuned is not None:
            entry["tuning"] = {
                "step": r.tuned.step,
                "no_instability": r.tuned.no_instability,
                "unstable": list(r.tuned.unstable),
                "probe_budget": r.spec.tune.probe_budget,
                "grid": list(r.spec.tune.grid),
            }
        solvers.append(entry)
    runs = [
        {
            "solver": label,
            "seed": seed,
            "csv": csv_name(exp, label, seed),
            "status": rec.status,
            "diverged_at": rec.diverged_at,
            "iterations": rec.last.k,
            "final_residual": rec.last.residual,
            "identity_violation": rec.identity_violation,
        }
        for label, seed, rec in results
    ]
    return {
        "package": pkg,
        "scenario": exp.scenario,
        "scenario_params": exp.scenario_params,
        "budget": {"max_iters": exp.max_iters, "tol_res": exp.tol_res},
        "seeds": list(exp.seeds),
        "solvers": solvers,
        "runs": runs,
    }
