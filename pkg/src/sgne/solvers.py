"""Relaxed forward-backward solvers, comparison baselines and the driver loop.

Every step function has the signature
``step(game, state, cfg, k, streams, counters, steps) -> IterateState`` and
updates ``counters`` with one ``prox`` per pass of the backward (resolvent)
step and one ``fhat`` per stochastic pseudogradient estimate.
"""

from __future__ import annotations

import enum
import time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .diagnostics import RunRecord, compute_metrics, identity_terms, recursion_term
from .game import GameProblem, GameValidationError, laplacian
from .operators import (
    ExtVector,
    IterateState,
    StepMatrices,
    extended_forward_A,
    pseudogradient_expected,
    resolvent_B,
)
from .oracle import (
    BatchSchedule,
    OracleCounters,
    RngStreams,
    approx_pseudogradient_sa,
    approx_pseudogradient_saa,
    batch_size,
)
from .tuning import StepConfig, validate_delta


class SolverKind(str, enum.Enum):
    SRFB = "srfb"
    SRFB_PROJ = "srfb_proj"
    SRPFB = "srpfb"
    SRFB_NEP = "srfb_nep"
    SPFB = "spfb"
    SFBF = "sfbf"
    SEG = "seg"
    SPRG = "sprg"


# (prox passes, F-hat evaluations) per iteration
SIGNATURES: dict[SolverKind, tuple[int, int]] = {
    SolverKind.SRFB: (1, 1),
    SolverKind.SRFB_PROJ: (1, 1),
    SolverKind.SRPFB: (1, 1),
    SolverKind.SRFB_NEP: (1, 1),
    SolverKind.SPFB: (1, 1),
    SolverKind.SFBF: (1, 2),
    SolverKind.SEG: (2, 2),
    SolverKind.SPRG: (1, 1),
}

RELAXED = {SolverKind.SRFB, SolverKind.SRFB_PROJ, SolverKind.SRPFB, SolverKind.SRFB_NEP}


class SolverError(RuntimeError):
    pass


class DivergenceError(SolverError):
    def __init__(self, k: int, reason: str):
        super().__init__(f"diverged at iteration {k}: {reason}")
        self.k = k


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class OracleConfig:
    mode: str = "saa"
    schedule: BatchSchedule = field(default_factory=BatchSchedule)

    def __post_init__(self):
        if self.mode not in ("sa", "saa"):
            raise ConfigError(f"oracle mode must be 'sa' or 'saa', got {self.mode!r}")


@dataclass(frozen=True)
class SolverConfig:
    kind: SolverKind
    steps: StepConfig
    oracle: OracleConfig = field(default_factory=OracleConfig)
    max_iters: int = 1000
    tol_res: float | None = None
    seed: int = 0
    # +1: primal step uses +A_i^T lambda_i (consistent with the skew splitting);
    # -1 reproduces the printed preconditioned update
    dual_sign: int = 1
    divergence_factor: float = 1e6

    def __post_init__(self):
        object.__setattr__(self, "kind", SolverKind(self.kind))
        if self.dual_sign not in (1, -1):
            raise ConfigError("dual_sign must be +1 or -1")
        if self.max_iters < 0:
            raise ConfigError("max_iters must be >= 0")

    def to_dict(self) -> dict:
        s = self.oracle.schedule
        return {
            "kind": self.kind.value,
            "steps": self.steps.to_dict(),
            "oracle": {"mode": self.oracle.mode, "c": s.c, "k0": s.k0, "a": s.a, "cap": s.cap},
            "max_iters": self.max_iters,
            "tol_res": self.tol_res,
            "seed": self.seed,
            "dual_sign": self.dual_sign,
        }


def validate_config(game: GameProblem, cfg: SolverConfig) -> list[str]:
    """Structural and parameter checks that must pass before a run starts."""
    problems = []
    kind, st = cfg.kind, cfg.steps
    if kind in (SolverKind.SRPFB, SolverKind.SPFB) and not game.coupling.is_affine:
        problems.append(f"{kind.value} needs affine coupling constraints")
    if kind == SolverKind.SRFB_NEP:
        if game.m != 0:
            problems.append("srfb_nep is for games without coupling constraints (m = 0)")
        if st.vanishing is None:
            problems.append("srfb_nep needs a vanishing step rule")
        chk = validate_delta(st.delta, "nep")
        if not chk:
            problems.append(chk.detail)
    elif kind in RELAXED:
        chk = validate_delta(st.delta, "gnep")
        if not chk:
            problems.append(chk.detail)
    if kind == SolverKind.SRFB_PROJ and game.projector is None:
        problems.append("srfb_proj needs a local-set projector")
    for name in ("alpha", "nu", "sigma"):
        v = np.asarray(getattr(st, name))
        if v.shape != (game.n_players,):
            problems.append(f"{name} needs one entry per player")
        elif np.any(~np.isfinite(v)) or np.any(v <= 0):
            problems.append(f"{name} must be strictly positive")
    return problems


# --------------------------------------------------------------------------
# building blocks
# --------------------------------------------------------------------------


def _fhat(game, x, k, cfg: SolverConfig, streams, counters, call=0) -> np.ndarray:
    if cfg.oracle.mode == "sa":
        return approx_pseudogradient_sa(game, x, k, streams, call, counters)[0]
    return approx_pseudogradient_saa(game, x, k, streams, cfg.oracle.schedule, call, counters)[0]


def _average(state: IterateState, delta: float) -> ExtVector:
    return (1.0 - delta) * state.omega + delta * state.omega_bar


def _backward(game, steps, v: ExtVector, counters, projection=False) -> ExtVector:
    counters.prox += 1
    if projection:
        return ExtVector(game.project(v.x), np.array(v.z, dtype=float), np.maximum(v.lam, 0.0))
    return resolvent_B(game, steps, v)


def _forward(game, steps: StepMatrices, omega: ExtVector, F_value) -> ExtVector:
    """Phi^{-1} A(omega) with the supplied pseudogradient value."""
    return steps.apply_inverse(extended_forward_A(game, omega, F_value))


# --------------------------------------------------------------------------
# relaxed schemes
# --------------------------------------------------------------------------


def srfb_gnep_step(game, state, cfg, k, streams, counters, steps, projection=False) -> IterateState:
    """One relaxed forward-backward iteration on the extended operator.

    Agent-wise this is: average (x, z, lam) with their running means, then
    x_i+ = prox[x_bar_i - a_i (F_i + grad g_i^T lam_i)],
    z_i+ = z_bar_i - v_i sum_j w_ij (lam_i - lam_j),
    lam_i+ = max(0, lam_bar_i + s_i g_i(x_i) - s_i sum_j w_ij [(lam_i - lam_j) - (z_i - z_j)]).
    """
    bar = _average(state, cfg.steps.delta)
    F = _fhat(game, state.x, k, cfg, streams, counters)
    new = _backward(game, steps, bar - _forward(game, steps, state.omega, F), counters, projection)
    return IterateState.from_omega(new, bar)


def srfb_projection_step(game, state, cfg, k, streams, counters, steps) -> IterateState:
    return srfb_gnep_step(game, state, cfg, k, streams, counters, steps, projection=True)


def srpfb_step(game, state, cfg, k, streams, counters, steps, delta=None) -> IterateState:
    """Preconditioned relaxed step (affine coupling), staged as two exchanges."""
    delta = cfg.steps.delta if delta is None else delta
    L = laplacian(game.graph)
    A_blocks, b_blocks = game.coupling.A_blocks, game.coupling.b_blocks
    bar = _average(state, delta)
    x, z, lam = state.x, state.z, state.lam
    F = _fhat(game, x, k, cfg, streams, counters)
    # stage 2: primal and auxiliary updates from lam^k
    At_lam = game.jac_transpose_times(x, lam)
    a = np.repeat(steps.alpha, game.dims)
    counters.prox += 1
    x_new = game.prox(bar.x - a * (F + cfg.dual_sign * At_lam), steps.alpha)
    z_new = bar.z - steps.nu[:, None] * (L @ lam)
    # stage 3: dual update with the fresh x, z
    if game.m:
        x_ref = 2 * x_new - x
        Ax = np.stack([A_blocks[i] @ xi for i, xi in enumerate(game.blocks(x_ref))])
        b = np.stack(b_blocks)
    else:
        Ax = b = np.zeros_like(lam)
    s = steps.sigma[:, None]
    lam_new = np.maximum(bar.lam + s * (Ax - b) + s * (L @ (2 * z_new - z)) - s * (L @ lam), 0.0)
    return IterateState.from_omega(ExtVector(x_new, z_new, lam_new), bar)


def srfb_nep_step(game, state, cfg, k, streams, counters, steps) -> IterateState:
    """Relaxed projected step with a vanishing step size."""
    gamma = cfg.steps.vanishing.step(k) if cfg.steps.vanishing is not None else float(steps.alpha[0])
    bar = _average(state, cfg.steps.delta)
    F = _fhat(game, state.x, k, cfg, streams, counters)
    counters.prox += 1
    v = bar.x - gamma * F
    x_new = game.project(v) if game.projector is not None else game.prox(v, gamma)
    return IterateState.from_omega(ExtVector(x_new, state.z, state.lam), bar)


# --------------------------------------------------------------------------
# baselines
# --------------------------------------------------------------------------


def spfb_step(game, state, cfg, k, streams, counters, steps) -> IterateState:
    return srpfb_step(game, state, cfg, k, streams, counters, steps, delta=0.0)


def seg_step(game, state, cfg, k, streams, counters, steps) -> IterateState:
    omega = state.omega
    F1 = _fhat(game, omega.x, k, cfg, streams, counters, call=0)
    y = _backward(game, steps, omega - _forward(game, steps, omega, F1), counters)
    F2 = _fhat(game, y.x, k, cfg, streams, counters, call=1)
    new = _backward(game, steps, omega - _forward(game, steps, y, F2), counters)
    return IterateState.from_omega(new)


def sfbf_step(game, state, cfg, k, streams, counters, steps) -> IterateState:
    omega = state.omega
    F1 = _fhat(game, omega.x, k, cfg, streams, counters, call=0)
    Tw = _forward(game, steps, omega, F1)
    y = _backward(game, steps, omega - Tw, counters)
    F2 = _fhat(game, y.x, k, cfg, streams, counters, call=1)
    new = y - (_forward(game, steps, y, F2) - Tw)
    # cheap projection onto a superset of the solutions keeps lambda >= 0
    new = ExtVector(new.x, new.z, np.maximum(new.lam, 0.0))
    return IterateState.from_omega(new)


def sprg_step(game, state, cfg, k, streams, counters, steps) -> IterateState:
    """Projected reflected step; the ``*_bar`` slots carry omega^{k-1}."""
    omega, prev = state.omega, state.omega_bar
    refl = 2.0 * omega - prev
    F = _fhat(game, refl.x, k, cfg, streams, counters)
    new = _backward(game, steps, omega - _forward(game, steps, refl, F), counters)
    return IterateState.from_omega(new, omega)


STEP_FUNCTIONS: dict[SolverKind, Callable] = {
    SolverKind.SRFB: srfb_gnep_step,
    SolverKind.SRFB_PROJ: srfb_projection_step,
    SolverKind.SRPFB: srpfb_step,
    SolverKind.SRFB_NEP: srfb_nep_step,
    SolverKind.SPFB: spfb_step,
    SolverKind.SFBF: sfbf_step,
    SolverKind.SEG: seg_step,
    SolverKind.SPRG: sprg_step,
}


def baseline_step(kind, game, state, cfg, k, streams, counters, steps) -> IterateState:
    kind = SolverKind(kind)
    if kind not in (SolverKind.SPFB, SolverKind.SFBF, SolverKind.SEG, SolverKind.SPRG):
        raise SolverError(f"unsupported baseline {kind.value!r}")
    return STEP_FUNCTIONS[kind](game, state, cfg, k, streams, counters, steps)


# --------------------------------------------------------------------------
# driver
# --------------------------------------------------------------------------


class _ResidualOracle:
    """Pseudogradient used for metrics: exact when available, else a cached
    sample estimate refreshed every ``refresh`` iterations."""

    def __init__(self, game, seed, samples=10_000, refresh=100):
        self.game, self.samples, self.refresh = game, samples, refresh
        self.streams = RngStreams(seed ^ 0x5EED)
        self._cache = None

    def __call__(self, x, k):
        if self.game.grad_exact is not None:
            return self.game.exact_pseudogradient(x)
        if self._cache is None or k % self.refresh == 0:
            self._cache = approx_pseudogradient_saa(
                self.game, x, 0, self.streams, BatchSchedule(c=self.samples, k0=1, a=1e-9), call=k
            )[0]
        return self._cache


def _check_finite(state: IterateState, k: int, limit: float) -> None:
    flat = state.omega.flat()
    if not np.all(np.isfinite(flat)):
        raise DivergenceError(k, "non-finite iterate")
    if np.linalg.norm(flat) > limit:
        raise DivergenceError(k, "iterate norm exceeded the divergence limit")


def run(
    game: GameProblem,
    cfg: SolverConfig,
    sink: Callable | None = None,
    state0: IterateState | None = None,
    x_ref: np.ndarray | None = None,
    check_identities: bool = True,
    timing: bool = False,
    keep_history: bool = False,
) -> RunRecord:
    """Iterate until the residual tolerance or the iteration budget is reached.

    One metric row is emitted per iteration (plus the initial state at k = 0).
    Divergence is recorded in the returned record rather than raised.
    """
    problems = validate_config(game, cfg)
    if problems:
        raise ConfigError("; ".join(problems))
    step_fn = STEP_FUNCTIONS[cfg.kind]
    steps = cfg.steps.matrices(game)
    streams = RngStreams(cfg.seed)
    counters = OracleCounters()
    state = IterateState.initial(game) if state0 is None else state0
    x_ref = game.x_ref if x_ref is None else x_ref
    limit = cfg.divergence_factor * max(1.0, state.omega.norm())
    res_oracle = _ResidualOracle(game, cfg.seed)
    record = RunRecord(config=cfg.to_dict(), seed=cfg.seed)
    history = [state] if keep_history else None

    delta = cfg.steps.delta
    track = check_identities and cfg.kind in RELAXED and 0 < delta < 1
    worst = 0.0

    t0 = time.perf_counter()

    def emit(st, k, S):
        wall = (time.perf_counter() - t0) * 1e3 if timing else 0.0
        row = compute_metrics(game, st, k, counters, S, wall, res_oracle(st.x, k), x_ref)
        record.rows.append(row)
        if sink is not None:
            sink(row)
        return row

    row = emit(state, 0, 0)
    if cfg.tol_res is not None and row.residual <= cfg.tol_res:
        record.status = "converged"
    else:
        for k in range(cfg.max_iters):
            S = batch_size(cfg.oracle.schedule, k) if cfg.oracle.mode == "saa" else 1
            try:
                new = step_fn(game, state, cfg, k, streams, counters, steps)
                _check_finite(new, k, limit)
            except (DivergenceError, FloatingPointError) as exc:
                record.status = "diverged"
                record.diverged_at = k
                record.config["divergence"] = str(exc)
                break
            if track:
                a, c = identity_terms(state.omega, state.omega_bar, new.omega_bar, delta)
                zero = ExtVector.zeros_like(new.omega)
                r = recursion_term(state.omega, state.omega_bar, new.omega_bar, delta, zero)
                worst = max(worst, a, c, r)
            state = new
            if keep_history:
                history.append(state)
            row = emit(state, k + 1, S)
            if cfg.tol_res is not None and row.residual <= cfg.tol_res:
                record.status = "converged"
                break
    record.final_state = state
    record.identity_violation = worst if track else None
    record.history = history
    return record


def probe_diverges(game: GameProblem, cfg: SolverConfig, scale: float, budget: int, seed: int) -> bool:
    """Short run with steps multiplied by ``scale``; True when it blows up."""
    probe_cfg = replace(cfg, steps=cfg.steps.scaled(scale), max_iters=budget, tol_res=None, seed=seed)
    with np.errstate(all="ignore"):
        rec = run(game, probe_cfg, check_identities=False)
    return rec.diverged
