"""Command line entry point: ``sgne run|validate|tune <config.json>``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .experiment import (
    ConfigParseError,
    build_experiment_game,
    load_config,
    resolve_solvers,
    run_experiment,
    validation_problems,
)
from .game import GameValidationError
from .solvers import ConfigError

EXIT_OK, EXIT_PARSE, EXIT_INVALID, EXIT_DIVERGED = 0, 1, 2, 3


def _threads(arg: int | None) -> int:
    env = os.environ.get("SGNE_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            logging.warning("ignoring non-integer SGNE_THREADS=%r", env)
    return max(1, arg or 1)


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sgne", description="Stochastic relaxed forward-backward experiments")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run every solver on every seed and write CSVs")
    r.add_argument("config")
    r.add_argument("--outdir")
    r.add_argument("--seed-override", type=int)
    r.add_argument("--threads", type=int)
    r.add_argument("--timing", action="store_true", help="record wall-clock time (output no longer byte-reproducible)")
    v = sub.add_parser("validate", help="check the game and solver parameters")
    v.add_argument("config")
    t = sub.add_parser("tune", help="print instability-tuned steps")
    t.add_argument("config")
    return p


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        exp = load_config(args.config)
        if getattr(args, "seed_override", None) is not None:
            exp = exp.with_seeds([args.seed_override])
    except ConfigParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    try:
        game = build_experiment_game(exp)
    except TypeError as exc:
        print(f"error: bad scenario_params: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (GameValidationError, ValueError) as exc:
        print(f"invalid game: {exc}", file=sys.stderr)
        return EXIT_INVALID

    if args.command == "validate":
        problems = validation_problems(game, exp)
        for p in problems:
            print(f"FAIL {p}")
        if not problems:
            print("ok")
        return EXIT_INVALID if problems else EXIT_OK

    if args.command == "tune":
        problems = validation_problems(game, exp)
        if problems:
            for p in problems:
                print(f"FAIL {p}", file=sys.stderr)
            return EXIT_INVALID
        out = {}
        for r in resolve_solvers(game, exp):
            out[r.spec.label] = {"steps": r.steps.to_dict(), "source": "tuned" if r.tuned else "config"}
            if r.tuned is not None:
                out[r.spec.label]["no_instability"] = r.tuned.no_instability
        print(json.dumps(out, indent=2))
        return EXIT_OK

    try:
        code, manifest = run_experiment(exp, args.outdir, _threads(args.threads), timing=args.timing, game=game)
    except (GameValidationError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    if code == EXIT_INVALID:
        for p in manifest.get("validation_errors", []):
            print(f"FAIL {p}", file=sys.stderr)
    for run in manifest.get("runs", []):
        print(f"{run['csv']}: {run['status']} after {run['iterations']} iterations, res={run['final_residual']:.3e}")
    return code


if __name__ == "__main__":
    sys.exit(main())
