"""Per-iteration metrics, oracle-count accounting and run records."""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .game import GameProblem
from .operators import ExtVector, IterateState, dual_augmented_residual, residual

CSV_HEADER = ["k", "res", "dist", "feas", "consensus", "prox", "fhat", "grad_samples", "S_k", "wall_ms"]


@dataclass(frozen=True)
class MetricRow:
    k: int
    residual: float
    dist_to_ref: float | None
    feasibility_gap: float
    consensus_gap: float
    prox_calls: int
    f_hat_calls: int
    grad_sample_calls: int
    batch_S: int
    wall_ms: float
    residual_primal: float = float("nan")

    def csv_fields(self) -> list[str]:
        return [
            str(self.k),
            _fmt(self.residual),
            "" if self.dist_to_ref is None else _fmt(self.dist_to_ref),
            _fmt(self.feasibility_gap),
            _fmt(self.consensus_gap),
            str(self.prox_calls),
            str(self.f_hat_calls),
            str(self.grad_sample_calls),
            str(self.batch_S),
            _fmt(self.wall_ms),
        ]


def _fmt(v: float) -> str:
    # repr gives the shortest string that round-trips
    return repr(float(v))


@dataclass
class RunRecord:
    rows: list[MetricRow] = field(default_factory=list)
    status: str = "budget"
    diverged_at: int | None = None
    config: dict[str, Any] = field(default_factory=dict)
    seed: int | None = None
    identity_violation: float | None = None
    final_state: IterateState | None = None
    history: list[IterateState] | None = None

    @property
    def diverged(self) -> bool:
        return self.status == "diverged"

    @property
    def last(self) -> MetricRow:
        return self.rows[-1]

    def column(self, name: str) -> np.ndarray:
        return np.array([np.nan if getattr(r, name) is None else getattr(r, name) for r in self.rows], dtype=float)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in self.rows:
            w.writerow(r.csv_fields())
        return buf.getvalue()

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.to_csv())


def read_csv(path: str | Path) -> list[dict[str, str]]:
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


# --------------------------------------------------------------------------
# metrics
# --------------------------------------------------------------------------


def consensus_gap(lam: np.ndarray) -> float:
    """Largest pairwise distance between the agents' dual copies."""
    lam = np.atleast_2d(np.asarray(lam, dtype=float))
    if lam.shape[0] <= 1 or lam.shape[1] == 0:
        return 0.0
    diff = lam[:, None, :] - lam[None, :, :]
    return float(np.sqrt((diff**2).sum(axis=-1)).max())


def feasibility_gap(game: GameProblem, x: np.ndarray) -> tuple[float, bool]:
    """||max(0, g(x))||_inf, plus a flag that is False when there is no coupling."""
    if game.m == 0:
        return 0.0, False
    return float(np.max(np.maximum(game.g(x), 0.0))), True


def compute_metrics(
    game: GameProblem,
    state: IterateState,
    k: int,
    counters,
    batch_S: int,
    wall_ms: float,
    F_value: np.ndarray,
    x_ref: np.ndarray | None = None,
) -> MetricRow:
    x = state.x
    dist = None if x_ref is None else float(np.linalg.norm(x - x_ref))
    return MetricRow(
        k=k,
        residual=dual_augmented_residual(game, x, state.lam, F_value),
        dist_to_ref=dist,
        feasibility_gap=feasibility_gap(game, x)[0],
        consensus_gap=consensus_gap(state.lam),
        prox_calls=counters.prox,
        f_hat_calls=counters.fhat,
        grad_sample_calls=counters.grad_samples,
        batch_S=batch_S,
        wall_ms=wall_ms,
        residual_primal=residual(game, x, F_value),
    )


def fixed_point_residual(game: GameProblem, state: IterateState, steps) -> float:
    """||omega - T(omega)|| for the noise-free forward-backward map."""
    from .operators import extended_forward_A, resolvent_B, pseudogradient_expected

    omega = state.omega
    F = pseudogradient_expected(game, omega.x, fallback_samples=10_000)
    v = omega - steps.apply_inverse(extended_forward_A(game, omega, F))
    return (omega - resolvent_B(game, steps, v)).norm()


# --------------------------------------------------------------------------
# iterate identities of the relaxed scheme
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class IdentityCheck:
    max_violation: float
    averaging: float
    recursion: float
    norm_identity: float
    skipped: bool = False


def _scale(*vs: ExtVector) -> float:
    return max([1.0] + [v.norm() for v in vs])


def identity_terms(omega: ExtVector, bar_prev: ExtVector, bar: ExtVector, delta: float) -> tuple[float, float]:
    """Averaging identity and the squared-norm identity for one triple.

    Violations are relative to max(1, ||.||) of the vectors involved.
    """
    lhs = omega - bar_prev
    rhs = (1.0 / delta) * (omega - bar)
    v1 = (lhs - rhs).norm() / _scale(omega, bar_prev, bar)
    # delta/(1-delta)^2 ||bar - bar_prev||^2 = delta ||omega - bar_prev||^2
    a = delta / (1 - delta) ** 2 * (bar - bar_prev).norm() ** 2
    b = delta * (omega - bar_prev).norm() ** 2
    v3 = abs(a - b) / _scale(omega, bar_prev, bar) ** 2
    return v1, v3


def recursion_term(omega_next: ExtVector, bar: ExtVector, bar_next: ExtVector, delta: float, ref: ExtVector) -> float:
    lhs = omega_next - ref
    rhs = (1 / (1 - delta)) * (bar_next - ref) - (delta / (1 - delta)) * (bar - ref)
    return (lhs - rhs).norm() / _scale(omega_next, bar, bar_next, ref)


def iterate_identities_check(history: Sequence[IterateState], delta: float, ref: ExtVector | None = None) -> IdentityCheck:
    """Check the algebraic identities of the averaging step along ``history``.

    ``history[k]`` holds (omega^k, omega_bar^{k-1}); consecutive entries give
    the triples (omega^k, omega_bar^{k-1}, omega_bar^k).
    """
    if not 0 < delta < 1:
        return IdentityCheck(0.0, 0.0, 0.0, 0.0, skipped=True)
    v1 = v2 = v3 = 0.0
    for k in range(len(history) - 1):
        s, t = history[k], history[k + 1]
        a, c = identity_terms(s.omega, s.omega_bar, t.omega_bar, delta)
        v1, v3 = max(v1, a), max(v3, c)
        if k + 2 < len(history):
            u = history[k + 2]
            r = ExtVector.zeros_like(s.omega) if ref is None else ref
            v2 = max(v2, recursion_term(t.omega, t.omega_bar, u.omega_bar, delta, r))
    return IdentityCheck(max(v1, v2, v3), v1, v2, v3)


# --------------------------------------------------------------------------
# oracle-count signatures
# --------------------------------------------------------------------------


def record_counters(snapshots: Sequence[tuple[int, int]]) -> list[tuple[int, int]]:
    """Per-iteration (prox, F-hat) deltas from cumulative snapshots."""
    return [(b[0] - a[0], b[1] - a[1]) for a, b in zip(snapshots[:-1], snapshots[1:])]


class SignatureMismatch(AssertionError):
    pass


def check_signature(deltas: Sequence[tuple[int, int]], expected: tuple[int, int]) -> None:
    for k, d in enumerate(deltas):
        if tuple(d) != tuple(expected):
            raise SignatureMismatch(f"iteration {k}: (prox, F-hat) = {d}, expected {expected}")


def record_to_dict(record: RunRecord) -> dict:
    return {
        "status": record.status,
        "diverged_at": record.diverged_at,
        "seed": record.seed,
        "identity_violation": record.identity_violation,
        "rows": len(record.rows),
        "final": asdict(record.last) if record.rows else None,
    }
