"""Parameter validators and step-size tuning.

Validators never raise on a violated bound; they return a :class:`ParamCheck`
that is falsy and carries the reason.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .game import GameProblem, laplacian
from .operators import StepMatrices, build_phi, build_psi

log = logging.getLogger(__name__)

GOLDEN_RATIO = (1 + math.sqrt(5)) / 2
INV_GOLDEN = 1 / GOLDEN_RATIO


@dataclass(frozen=True)
class ParamCheck:
    ok: bool
    detail: str = ""

    def __bool__(self) -> bool:
        return self.ok


@dataclass(frozen=True)
class Vanishing:
    """gamma_k = gamma0 / (k + offset)^eta."""

    gamma0: float
    eta: float = 1.0
    offset: float = 1.0

    def __post_init__(self):
        if not 0.5 < self.eta <= 1.0:
            raise ValueError(f"exponent eta must lie in (0.5, 1], got {self.eta}")
        if self.gamma0 <= 0 or self.offset <= 0:
            raise ValueError("gamma0 and offset must be positive")

    def step(self, k: int) -> float:
        return self.gamma0 / (k + self.offset) ** self.eta


@dataclass(frozen=True)
class StepConfig:
    delta: float
    alpha: np.ndarray
    nu: np.ndarray
    sigma: np.ndarray
    vanishing: Vanishing | None = None

    @classmethod
    def uniform(cls, n_players: int, step: float, delta: float, ratios=(1.0, 1.0, 1.0), vanishing=None):
        ra, rn, rs = ratios
        full = np.full(n_players, float(step))
        return cls(float(delta), ra * full, rn * full, rs * full, vanishing)

    @property
    def mode(self) -> str:
        return "fixed" if self.vanishing is None else "vanishing"

    @property
    def max_step(self) -> float:
        return float(max(self.alpha.max(), self.nu.max(), self.sigma.max()))

    def scaled(self, factor: float) -> "StepConfig":
        return replace(self, alpha=self.alpha * factor, nu=self.nu * factor, sigma=self.sigma * factor)

    def matrices(self, game: GameProblem) -> StepMatrices:
        return build_phi(game, self.alpha, self.nu, self.sigma)

    def to_dict(self) -> dict:
        out = {
            "delta": self.delta,
            "alpha": self.alpha.tolist(),
            "nu": self.nu.tolist(),
            "sigma": self.sigma.tolist(),
        }
        if self.vanishing is not None:
            v = self.vanishing
            out["vanishing"] = {"gamma0": v.gamma0, "eta": v.eta, "offset": v.offset}
        return out


# --------------------------------------------------------------------------
# validators
# --------------------------------------------------------------------------


def validate_delta(delta: float, mode: str = "gnep") -> ParamCheck:
    """Fixed-step GNEP mode needs 1/phi <= delta <= 1; vanishing NEP mode needs 0 < delta < 1."""
    if mode == "gnep":
        if INV_GOLDEN <= delta <= 1.0:
            return ParamCheck(True)
        return ParamCheck(False, f"delta={delta} outside [1/phi, 1] = [{INV_GOLDEN:.10f}, 1]")
    if mode == "nep":
        if 0.0 < delta < 1.0:
            return ParamCheck(True)
        return ParamCheck(False, f"delta={delta} outside (0, 1)")
    if mode == "none":
        return ParamCheck(True)
    raise ValueError(f"unknown delta mode {mode!r}")


def srfb_step_bound(ell_A: float, delta: float) -> float:
    """Largest admissible ||Phi^{-1}|| for the relaxed forward-backward scheme."""
    if ell_A <= 0 or delta <= 0:
        raise ValueError("Lipschitz constant and delta must be positive")
    return 1.0 / (2.0 * delta * (2.0 * ell_A + 1.0))


def check_srfb_steps(steps: StepConfig, ell_A: float) -> ParamCheck:
    bound = srfb_step_bound(ell_A, steps.delta)
    if steps.max_step <= bound:
        return ParamCheck(True)
    return ParamCheck(False, f"max step {steps.max_step:.6g} exceeds bound {bound:.6g}")


@dataclass(frozen=True)
class SrpfbBounds:
    alpha_max: np.ndarray
    nu_max: np.ndarray
    sigma_max: np.ndarray
    psi_inverse_bound: float | None
    warnings: tuple[str, ...] = ()


def srpfb_step_bounds(game: GameProblem, gamma: float = 0.1, ell_C: float | None = None, delta: float | None = None) -> SrpfbBounds:
    """Per-agent step maxima that make the preconditioning matrix diagonally dominant."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    if not game.coupling.is_affine:
        raise ValueError("preconditioned steps need affine coupling")
    d = game.graph.degrees
    a_max, n_max, s_max = [], [], []
    for i, Ai in enumerate(game.coupling.A_blocks):
        # rows of A_i^T are the columns of A_i
        col_sum = float(np.abs(Ai).sum(axis=0).max()) if Ai.size else 0.0
        row_sum = float(np.abs(Ai).sum(axis=1).max()) if Ai.size else 0.0
        a_max.append(1.0 / (gamma + col_sum))
        n_max.append(1.0 / (gamma + 2 * d[i]))
        s_max.append(1.0 / (gamma + 2 * d[i] + row_sum))
    warnings = []
    psi_bound = None
    if ell_C is not None and delta is not None:
        if ell_C > 0.5:
            psi_bound = 1.0 / (delta * (2 * ell_C - 1))
        else:
            msg = f"global bound on ||Psi^-1|| skipped: ell_C={ell_C} <= 1/2 makes it ill-posed"
            log.warning(msg)
            warnings.append(msg)
    return SrpfbBounds(np.array(a_max), np.array(n_max), np.array(s_max), psi_bound, tuple(warnings))


def check_srpfb_steps(game: GameProblem, steps: StepConfig, gamma: float = 0.1, ell_C: float | None = None) -> ParamCheck:
    b = srpfb_step_bounds(game, gamma, ell_C, steps.delta)
    for name, s, hi in (("alpha", steps.alpha, b.alpha_max), ("nu", steps.nu, b.nu_max), ("sigma", steps.sigma, b.sigma_max)):
        if np.any(s <= 0) or np.any(s > hi * (1 + 1e-12)):
            return ParamCheck(False, f"{name} outside (0, {hi}]")
    if b.psi_inverse_bound is not None:
        psi = build_psi(game, steps.alpha, steps.nu, steps.sigma)
        norm_inv = 1.0 / psi.min_eig if psi.min_eig > 0 else math.inf
        if norm_inv > b.psi_inverse_bound:
            return ParamCheck(False, f"||Psi^-1|| = {norm_inv:.4g} exceeds {b.psi_inverse_bound:.4g}")
    return ParamCheck(True, "; ".join(b.warnings))


@dataclass(frozen=True)
class VanishingReport:
    steps: np.ndarray
    sum_steps: float
    sum_squares: float
    weighted_error_sum: float | None
    diverges: bool


def vanishing_steps(gamma0: float, eta: float, n_steps: int, errors: Sequence[float] | None = None, offset: float = 1.0, divergence_threshold: float = 10.0) -> VanishingReport:
    """Vanishing step sequence with partial-sum diagnostics.

    ``errors`` are the norms ||eps_k||; when given, sum gamma_k^2 ||eps_k||^2
    is reported.
    """
    rule = Vanishing(gamma0, eta, offset)
    k = np.arange(n_steps, dtype=float)
    g = gamma0 / (k + offset) ** eta
    weighted = None
    if errors is not None:
        e = np.asarray(errors, dtype=float)[:n_steps]
        weighted = float(np.sum(g[: e.size] ** 2 * e**2))
    total = float(g.sum())
    return VanishingReport(g, total, float(np.sum(g**2)), weighted, total > divergence_threshold * rule.gamma0)


# --------------------------------------------------------------------------
# Lipschitz estimation
# --------------------------------------------------------------------------


def estimate_lipschitz(operator: Callable[[np.ndarray], np.ndarray], sampler: Callable[[np.random.Generator], np.ndarray], trials: int = 200, rng: np.random.Generator | None = None, safety: float = 1.2) -> float:
    """Sampled Lipschitz constant: max ratio over random pairs, times ``safety``."""
    if trials < 100:
        raise ValueError("need at least 100 trials")
    rng = np.random.default_rng(0) if rng is None else rng
    best = 0.0
    informative = 0
    for _ in range(trials):
        u, v = sampler(rng), sampler(rng)
        d = np.linalg.norm(u - v)
        if d == 0:
            continue
        informative += 1
        best = max(best, float(np.linalg.norm(operator(u) - operator(v)) / d))
    if informative == 0:
        raise ValueError("degenerate sampler: all sampled points coincide")
    return safety * best


def analytic_lipschitz_A(ell_F: float, L: np.ndarray, ell_g: float = 0.0, grad_bound: float = 0.0) -> float:
    """Loose bound (ell_F + ell_L) + (ell_L + ell_g + B_grad_g)."""
    ell_L = float(np.linalg.eigvalsh(L)[-1]) if L.size else 0.0
    return (ell_F + ell_L) + (ell_L + ell_g + grad_bound)


def cocoercivity_constant_C(beta: float, graph) -> float:
    """Admissible cocoercivity modulus min{1/(2 d*), beta} for the cocoercive splitting."""
    return min(1.0 / (2.0 * graph.max_degree), beta)


# --------------------------------------------------------------------------
# instability tuner
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TuneResult:
    step: float
    no_instability: bool
    unstable: tuple[float, ...] = ()
    probes: dict = field(default_factory=dict)


def instability_tuner(game: GameProblem, cfg, grid: Sequence[float], probe_budget: int = 500, seed: int = 0, probe: Callable[[float], bool] | None = None) -> TuneResult:
    """Half of the smallest grid step whose probe run diverges.

    ``cfg`` is a :class:`~sgne.solvers.SolverConfig` whose step ratios are
    kept; the grid value multiplies them. ``probe`` overrides the short run
    (returns True when the step is unstable).
    """
    grid = sorted(float(s) for s in grid)
    if not grid:
        raise ValueError("empty step grid")
    if probe is None:
        from .solvers import probe_diverges

        def probe(s):
            return probe_diverges(game, cfg, s, probe_budget, seed)

    results = {}
    unstable = []
    for s in grid:
        results[s] = bool(probe(s))
        if results[s]:
            unstable.append(s)
            break  # larger steps are not needed once the threshold is found
    if unstable:
        return TuneResult(unstable[0] / 2.0, False, tuple(unstable), results)
    return TuneResult(grid[-1], True, (), results)
