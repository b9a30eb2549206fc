"""Stochastic pseudogradient oracles: sample-average (SAA) with increasing
batches, single-sample (SA), reproducible per-agent random streams and call
accounting."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .game import GameProblem, GameValidationError

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class BatchSchedule:
    """S_k = ceil(c (k + k0)^(a + 1)), optionally capped."""

    c: float = 1.0
    k0: float = 1.0
    a: float = 0.2
    cap: int | None = None

    def __post_init__(self):
        if self.c <= 0 or self.k0 <= 0 or self.a <= 0:
            raise ValueError("batch schedule needs c, k0, a > 0")
        if self.cap is not None and self.cap < 1:
            raise ValueError("batch cap must be >= 1")

    def size(self, k: int) -> int:
        return batch_size(self, k)


def batch_size(schedule: BatchSchedule, k: int) -> int:
    if k < 0:
        raise ValueError("iteration index must be >= 0")
    raw = schedule.c * (k + schedule.k0) ** (schedule.a + 1)
    nearest = round(raw)
    # keep exact integers exact despite pow() rounding
    s = nearest if abs(raw - nearest) <= 1e-9 * max(raw, 1.0) else math.ceil(raw)
    s = max(1, s)
    if schedule.cap is not None:
        s = min(s, schedule.cap)
    return s


@dataclass(frozen=True)
class NoiseModel:
    sigma0: float = 0.0
    sigma_star: float = 0.0
    p: float = 2.0

    def __post_init__(self):
        if not (math.isfinite(self.sigma0) and math.isfinite(self.sigma_star)):
            raise ValueError("noise constants must be finite")
        if self.sigma0 < 0 or self.sigma_star < 0 or self.p < 2:
            raise ValueError("noise constants must be nonnegative and p >= 2")


class RngStreams:
    """Counter-based random streams keyed by (master seed, agent, iteration, call).

    Each key maps to its own Philox counter block, so the draws an agent sees
    at a given iteration do not depend on which other agents or iterations
    were sampled before, or in which order.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._cached: dict[int, tuple[np.random.Philox, np.random.Generator]] = {}

    def _key(self, agent: int) -> np.ndarray:
        return np.array([self.seed & _MASK64, agent & _MASK64], dtype=np.uint64)

    @staticmethod
    def _counter(k: int, call: int) -> np.ndarray:
        return np.array([0, k & _MASK64, call & _MASK64, 0], dtype=np.uint64)

    def stream(self, agent: int, k: int, call: int = 0) -> np.random.Generator:
        """A fresh generator for the key (agent) and counter (k, call)."""
        return np.random.Generator(np.random.Philox(key=self._key(agent), counter=self._counter(k, call)))

    def reuse(self, agent: int, k: int, call: int = 0) -> np.random.Generator:
        """Same draws as :meth:`stream`, but repositions one cached generator per
        agent instead of building a new one. The returned generator is only
        valid until the next ``reuse`` call for the same agent."""
        if agent not in self._cached:
            bg = np.random.Philox(key=self._key(agent))
            self._cached[agent] = (bg, np.random.Generator(bg))
        bg, gen = self._cached[agent]
        state = bg.state
        state["state"] = {"counter": self._counter(k, call), "key": self._key(agent)}
        state.update(buffer_pos=4, has_uint32=0, uinteger=0)
        bg.state = state
        return gen


@dataclass
class OracleCounters:
    prox: int = 0
    fhat: int = 0
    grad_samples: int = 0

    def snapshot(self) -> tuple[int, int, int]:
        return (self.prox, self.fhat, self.grad_samples)


def _sample_block(game: GameProblem, i: int, x: np.ndarray, rng: np.random.Generator, size: int) -> np.ndarray:
    xi = game.noise_sampler(i, rng, size)
    g = np.asarray(game.grad_sampler(i, x, xi), dtype=float)
    if g.shape != (size, game.dims[i]):
        raise GameValidationError(
            f"grad sampler for player {i} returned shape {g.shape}, expected {(size, game.dims[i])}"
        )
    return g


def approx_pseudogradient_saa(
    game: GameProblem,
    x: np.ndarray,
    k: int,
    streams: RngStreams,
    schedule: BatchSchedule,
    call: int = 0,
    counters: OracleCounters | None = None,
) -> tuple[np.ndarray, int]:
    """Sample-average estimate of the pseudogradient with batch S_k per agent.

    Returns the estimate and the number of individual gradient samples drawn.
    Counts as a single F-hat evaluation.
    """
    S = batch_size(schedule, k)
    blocks = [_sample_block(game, i, x, streams.reuse(i, k, call), S).mean(axis=0) for i in range(game.n_players)]
    calls = S * game.n_players
    if counters is not None:
        counters.fhat += 1
        counters.grad_samples += calls
    return np.concatenate(blocks), calls


def approx_pseudogradient_sa(
    game: GameProblem,
    x: np.ndarray,
    k: int,
    streams: RngStreams,
    call: int = 0,
    counters: OracleCounters | None = None,
) -> tuple[np.ndarray, int]:
    """Single-sample estimate: one draw per agent."""
    blocks = [_sample_block(game, i, x, streams.reuse(i, k, call), 1)[0] for i in range(game.n_players)]
    calls = game.n_players
    if counters is not None:
        counters.fhat += 1
        counters.grad_samples += calls
    return np.concatenate(blocks), calls


@dataclass(frozen=True)
class ErrorStats:
    mse: float
    bound: float | None
    ratio_4x: float | None
    batch: int
    trials: int


def _mse(game, x, exact, batch, trials, rng) -> float:
    total = 0.0
    for _ in range(trials):
        est = np.concatenate([_sample_block(game, i, x, rng, batch).mean(axis=0) for i in range(game.n_players)])
        total += float(np.sum((est - exact) ** 2))
    return total / trials


def empirical_error_stats(
    game: GameProblem,
    x: np.ndarray,
    x_star: np.ndarray | None,
    batch: int,
    trials: int,
    rng: np.random.Generator,
    noise: NoiseModel | None = None,
    constant: float | None = None,
) -> ErrorStats:
    """Empirical E||F_hat - F||^2 at batch ``batch`` and at ``4 * batch``.

    ``bound`` is C (sigma*^2 + sigma0^2 ||x - x*||^2) / S when ``noise`` and
    ``constant`` are supplied.
    """
    if game.grad_exact is None:
        raise GameValidationError("empirical error statistics need an exact pseudogradient")
    if trials < 100:
        raise ValueError("need at least 100 trials")
    exact = game.exact_pseudogradient(x)
    mse = _mse(game, x, exact, batch, trials, rng)
    mse4 = _mse(game, x, exact, 4 * batch, trials, rng)
    ratio = mse / mse4 if mse4 > 0 else None
    bound = None
    if noise is not None and constant is not None and x_star is not None:
        d2 = float(np.sum((x - x_star) ** 2))
        bound = constant * (noise.sigma_star**2 + noise.sigma0**2 * d2) / batch
    return ErrorStats(mse, bound, ratio, batch, trials)
