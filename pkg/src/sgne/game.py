"""Game data model: players, stochastic gradient oracles, coupling constraints
and the multiplier graph over which dual variables are shared."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Callable, Sequence

import numpy as np

GradSampler = Callable[[int, np.ndarray, np.ndarray], np.ndarray]
GradExact = Callable[[int, np.ndarray], np.ndarray]
ProxOracle = Callable[[int, np.ndarray, float], np.ndarray]
NoiseSampler = Callable[[int, np.random.Generator, int], np.ndarray]


class GameValidationError(ValueError):
    """Raised when a game violates a structural precondition."""


# --------------------------------------------------------------------------
# multiplier graph
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class MultiplierGraph:
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise GameValidationError("weight matrix must be square")
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_edges(cls, n_nodes: int, edges, weight: float = 1.0) -> "MultiplierGraph":
        w = np.zeros((n_nodes, n_nodes))
        for i, j in edges:
            if i == j:
                raise GameValidationError(f"self loop at node {i}")
            w[i, j] = w[j, i] = weight
        return cls(w)

    @classmethod
    def cycle(cls, n_nodes: int, extra_edges=(), weight: float = 1.0) -> "MultiplierGraph":
        if n_nodes == 1:
            return cls(np.zeros((1, 1)))
        if n_nodes == 2:
            edges = [(0, 1)]
        else:
            edges = [(i, (i + 1) % n_nodes) for i in range(n_nodes)]
        return cls.from_edges(n_nodes, list(edges) + list(extra_edges), weight)

    @classmethod
    def complete(cls, n_nodes: int, weight: float = 1.0) -> "MultiplierGraph":
        w = weight * (np.ones((n_nodes, n_nodes)) - np.eye(n_nodes))
        return cls(w)

    @property
    def n_nodes(self) -> int:
        return self.weights.shape[0]

    @property
    def degrees(self) -> np.ndarray:
        return self.weights.sum(axis=1)

    @property
    def max_degree(self) -> float:
        return float(self.degrees.max())

    def neighbors(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.weights[i])

    def is_symmetric(self) -> bool:
        return bool(np.array_equal(self.weights, self.weights.T))

    def is_connected(self) -> bool:
        seen = {0}
        queue = deque([0])
        while queue:
            i = queue.popleft()
            for j in self.neighbors(i):
                if j not in seen:
                    seen.add(int(j))
                    queue.append(int(j))
        return len(seen) == self.n_nodes

    @cached_property
    def L(self) -> np.ndarray:
        self.check()
        return np.diag(self.degrees) - self.weights

    def check(self) -> None:
        w = self.weights
        if not self.is_symmetric():
            raise GameValidationError("multiplier graph weights are not symmetric")
        if np.any(np.diag(w) != 0):
            raise GameValidationError("multiplier graph has nonzero diagonal")
        if np.any(w < 0):
            raise GameValidationError("multiplier graph has negative weights")
        if not self.is_connected():
            raise GameValidationError("multiplier graph is not connected")


def laplacian(graph: MultiplierGraph, m: int | None = None) -> np.ndarray:
    """Return L = D - W, or the extended ``kron(L, I_m)`` when ``m`` is given."""
    L = graph.L
    if m is None:
        return L
    return np.kron(L, np.eye(m))


# --------------------------------------------------------------------------
# coupling constraints
# --------------------------------------------------------------------------


class Coupling:
    """Separable coupling constraint g(x) = sum_i g_i(x_i) <= 0 in R^m."""

    m: int
    is_affine = False

    def g_block(self, i: int, xi: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def jac_block(self, i: int, xi: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def g(self, blocks: Sequence[np.ndarray]) -> np.ndarray:
        out = np.zeros(self.m)
        for i, xi in enumerate(blocks):
            out += self.g_block(i, xi)
        return out


@dataclass
class SeparableCoupling(Coupling):
    m: int
    g_i: Callable[[int, np.ndarray], np.ndarray]
    grad_g_i: Callable[[int, np.ndarray], np.ndarray]
    lipschitz_bound: float | None = None
    grad_bound: float | None = None

    def g_block(self, i, xi):
        return np.asarray(self.g_i(i, xi), dtype=float)

    def jac_block(self, i, xi):
        return np.asarray(self.grad_g_i(i, xi), dtype=float).reshape(self.m, -1)


@dataclass
class AffineCoupling(Coupling):
    """g_i(x_i) = A_i x_i - b_i with sum_i b_i = b."""

    A_blocks: list[np.ndarray]
    b_blocks: list[np.ndarray]
    is_affine = True

    def __post_init__(self):
        self.A_blocks = [np.atleast_2d(np.asarray(a, dtype=float)) for a in self.A_blocks]
        self.b_blocks = [np.atleast_1d(np.asarray(b, dtype=float)) for b in self.b_blocks]
        ms = {a.shape[0] for a in self.A_blocks} | {b.shape[0] for b in self.b_blocks}
        if len(ms) != 1:
            raise GameValidationError("coupling blocks disagree on m")
        self.m = ms.pop()

    @classmethod
    def empty(cls, dims: Sequence[int]) -> "AffineCoupling":
        return cls([np.zeros((0, d)) for d in dims], [np.zeros(0) for _ in dims])

    @classmethod
    def from_global(cls, A: np.ndarray, b: np.ndarray, dims: Sequence[int]) -> "AffineCoupling":
        """Split ``A x <= b`` column-wise; ``b`` is shared evenly across agents."""
        A = np.atleast_2d(np.asarray(A, dtype=float))
        b = np.atleast_1d(np.asarray(b, dtype=float))
        cuts = np.cumsum(dims)[:-1]
        blocks = np.split(A, cuts, axis=1)
        n = len(dims)
        return cls(blocks, [b / n for _ in dims])

    @property
    def A(self) -> np.ndarray:
        return np.hstack(self.A_blocks)

    @property
    def b(self) -> np.ndarray:
        return np.sum(self.b_blocks, axis=0)

    def g_block(self, i, xi):
        return self.A_blocks[i] @ xi - self.b_blocks[i]

    def jac_block(self, i, xi):
        return self.A_blocks[i]

    def as_separable(self) -> SeparableCoupling:
        A, b = self.A_blocks, self.b_blocks
        return SeparableCoupling(
            m=self.m,
            g_i=lambda i, xi: A[i] @ xi - b[i],
            grad_g_i=lambda i, xi: A[i],
            lipschitz_bound=float(np.linalg.norm(self.A, 2)) if self.m else 0.0,
            grad_bound=float(np.linalg.norm(self.A, 2)) if self.m else 0.0,
        )


# --------------------------------------------------------------------------
# game
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class GameProblem:
    """Immutable description of an N-player stochastic game.

    ``grad_sampler(i, x, xi)`` receives a batch of noise draws ``xi`` (first
    axis is the sample index) and returns one gradient block per draw, shape
    ``(len(xi), n_i)``. Oracles see the whole decision vector ``x`` and may
    ignore the blocks they do not depend on.
    """

    dims: tuple[int, ...]
    grad_sampler: GradSampler
    noise_sampler: NoiseSampler
    prox_f: ProxOracle
    coupling: Coupling
    graph: MultiplierGraph
    grad_exact: GradExact | None = None
    projector: Callable[[int, np.ndarray], np.ndarray] | None = None
    x0: np.ndarray | None = None
    x_ref: np.ndarray | None = None
    cocoercivity: float | None = None
    monotone: bool = True
    name: str = "game"
    meta: dict[str, Any] = field(default_factory=dict)
    # optional vectorized fast paths; they must agree with the blockwise oracles
    box: tuple[np.ndarray, np.ndarray] | None = None
    grad_exact_stacked: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if not dims or any(d < 1 for d in dims):
            raise GameValidationError(f"player dimensions must be >= 1, got {dims}")
        object.__setattr__(self, "dims", dims)
        if self.graph.n_nodes != len(dims):
            raise GameValidationError("multiplier graph size differs from number of players")
        if self.coupling.m < 0:
            raise GameValidationError("coupling dimension must be >= 0")
        if self.x0 is not None and np.shape(self.x0) != (self.n,):
            raise GameValidationError("initial point has the wrong size")

    @property
    def n_players(self) -> int:
        return len(self.dims)

    @property
    def n(self) -> int:
        return sum(self.dims)

    @property
    def m(self) -> int:
        return self.coupling.m

    @cached_property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.dims)])

    @cached_property
    def _slices(self) -> list[slice]:
        o = self.offsets.tolist()
        return [slice(o[i], o[i + 1]) for i in range(len(self.dims))]

    def block(self, x: np.ndarray, i: int) -> np.ndarray:
        return x[self._slices[i]]

    def blocks(self, x: np.ndarray) -> list[np.ndarray]:
        return [x[s] for s in self._slices]

    def prox(self, x: np.ndarray, steps) -> np.ndarray:
        """Blockwise prox of alpha_i f_i; ``steps`` is one scalar per player."""
        if self.box is not None:
            return np.minimum(np.maximum(x, self.box[0]), self.box[1])
        steps = np.broadcast_to(np.asarray(steps, dtype=float), (self.n_players,))
        return np.concatenate(
            [self.prox_f(i, xi, float(steps[i])) for i, xi in enumerate(self.blocks(x))]
        )

    def project(self, x: np.ndarray) -> np.ndarray:
        if self.projector is None:
            raise GameValidationError(f"game {self.name!r} has no local-set projector")
        if self.box is not None:
            return np.minimum(np.maximum(x, self.box[0]), self.box[1])
        return np.concatenate([self.projector(i, xi) for i, xi in enumerate(self.blocks(x))])

    def g_blocks(self, x: np.ndarray) -> np.ndarray:
        """Per-agent constraint values g_i(x_i), shape (N, m)."""
        if self.m == 0:
            return np.zeros((self.n_players, 0))
        return np.stack([self.coupling.g_block(i, xi) for i, xi in enumerate(self.blocks(x))])

    def g(self, x: np.ndarray) -> np.ndarray:
        return self.g_blocks(x).sum(axis=0)

    def jac_transpose_times(self, x: np.ndarray, lam: np.ndarray) -> np.ndarray:
        """col_i( grad g_i(x_i)^T lam_i ) for per-agent duals ``lam`` of shape (N, m)."""
        if self.m == 0:
            return np.zeros(self.n)
        return np.concatenate(
            [self.coupling.jac_block(i, xi).T @ lam[i] for i, xi in enumerate(self.blocks(x))]
        )

    def exact_pseudogradient(self, x: np.ndarray) -> np.ndarray:
        if self.grad_exact is None:
            raise GameValidationError(f"game {self.name!r} has no exact pseudogradient")
        if self.grad_exact_stacked is not None:
            return self.grad_exact_stacked(x)
        return np.concatenate([np.asarray(self.grad_exact(i, x), dtype=float) for i in range(self.n_players)])

    def initial_point(self) -> np.ndarray:
        if self.x0 is None:
            return np.zeros(self.n)
        return np.array(self.x0, dtype=float)


# --------------------------------------------------------------------------
# validation
# --------------------------------------------------------------------------


@dataclass
class CheckResult:
    name: str
    passed: bool | None
    detail: str = ""

    @property
    def ok(self) -> bool:
        return self.passed is not False

    @property
    def skipped(self) -> bool:
        return self.passed is None


@dataclass
class ValidationReport:
    checks: list[CheckResult]

    @property
    def ok(self) -> bool:
        return all(c.passed is not False for c in self.checks)

    def failed(self) -> list[str]:
        return [c.name for c in self.checks if c.passed is False]

    def __getitem__(self, name: str) -> CheckResult:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def summary(self) -> str:
        tag = {True: "pass", False: "FAIL", None: "skip"}
        return "\n".join(f"{tag[c.passed]:>4}  {c.name}  {c.detail}" for c in self.checks)


def _sample_points(game: GameProblem, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    x = rng.normal(scale=scale, size=game.n)
    if game.projector is not None:
        x = game.project(x)
    return x


def check_graph(graph: MultiplierGraph) -> list[CheckResult]:
    w = graph.weights
    sym = graph.is_symmetric() and not np.any(np.diag(w) != 0) and not np.any(w < 0)
    conn = graph.is_connected()
    return [
        CheckResult("graph_symmetry", sym, "" if sym else "W must be symmetric, nonnegative, zero diagonal"),
        CheckResult("graph_connected", conn, "" if conn else "breadth-first search misses nodes"),
    ]


def check_prox_firmly_nonexpansive(game, rng, trials=200, tol=1e-10) -> CheckResult:
    worst = -np.inf
    for _ in range(trials):
        i = int(rng.integers(game.n_players))
        d = game.dims[i]
        u, v = rng.normal(scale=3.0, size=d), rng.normal(scale=3.0, size=d)
        step = float(rng.uniform(0.01, 2.0))
        pu, pv = game.prox_f(i, u, step), game.prox_f(i, v, step)
        lhs = np.sum((pu - pv) ** 2)
        rhs = np.sum((u - v) ** 2) - np.sum(((u - pu) - (v - pv)) ** 2)
        worst = max(worst, lhs - rhs)
    return CheckResult("prox_firmly_nonexpansive", bool(worst <= tol), f"max excess {worst:.2e}")


def check_jacobian(game, rng, trials=20, h=1e-6, rtol=1e-6) -> CheckResult:
    if game.m == 0:
        return CheckResult("coupling_jacobian", None, "m = 0")
    worst = 0.0
    for _ in range(trials):
        x = _sample_points(game, rng)
        for i, xi in enumerate(game.blocks(x)):
            J = game.coupling.jac_block(i, xi)
            fd = np.empty_like(J)
            for c in range(xi.size):
                e = np.zeros_like(xi)
                e[c] = h
                fd[:, c] = (game.coupling.g_block(i, xi + e) - game.coupling.g_block(i, xi - e)) / (2 * h)
            err = np.linalg.norm(fd - J) / max(np.linalg.norm(J), 1.0)
            worst = max(worst, err)
    return CheckResult("coupling_jacobian", bool(worst <= rtol), f"max rel err {worst:.2e}")


def check_grad_exact(game, rng, samples=10_000, n_points=3, n_se=3.0) -> CheckResult:
    if game.grad_exact is None:
        return CheckResult("grad_exact_matches_sampler", None, "no exact oracle")
    worst = 0.0
    for _ in range(n_points):
        x = _sample_points(game, rng)
        for i in range(game.n_players):
            xi = game.noise_sampler(i, rng, samples)
            g = np.asarray(game.grad_sampler(i, x, xi), dtype=float).reshape(samples, -1)
            mean, se = g.mean(axis=0), g.std(axis=0, ddof=1) / np.sqrt(samples)
            exact = np.asarray(game.grad_exact(i, x), dtype=float)
            gap = np.abs(mean - exact)
            # floor covers degenerate noise, where se is pure rounding
            bound = np.maximum(n_se * se, 1e-9 * (1 + np.abs(exact)))
            worst = max(worst, float(np.max(gap / bound)))
    return CheckResult("grad_exact_matches_sampler", bool(worst <= 1.0), f"max gap/bound {worst:.2f}")


def check_fast_paths(game, rng, trials=20, rtol=1e-12) -> CheckResult:
    """The vectorized box and stacked gradient must reproduce the blockwise oracles."""
    if game.box is None and game.grad_exact_stacked is None:
        return CheckResult("fast_paths_consistent", None, "no fast paths")
    worst = 0.0
    for _ in range(trials):
        x = _sample_points(game, rng)
        v = x + rng.normal(scale=3.0, size=game.n)
        if game.box is not None:
            blockwise = [np.concatenate([fn(i, vi) for i, vi in enumerate(game.blocks(v))]) for fn in
                         [lambda i, vi: game.prox_f(i, vi, 1.0)] + ([game.projector] if game.projector else [])]
            for ref in blockwise:
                worst = max(worst, float(np.max(np.abs(game.prox(v, 1.0) - ref))))
        if game.grad_exact_stacked is not None and game.grad_exact is not None:
            ref = np.concatenate([np.asarray(game.grad_exact(i, x), dtype=float) for i in range(game.n_players)])
            err = np.abs(game.grad_exact_stacked(x) - ref) / np.maximum(1.0, np.abs(ref))
            worst = max(worst, float(err.max()))
    return CheckResult("fast_paths_consistent", bool(worst <= rtol), f"max rel gap {worst:.2e}")


def validate_game(game: GameProblem, seed: int = 0, samples: int = 10_000) -> ValidationReport:
    """Run the mechanically checkable structural checks on ``game``.

    Never raises for a failed check; failures are carried in the report.
    """
    rng = np.random.default_rng(seed)
    checks = check_graph(game.graph)
    dims_ok = game.graph.n_nodes == game.n_players and all(d >= 1 for d in game.dims)
    try:
        x = game.initial_point()
        xi = game.noise_sampler(0, rng, 2)
        gs = np.asarray(game.grad_sampler(0, x, xi))
        dims_ok = dims_ok and gs.shape == (2, game.dims[0])
        dims_ok = dims_ok and game.g_blocks(x).shape == (game.n_players, game.m)
    except Exception as exc:  # oracle blew up on a well-sized input
        dims_ok = False
        checks.append(CheckResult("dimension_consistency", False, repr(exc)))
    else:
        checks.append(CheckResult("dimension_consistency", dims_ok))
    checks.append(check_prox_firmly_nonexpansive(game, rng))
    checks.append(check_jacobian(game, rng))
    checks.append(check_grad_exact(game, rng, samples=samples))
    checks.append(check_fast_paths(game, rng))
    checks.append(CheckResult("convexity", None, "not machine-checkable, asserted by caller"))
    checks.append(CheckResult("slater", None, "not machine-checkable, asserted by caller"))
    return ValidationReport(checks)
