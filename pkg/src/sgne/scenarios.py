"""Scenario builders: the two-player skew game, the network Cournot game and
small quadratic games with a closed-form variational equilibrium."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from importlib import resources
from typing import Any

import numpy as np

from .game import AffineCoupling, GameProblem, GameValidationError, MultiplierGraph
from .operators import ExtVector

X_MIN = 1e-6
_SUPPLY_FLOOR = 1e-9


def _identity_prox(i, v, step):
    return np.array(v, dtype=float)


def _identity_projector(i, v):
    return np.array(v, dtype=float)


# --------------------------------------------------------------------------
# illustrative skew game
# --------------------------------------------------------------------------


def build_illustrative(sigma_noise: float = 0.1, seed: int | None = None, x0=(1.0, 1.0)) -> GameProblem:
    """Two players, F(x, xi) = (R1 x2, -R2 x1) with R_i ~ N(1, sigma_noise^2).

    ``seed`` only tags the instance; the game has no random structure.
    """
    if sigma_noise < 0:
        raise GameValidationError("sigma_noise must be >= 0")

    def noise(i, rng, size):
        return rng.normal(1.0, sigma_noise, size=size)

    def grad(i, x, R):
        R = np.asarray(R, dtype=float).reshape(-1, 1)
        return R * x[1] if i == 0 else -R * x[0]

    def exact(i, x):
        return np.array([x[1]]) if i == 0 else np.array([-x[0]])

    return GameProblem(
        dims=(1, 1),
        grad_sampler=grad,
        noise_sampler=noise,
        prox_f=_identity_prox,
        coupling=AffineCoupling.empty((1, 1)),
        graph=MultiplierGraph.cycle(2),
        grad_exact=exact,
        projector=_identity_projector,
        x0=np.array(x0, dtype=float),
        x_ref=np.zeros(2),
        cocoercivity=None,
        monotone=True,
        name="illustrative",
        meta={"sigma_noise": sigma_noise, "seed": seed},
    )


# --------------------------------------------------------------------------
# network Cournot game
# --------------------------------------------------------------------------

PARTICIPATION_FIXTURE = "cournot_participation.json"
# 0-based versions of the chords (2, 15) and (6, 13) on the 20-cycle
DEFAULT_CHORDS = ((1, 14), (5, 12))


def generate_participation(n_companies: int, n_markets: int, rng: np.random.Generator, max_markets: int = 3) -> list[list[int]]:
    """Random bipartite incidence: each company serves 1..max_markets markets,
    every market is served by at least two companies."""
    if n_markets < 1 or n_companies < 2:
        raise GameValidationError("need at least two companies and one market")
    if n_companies * max_markets < 2 * n_markets:
        raise GameValidationError("too few companies to give every market two suppliers")
    for _ in range(1000):
        sets = [set(rng.choice(n_markets, size=rng.integers(1, min(max_markets, n_markets) + 1), replace=False).tolist()) for _ in range(n_companies)]
        counts = np.zeros(n_markets, dtype=int)
        for s in sets:
            counts[list(s)] += 1
        # top up under-served markets with companies that still have room
        for j in np.flatnonzero(counts < 2):
            for i in rng.permutation(n_companies):
                if counts[j] >= 2:
                    break
                if j not in sets[i] and len(sets[i]) < max_markets:
                    sets[i].add(int(j))
                    counts[j] += 1
        if np.all(counts >= 2):
            return [sorted(int(j) for j in s) for s in sets]
    raise GameValidationError("could not generate a participation pattern")


def load_default_participation() -> list[list[int]]:
    text = resources.files("sgne.data").joinpath(PARTICIPATION_FIXTURE).read_text(encoding="utf-8")
    return json.loads(text)["participation"]


@dataclass(frozen=True)
class CournotParams:
    n_companies: int = 20
    n_markets: int = 7
    participation: list[list[int]] | None = None
    theta_range: tuple[float, float] = (1.0, 1.5)
    capacity_range: tuple[float, float] = (0.5, 1.0)
    pi_range: tuple[float, float] = (0.5, 5.0)
    q_range: tuple[float, float] = (1.0, 100.0)
    beta_range: tuple[float, float] = (0.5, 1.5)
    beta: list[float] | None = None
    gamma_d: float = 1.1
    lambda_mean: float = 5000.0
    lambda_std: float = 500.0
    chords: tuple[tuple[int, int], ...] | None = None
    edge_weight: float = 1.0
    seed: int = 0

    def __post_init__(self):
        for name in ("theta_range", "capacity_range", "pi_range", "q_range", "beta_range"):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi:
                raise GameValidationError(f"{name} must satisfy 0 < low <= high")
        if self.gamma_d <= 1:
            raise GameValidationError("demand exponent gamma_d must exceed 1")
        if self.lambda_mean <= 0 or self.lambda_std < 0:
            raise GameValidationError("demand level must be positive with nonnegative spread")
        if self.n_companies < 2 or self.n_markets < 1:
            raise GameValidationError("need at least two companies and one market")
        if self.edge_weight <= 0:
            raise GameValidationError("edge_weight must be positive")
        if self.beta is not None and (len(self.beta) != self.n_companies or min(self.beta) <= 0):
            raise GameValidationError("beta needs one positive entry per company")

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "CournotParams":
        d = dict(d)
        for key in ("theta_range", "capacity_range", "pi_range", "q_range", "beta_range"):
            if key in d:
                d[key] = tuple(d[key])
        if "chords" in d and d["chords"] is not None:
            d["chords"] = tuple(tuple(e) for e in d["chords"])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise TypeError(f"unknown Cournot parameters: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


def _resolve_participation(p: CournotParams) -> list[list[int]]:
    if p.participation is not None:
        part = [sorted(set(int(j) for j in s)) for s in p.participation]
    elif (p.n_companies, p.n_markets) == (20, 7):
        part = load_default_participation()
    else:
        part = generate_participation(p.n_companies, p.n_markets, np.random.default_rng([p.seed, 7]))
    if len(part) != p.n_companies:
        raise GameValidationError("participation needs one market list per company")
    for s in part:
        if not s:
            raise GameValidationError("every company must serve at least one market")
        if min(s) < 0 or max(s) >= p.n_markets:
            raise GameValidationError("market index out of range")
    return part


def expected_root(mean: float, std: float, power: float, nodes: int = 80) -> float:
    """E[max(L, 0)^power] for L ~ N(mean, std^2) by Gauss-Hermite quadrature."""
    if std == 0:
        return max(mean, 0.0) ** power
    t, w = np.polynomial.hermite_e.hermegauss(nodes)
    vals = np.maximum(mean + std * t, 0.0) ** power
    return float(w @ vals / np.sqrt(2 * np.pi))


def build_cournot(params: CournotParams | None = None) -> GameProblem:
    p = CournotParams() if params is None else params
    part = _resolve_participation(p)
    rng = np.random.default_rng(p.seed)
    N, m = p.n_companies, p.n_markets
    dims = tuple(len(s) for s in part)
    theta = [rng.uniform(*p.theta_range, size=d) for d in dims]
    cap = rng.uniform(*p.capacity_range, size=m)
    pi = rng.uniform(*p.pi_range, size=N)
    q = [rng.uniform(*p.q_range, size=d) for d in dims]
    beta = np.asarray(p.beta, dtype=float) if p.beta is not None else rng.uniform(*p.beta_range, size=N)

    A_blocks = []
    for s in part:
        Ai = np.zeros((m, len(s)))
        Ai[s, np.arange(len(s))] = 1.0
        A_blocks.append(Ai)
    coupling = AffineCoupling(A_blocks, [cap / N for _ in range(N)])
    offsets = np.concatenate([[0], np.cumsum(dims)])
    markets = [np.asarray(s) for s in part]
    # incidence from stacked decision vector to market totals
    A = np.hstack(A_blocks)
    inv_g = 1.0 / p.gamma_d
    mean_root = expected_root(p.lambda_mean, p.lambda_std, inv_g)

    inv_b = 1.0 / beta
    pi_scale = pi**inv_b
    rows = [A[s] for s in markets]

    def marginal_cost(i, xi):
        return q[i] + pi_scale[i] * xi ** inv_b[i]

    def grad_from_root(i, x, root):
        """Gradient block given samples of Lambda^(1/gamma_d); ``root`` is (S, n_i)."""
        xi = x[offsets[i] : offsets[i + 1]]
        T = np.maximum(rows[i] @ x, _SUPPLY_FLOOR)
        base = T ** (-inv_g) * (1.0 - inv_g * xi / T)
        return marginal_cost(i, np.maximum(xi, 0.0)) - root * base

    # each company only observes demand in the markets it serves
    def noise(i, rng_, size):
        return rng_.normal(p.lambda_mean, p.lambda_std, size=(size, dims[i]))

    def grad(i, x, lam):
        root = np.maximum(np.asarray(lam, dtype=float), 0.0) ** inv_g
        return grad_from_root(i, x, root)

    def exact(i, x):
        return grad_from_root(i, x, np.full((1, dims[i]), mean_root))[0]

    # stacked form of ``exact`` for all companies at once
    col_market = np.argmax(A, axis=0)
    col_inv_b = np.concatenate([np.full(d, ib) for d, ib in zip(dims, inv_b)])
    col_pi = np.concatenate([np.full(d, ps) for d, ps in zip(dims, pi_scale)])
    col_q = np.concatenate(q)

    def exact_stacked(x):
        T = np.maximum(A @ x, _SUPPLY_FLOOR)[col_market]
        mc = col_q + col_pi * np.maximum(x, 0.0) ** col_inv_b
        return mc - mean_root * T ** (-inv_g) * (1.0 - inv_g * x / T)

    def project(i, v):
        return np.minimum(np.maximum(v, X_MIN), theta[i])

    def prox(i, v, step):
        return project(i, v)

    chords = p.chords if p.chords is not None else (DEFAULT_CHORDS if N == 20 else ())
    graph = MultiplierGraph.cycle(N, chords, weight=p.edge_weight)
    x0 = np.concatenate([0.5 * (X_MIN + t) for t in theta])
    meta = {
        "participation": part,
        "theta": [t.tolist() for t in theta],
        "capacity": cap.tolist(),
        "pi": pi.tolist(),
        "q": [v.tolist() for v in q],
        "beta": beta.tolist(),
        "mean_root": mean_root,
        "params": p.to_dict(),
    }
    return GameProblem(
        dims=dims,
        grad_sampler=grad,
        noise_sampler=noise,
        prox_f=prox,
        coupling=coupling,
        graph=graph,
        grad_exact=exact,
        projector=project,
        x0=x0,
        x_ref=None,
        box=(np.full(int(sum(dims)), X_MIN), np.concatenate(theta)),
        grad_exact_stacked=exact_stacked,
        cocoercivity=None,
        monotone=True,
        name="cournot",
        meta=meta,
    )


def cournot_marginal_cost(game: GameProblem, i: int, xi: np.ndarray) -> np.ndarray:
    """Analytic gradient of company i's production cost."""
    meta = game.meta
    b = meta["beta"][i]
    return np.asarray(meta["q"][i]) + meta["pi"][i] ** (1 / b) * np.asarray(xi) ** (1 / b)


def cournot_cost(game: GameProblem, i: int, xi: np.ndarray) -> float:
    meta = game.meta
    b = meta["beta"][i]
    xi = np.asarray(xi, dtype=float)
    return float(np.dot(meta["q"][i], xi) + b / (b + 1) * meta["pi"][i] ** (1 / b) * np.sum(xi ** ((b + 1) / b)))


def cournot_expected_payoff(game: GameProblem, i: int, x: np.ndarray) -> float:
    """Expected cost minus expected revenue of company i at the mean demand."""
    meta = game.meta
    gamma_d = meta["params"]["gamma_d"]
    A = game.coupling.A
    T = np.maximum(A @ x, _SUPPLY_FLOOR)
    xi = game.block(x, i)
    mk = meta["participation"][i]
    price = meta["mean_root"] * T[mk] ** (-1 / gamma_d)
    return cournot_cost(game, i, xi) - float(price @ xi)


# --------------------------------------------------------------------------
# quadratic game with a closed-form v-GNE
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class KKTReference:
    x: np.ndarray
    lam: float
    omega: ExtVector
    active: bool


def _random_spd(n: int, rng: np.random.Generator) -> np.ndarray:
    M = rng.normal(size=(n, n))
    return M @ M.T / n + np.eye(n)


def solve_quadratic_kkt(Q: np.ndarray, q: np.ndarray, cap: float) -> tuple[np.ndarray, float, bool]:
    """v-GNE of F(x) = Qx + q under sum(x) <= cap by active-set enumeration."""
    n = len(q)
    x = np.linalg.solve(Q, -q)
    if x.sum() <= cap:
        return x, 0.0, False
    K = np.zeros((n + 1, n + 1))
    K[:n, :n] = Q
    K[:n, n] = 1.0
    K[n, :n] = 1.0
    sol = np.linalg.solve(K, np.concatenate([-q, [cap]]))
    lam = float(sol[n])
    if lam < 0:
        raise GameValidationError("no KKT point with nonnegative multiplier")
    return sol[:n], lam, True


def extended_reference(game: GameProblem, x: np.ndarray, lam: float) -> ExtVector:
    """Extended point (x*, z*, 1 lam*) with z* balancing the local constraint shares."""
    from .game import laplacian

    N, m = game.n_players, game.m
    gb = game.g_blocks(x)
    L = laplacian(game.graph)
    z = -np.linalg.pinv(L) @ (gb - gb.mean(axis=0))
    return ExtVector(np.array(x, dtype=float), z.reshape(N, m), np.full((N, m), float(lam)))


def build_quadratic_kkt(
    n_players: int = 2,
    seed: int | None = None,
    cap: float = 1.0,
    noise_std: float = 0.0,
    dims: tuple[int, ...] | None = None,
) -> tuple[GameProblem, KKTReference]:
    """Strongly monotone quadratic game with one shared constraint sum(x) <= cap.

    ``seed=None`` gives F_i(x) = x_i - 1; otherwise Q is a random SPD matrix
    and q a random vector.
    """
    if n_players < 2:
        raise GameValidationError("need at least two players")
    dims = tuple(dims) if dims is not None else (1,) * n_players
    if len(dims) != n_players:
        raise GameValidationError("dims needs one entry per player")
    if any(int(d) < 1 for d in dims):
        raise GameValidationError(f"player dimensions must be >= 1, got {dims}")
    n = sum(dims)
    if seed is None:
        Q, q = np.eye(n), -np.ones(n)
    else:
        rng = np.random.default_rng(seed)
        Q, q = _random_spd(n, rng), rng.normal(-1.0, 0.5, size=n)
    offsets = np.concatenate([[0], np.cumsum(dims)])

    def exact(i, x):
        sl = slice(offsets[i], offsets[i + 1])
        return Q[sl] @ x + q[sl]

    def noise(i, rng_, size):
        return rng_.normal(0.0, 1.0, size=(size, dims[i]))

    def grad(i, x, eps):
        return exact(i, x)[None, :] + noise_std * np.asarray(eps, dtype=float)

    coupling = AffineCoupling.from_global(np.ones((1, n)), np.array([cap]), dims)
    x_star, lam_star, active = solve_quadratic_kkt(Q, q, cap)
    game = GameProblem(
        dims=dims,
        grad_sampler=grad,
        noise_sampler=noise,
        prox_f=_identity_prox,
        coupling=coupling,
        graph=MultiplierGraph.cycle(n_players),
        grad_exact=exact,
        projector=_identity_projector,
        x0=np.zeros(n),
        x_ref=x_star,
        cocoercivity=float(np.linalg.eigvalsh(Q)[0] / np.linalg.norm(Q, 2) ** 2),
        monotone=True,
        name="quadratic_kkt",
        meta={"Q": Q.tolist(), "q": q.tolist(), "cap": cap, "noise_std": noise_std, "seed": seed},
    )
    ref = KKTReference(x_star, lam_star, extended_reference(game, x_star, lam_star), active)
    return game, ref


# --------------------------------------------------------------------------
# registry
# --------------------------------------------------------------------------

SCENARIOS = ("illustrative", "cournot", "quadratic_kkt")


def build_game(spec: dict[str, Any]) -> GameProblem:
    """Build a game from ``{"scenario": name, "scenario_params": {...}}``."""
    name = spec.get("scenario")
    params = dict(spec.get("scenario_params") or {})
    if name == "illustrative":
        return build_illustrative(**params)
    if name == "cournot":
        return build_cournot(CournotParams.from_dict(params))
    if name == "quadratic_kkt":
        if "dims" in params:
            params["dims"] = tuple(params["dims"])
        return build_quadratic_kkt(**params)[0]
    raise GameValidationError(f"unknown scenario {name!r}; expected one of {SCENARIOS}")
