"""Extended operators on omega = (x, z, lambda), step matrices and resolvents.

Dual and auxiliary variables are stored agent-major as ``(N, m)`` arrays, so
``L @ lam`` is the extended Laplacian ``kron(L, I_m)`` applied to col(lam_i).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .game import GameProblem, GameValidationError, laplacian


@dataclass(frozen=True)
class ExtVector:
    x: np.ndarray
    z: np.ndarray
    lam: np.ndarray

    def __add__(self, other: "ExtVector") -> "ExtVector":
        return ExtVector(self.x + other.x, self.z + other.z, self.lam + other.lam)

    def __sub__(self, other: "ExtVector") -> "ExtVector":
        return ExtVector(self.x - other.x, self.z - other.z, self.lam - other.lam)

    def __mul__(self, c: float) -> "ExtVector":
        return ExtVector(c * self.x, c * self.z, c * self.lam)

    __rmul__ = __mul__

    def flat(self) -> np.ndarray:
        return np.concatenate([self.x, self.z.ravel(), self.lam.ravel()])

    def norm(self) -> float:
        return float(np.linalg.norm(self.flat()))

    def dot(self, other: "ExtVector") -> float:
        return float(self.flat() @ other.flat())

    @classmethod
    def unflat(cls, v: np.ndarray, n: int, N: int, m: int) -> "ExtVector":
        return cls(v[:n].copy(), v[n : n + N * m].reshape(N, m).copy(), v[n + N * m :].reshape(N, m).copy())

    @classmethod
    def zeros_like(cls, v: "ExtVector") -> "ExtVector":
        return cls(np.zeros_like(v.x), np.zeros_like(v.z), np.zeros_like(v.lam))

    @classmethod
    def zeros(cls, game: GameProblem) -> "ExtVector":
        N, m = game.n_players, game.m
        return cls(np.zeros(game.n), np.zeros((N, m)), np.zeros((N, m)))


@dataclass(frozen=True)
class IterateState:
    """Current iterate omega^k and its relaxed average omega_bar^{k-1}.

    Solvers without an averaging step reuse the ``*_bar`` slots for whatever
    memory they carry (the previous iterate, for the reflected scheme).
    """

    x: np.ndarray
    z: np.ndarray
    lam: np.ndarray
    x_bar: np.ndarray
    z_bar: np.ndarray
    lam_bar: np.ndarray

    @property
    def omega(self) -> ExtVector:
        return ExtVector(self.x, self.z, self.lam)

    @property
    def omega_bar(self) -> ExtVector:
        return ExtVector(self.x_bar, self.z_bar, self.lam_bar)

    @classmethod
    def from_omega(cls, omega: ExtVector, omega_bar: ExtVector | None = None) -> "IterateState":
        ob = omega if omega_bar is None else omega_bar
        return cls(omega.x, omega.z, omega.lam, ob.x, ob.z, ob.lam)

    @classmethod
    def initial(cls, game: GameProblem, x0=None, z0=None, lam0=None) -> "IterateState":
        N, m = game.n_players, game.m
        x = game.initial_point() if x0 is None else np.array(x0, dtype=float)
        z = np.zeros((N, m)) if z0 is None else np.array(z0, dtype=float).reshape(N, m)
        lam = np.zeros((N, m)) if lam0 is None else np.maximum(np.array(lam0, dtype=float).reshape(N, m), 0.0)
        return cls(x, z, lam, x.copy(), z.copy(), lam.copy())


@dataclass(frozen=True)
class StepMatrices:
    alpha: np.ndarray
    nu: np.ndarray
    sigma: np.ndarray
    dims: tuple[int, ...]
    m: int
    psi: np.ndarray | None = None
    min_eig: float | None = None

    @property
    def phi_diag(self) -> np.ndarray:
        """Diagonal of Phi = diag(alpha^-1, nu^-1, sigma^-1) in extended coordinates."""
        return 1.0 / self.inverse_diag

    @property
    def inverse_diag(self) -> np.ndarray:
        a = np.repeat(self.alpha, self.dims)
        return np.concatenate([a, np.repeat(self.nu, self.m), np.repeat(self.sigma, self.m)])

    @property
    def phi(self) -> np.ndarray:
        return np.diag(self.phi_diag)

    def apply_inverse(self, v: ExtVector) -> ExtVector:
        """Phi^{-1} v."""
        return ExtVector(
            np.repeat(self.alpha, self.dims) * v.x,
            self.nu[:, None] * v.z,
            self.sigma[:, None] * v.lam,
        )


def build_phi(game: GameProblem, alpha, nu=None, sigma=None) -> StepMatrices:
    N = game.n_players
    alpha = np.broadcast_to(np.asarray(alpha, dtype=float), (N,)).copy()
    nu = alpha.copy() if nu is None else np.broadcast_to(np.asarray(nu, dtype=float), (N,)).copy()
    sigma = alpha.copy() if sigma is None else np.broadcast_to(np.asarray(sigma, dtype=float), (N,)).copy()
    for name, s in (("alpha", alpha), ("nu", nu), ("sigma", sigma)):
        if np.any(~np.isfinite(s)) or np.any(s <= 0):
            raise ValueError(f"step sizes {name} must be strictly positive, got {s}")
    steps = StepMatrices(alpha, nu, sigma, game.dims, game.m)
    return replace(steps, min_eig=float(steps.phi_diag.min()))


def extended_A_matrix(game: GameProblem) -> np.ndarray:
    """blockdiag(A_1, ..., A_N), shape (N m, n)."""
    if not game.coupling.is_affine:
        raise GameValidationError("preconditioning cannot be used for nonlinear coupling")
    N, m = game.n_players, game.m
    out = np.zeros((N * m, game.n))
    o = game.offsets
    for i, Ai in enumerate(game.coupling.A_blocks):
        out[i * m : (i + 1) * m, o[i] : o[i + 1]] = Ai
    return out


def build_psi(game: GameProblem, alpha, nu=None, sigma=None, dense_limit: int = 2000) -> StepMatrices:
    """Preconditioning matrix with off-diagonal blocks -A^T, -L (affine coupling only)."""
    steps = build_phi(game, alpha, nu, sigma)
    A = extended_A_matrix(game)
    L = laplacian(game.graph, game.m)
    n, Nm = game.n, game.n_players * game.m
    psi = np.diag(steps.phi_diag)
    psi[:n, n + Nm :] = -A.T
    psi[n : n + Nm, n + Nm :] = -L
    psi[n + Nm :, :n] = -A
    psi[n + Nm :, n : n + Nm] = -L
    return replace(steps, psi=psi, min_eig=min_eigenvalue(psi, dense_limit))


def min_eigenvalue(M: np.ndarray, dense_limit: int = 2000, iters: int = 5000) -> float:
    """Smallest eigenvalue of a symmetric matrix."""
    if M.shape[0] <= dense_limit:
        return float(np.linalg.eigvalsh(M)[0])
    # power iteration on (c I - M), c an upper bound on the spectrum
    c = float(np.max(np.sum(np.abs(M), axis=1)))
    v = np.random.default_rng(0).normal(size=M.shape[0])
    v /= np.linalg.norm(v)
    mu = 0.0
    for _ in range(iters):
        w = c * v - M @ v
        mu_new = float(v @ w)
        v = w / np.linalg.norm(w)
        if abs(mu_new - mu) <= 1e-12 * max(1.0, abs(mu_new)):
            mu = mu_new
            break
        mu = mu_new
    return c - mu


# --------------------------------------------------------------------------
# operators
# --------------------------------------------------------------------------


def pseudogradient_expected(game: GameProblem, x: np.ndarray, fallback_samples: int | None = None, seed: int = 0):
    """Exact expected pseudogradient, or a sample mean when explicitly allowed."""
    if game.grad_exact is not None:
        return game.exact_pseudogradient(x)
    if fallback_samples is None:
        raise GameValidationError(
            f"game {game.name!r} has no exact pseudogradient and no sampling fallback was requested"
        )
    rng = np.random.default_rng(seed)
    out = []
    for i in range(game.n_players):
        xi = game.noise_sampler(i, rng, fallback_samples)
        out.append(np.asarray(game.grad_sampler(i, x, xi)).mean(axis=0))
    return np.concatenate(out)


def _check_shapes(game: GameProblem, omega: ExtVector, F_value: np.ndarray) -> None:
    N, m = game.n_players, game.m
    if omega.x.shape != (game.n,) or np.shape(F_value) != (game.n,):
        raise GameValidationError("primal block has the wrong dimension")
    if omega.z.shape != (N, m) or omega.lam.shape != (N, m):
        raise GameValidationError("dual blocks must have shape (N, m)")


def extended_forward_A(game: GameProblem, omega: ExtVector, F_value: np.ndarray) -> ExtVector:
    """col(F + grad g^T lam, L lam, L lam - g - L z) with F supplied by the caller."""
    _check_shapes(game, omega, F_value)
    L = laplacian(game.graph)
    L_lam = L @ omega.lam
    return ExtVector(
        F_value + game.jac_transpose_times(omega.x, omega.lam),
        L_lam,
        L_lam - game.g_blocks(omega.x) - L @ omega.z,
    )


def extended_forward_C(game: GameProblem, omega: ExtVector, F_value: np.ndarray) -> ExtVector:
    """col(F, 0, L lam + b) for affine coupling."""
    if not game.coupling.is_affine:
        raise GameValidationError("preconditioning cannot be used for nonlinear coupling")
    _check_shapes(game, omega, F_value)
    L = laplacian(game.graph)
    b = np.stack(game.coupling.b_blocks) if game.m else np.zeros((game.n_players, 0))
    return ExtVector(np.array(F_value, dtype=float), np.zeros_like(omega.z), L @ omega.lam + b)


def skew_D_apply(game: GameProblem, omega: ExtVector) -> ExtVector:
    """Linear skew part of the cocoercive splitting: (A^T lam, L lam, -A x - L z)."""
    L = laplacian(game.graph)
    Ax = (extended_A_matrix(game) @ omega.x).reshape(game.n_players, game.m)
    return ExtVector(game.jac_transpose_times(omega.x, omega.lam), L @ omega.lam, -Ax - L @ omega.z)


def resolvent_B(game: GameProblem, steps: StepMatrices, v: ExtVector) -> ExtVector:
    """(Id + Phi^{-1} B)^{-1}: blockwise prox on x, identity on z, clip on lambda."""
    if v.x.shape != (game.n,) or v.z.shape != (game.n_players, game.m):
        raise GameValidationError("extended vector has the wrong dimension")
    return ExtVector(game.prox(v.x, steps.alpha), np.array(v.z, dtype=float), np.maximum(v.lam, 0.0))


def residual(game: GameProblem, x: np.ndarray, F_value: np.ndarray, local_projector=None) -> float:
    """Natural residual ||x - P(x - F)||; ``P`` defaults to the unit-step prox of f."""
    if local_projector is None:
        local_projector = lambda v: game.prox(v, 1.0)  # noqa: E731
    return float(np.linalg.norm(x - local_projector(x - F_value)))


def dual_augmented_residual(game: GameProblem, x: np.ndarray, lam: np.ndarray, F_value: np.ndarray) -> float:
    """||x - P(x - F - grad g^T lam)|| using each agent's own dual copy."""
    return residual(game, x, F_value + game.jac_transpose_times(x, lam))
