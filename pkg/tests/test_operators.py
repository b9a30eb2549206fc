import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sgne.game import AffineCoupling, GameProblem, GameValidationError, MultiplierGraph, SeparableCoupling
from sgne.operators import (
    ExtVector,
    IterateState,
    build_phi,
    build_psi,
    dual_augmented_residual,
    extended_forward_A,
    extended_forward_C,
    min_eigenvalue,
    pseudogradient_expected,
    residual,
    resolvent_B,
    skew_D_apply,
)
from sgne.scenarios import build_cournot, build_illustrative, build_quadratic_kkt


def single_node_game(F=lambda x: x, box=None, b=1.0):
    """One player, one constraint g(x) = x - b, L = [0]."""
    lo, hi = box if box is not None else (-np.inf, np.inf)
    return GameProblem(
        dims=(1,),
        grad_sampler=lambda i, x, xi: np.tile(F(x), (len(xi), 1)),
        noise_sampler=lambda i, rng, size: np.zeros(size),
        prox_f=lambda i, v, step: np.clip(v, lo, hi),
        coupling=AffineCoupling([np.array([[1.0]])], [np.array([b])]),
        graph=MultiplierGraph(np.zeros((1, 1))),
        grad_exact=lambda i, x: F(x),
    )


def ext(x, z, lam, N=1, m=1):
    return ExtVector(np.atleast_1d(np.asarray(x, dtype=float)), np.asarray(z, dtype=float).reshape(N, m), np.asarray(lam, dtype=float).reshape(N, m))


# -- pseudogradient ---------------------------------------------------------


def test_pseudogradient_illustrative():
    g = build_illustrative()
    assert np.array_equal(pseudogradient_expected(g, np.array([1.0, 2.0])), [2.0, -1.0])


def test_pseudogradient_quadratic_zero():
    g, _ = build_quadratic_kkt()
    assert np.array_equal(pseudogradient_expected(g, np.array([1.0, 1.0])), [0.0, 0.0])


def test_pseudogradient_needs_fallback_without_exact():
    base = build_illustrative()
    g = GameProblem(base.dims, base.grad_sampler, base.noise_sampler, base.prox_f, base.coupling, base.graph)
    with pytest.raises(GameValidationError):
        pseudogradient_expected(g, np.ones(2))
    est = pseudogradient_expected(g, np.array([1.0, 2.0]), fallback_samples=10_000)
    assert np.allclose(est, [2.0, -1.0], atol=0.01)


def test_cournot_exact_matches_monte_carlo():
    g = build_cournot()
    rng = np.random.default_rng(3)
    x = g.project(rng.uniform(0, 1.5, size=g.n))
    exact = pseudogradient_expected(g, x)
    for i in range(g.n_players):
        draws = g.grad_sampler(i, x, g.noise_sampler(i, rng, 100_000))
        se = draws.std(axis=0, ddof=1) / np.sqrt(len(draws))
        assert np.all(np.abs(draws.mean(axis=0) - g.block(exact, i)) <= 3 * se + 1e-12)


# -- extended operators -------------------------------------------------------


def test_forward_A_hand_example():
    g = single_node_game()
    out = extended_forward_A(g, ext(2, 5, 3), np.array([2.0]))
    assert np.allclose(out.x, [5.0]) and np.allclose(out.z, [[0.0]]) and np.allclose(out.lam, [[-1.0]])


def test_forward_A_vanishing_couplings():
    g = single_node_game(b=2.0)
    out = extended_forward_A(g, ext(2, 0, 0), np.array([7.0]))
    assert np.allclose(out.flat(), [7.0, 0.0, 0.0])


def test_forward_A_rejects_bad_shapes():
    g = single_node_game()
    with pytest.raises(GameValidationError):
        extended_forward_A(g, ext([1, 2], 0, 0), np.array([1.0, 2.0]))


def test_forward_C_hand_example():
    g = single_node_game(b=1.0)
    out = extended_forward_C(g, ext(2, 5, 3), np.array([2.0]))
    assert np.allclose(out.flat(), [2.0, 0.0, 1.0])


def test_forward_C_zero():
    g = single_node_game(b=0.0)
    assert np.allclose(extended_forward_C(g, ext(4, 1, 0), np.array([4.0])).flat(), [4.0, 0.0, 0.0])


def test_forward_C_rejects_nonlinear_coupling():
    base = single_node_game()
    g = GameProblem(
        base.dims, base.grad_sampler, base.noise_sampler, base.prox_f,
        SeparableCoupling(1, lambda i, xi: xi**2, lambda i, xi: np.array([[2 * xi[0]]])),
        base.graph, base.grad_exact,
    )
    with pytest.raises(GameValidationError, match="nonlinear"):
        extended_forward_C(g, ext(1, 0, 0), np.array([1.0]))


def test_A_equals_C_plus_D_for_affine_games():
    g, _ = build_quadratic_kkt(n_players=3, seed=2)
    rng = np.random.default_rng(0)
    w = ext(rng.normal(size=3), rng.normal(size=3), rng.normal(size=3), N=3)
    F = g.exact_pseudogradient(w.x)
    lhs = extended_forward_A(g, w, F)
    rhs = extended_forward_C(g, w, F) + skew_D_apply(g, w)
    assert np.allclose(lhs.flat(), rhs.flat(), atol=1e-12)


def test_D_is_skew():
    g, _ = build_quadratic_kkt(n_players=4, seed=1)
    rng = np.random.default_rng(5)
    for _ in range(20):
        w = ext(rng.normal(size=4), rng.normal(size=4), rng.normal(size=4), N=4)
        assert abs(skew_D_apply(g, w).dot(w)) <= 1e-12 * (1 + w.norm() ** 2)


# -- resolvent ----------------------------------------------------------------


def test_resolvent_examples():
    g = single_node_game(box=(0.0, 1.0))
    steps = build_phi(g, 0.5)
    out = resolvent_B(g, steps, ext(1.7, 5.2, -0.3))
    assert out.x[0] == 1.0 and out.z[0, 0] == 5.2 and out.lam[0, 0] == 0.0


def _firm_excess(g, steps, u, v):
    pu, pv = resolvent_B(g, steps, u), resolvent_B(g, steps, v)
    lhs = (pu - pv).norm() ** 2
    rhs = (u - v).norm() ** 2 - ((u - pu) - (v - pv)).norm() ** 2
    return lhs - rhs


def test_resolvent_firmly_nonexpansive_cournot():
    g = build_cournot()
    steps = build_phi(g, 0.1)
    rng = np.random.default_rng(1)
    N, m = g.n_players, g.m
    for _ in range(1000):
        u = ExtVector(rng.normal(size=g.n), rng.normal(size=(N, m)), rng.normal(size=(N, m)))
        v = ExtVector(rng.normal(size=g.n), rng.normal(size=(N, m)), rng.normal(size=(N, m)))
        assert _firm_excess(g, steps, u, v) <= 1e-10


# -- step matrices ------------------------------------------------------------


def test_phi_half_steps():
    g, _ = build_quadratic_kkt()
    s = build_phi(g, 0.5, 0.5, 0.5)
    assert np.array_equal(s.phi, 2.0 * np.eye(g.n + 2 * g.n_players * g.m))


def test_phi_rejects_zero_step():
    g, _ = build_quadratic_kkt()
    with pytest.raises(ValueError):
        build_phi(g, [0.0, 0.1])


def test_psi_structure_and_definiteness():
    g, _ = build_quadratic_kkt(n_players=3, seed=0)
    s = build_psi(g, 0.2, 0.2, 0.2)
    P = s.psi
    assert np.array_equal(P, P.T)
    n, Nm = g.n, g.n_players * g.m
    A = np.zeros((Nm, n))
    for i, Ai in enumerate(g.coupling.A_blocks):
        A[i * g.m:(i + 1) * g.m, g.offsets[i]:g.offsets[i + 1]] = Ai
    assert np.array_equal(P[:n, n + Nm:], -A.T)
    assert s.min_eig > 0


def test_psi_rejects_nonlinear_coupling():
    base = single_node_game()
    g = GameProblem(
        base.dims, base.grad_sampler, base.noise_sampler, base.prox_f,
        SeparableCoupling(1, lambda i, xi: xi**2, lambda i, xi: np.array([[2 * xi[0]]])),
        base.graph, base.grad_exact,
    )
    with pytest.raises(GameValidationError):
        build_psi(g, 0.1, 0.1, 0.1)


def test_min_eigenvalue_power_iteration_matches_dense():
    rng = np.random.default_rng(0)
    M = rng.normal(size=(40, 40))
    M = M @ M.T + 0.5 * np.eye(40)
    dense = min_eigenvalue(M)
    iterative = min_eigenvalue(M, dense_limit=10, iters=20000)
    assert abs(dense - iterative) <= 1e-6 * np.abs(np.linalg.eigvalsh(M)).max()


# -- residual -----------------------------------------------------------------


def test_residual_examples():
    g = single_node_game(F=lambda x: x - 1)
    assert residual(g, np.array([0.0]), np.array([-1.0])) == 1.0
    gb = single_node_game(F=lambda x: x - 1, box=(0.0, 0.3))
    assert residual(gb, np.array([0.3]), np.array([0.3 - 1.0])) == 0.0


def test_residual_zero_at_kkt_point():
    g, ref = build_quadratic_kkt()
    F = g.exact_pseudogradient(ref.x)
    assert dual_augmented_residual(g, ref.x, ref.omega.lam, F) <= 1e-12


# -- monotonicity and state ----------------------------------------------------


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=25, deadline=None)
def test_forward_A_monotone_on_quadratic_games(seed):
    rng = np.random.default_rng(seed)
    g, _ = build_quadratic_kkt(n_players=int(rng.integers(2, 5)), seed=int(rng.integers(1000)))
    N = g.n_players
    w1 = ext(rng.normal(size=N), rng.normal(size=N), rng.normal(size=N), N=N)
    w2 = ext(rng.normal(size=N), rng.normal(size=N), rng.normal(size=N), N=N)
    a1 = extended_forward_A(g, w1, g.exact_pseudogradient(w1.x))
    a2 = extended_forward_A(g, w2, g.exact_pseudogradient(w2.x))
    assert (a1 - a2).dot(w1 - w2) >= -1e-10


def test_initial_state_clips_duals():
    g, _ = build_quadratic_kkt()
    s = IterateState.initial(g, lam0=[-1.0, 2.0])
    assert np.array_equal(s.lam, [[0.0], [2.0]])
    assert np.array_equal(s.lam_bar, s.lam)


def test_extvector_flat_roundtrip():
    v = ExtVector(np.arange(3.0), np.arange(4.0).reshape(2, 2), -np.arange(4.0).reshape(2, 2))
    w = ExtVector.unflat(v.flat(), 3, 2, 2)
    assert np.array_equal(w.flat(), v.flat())
