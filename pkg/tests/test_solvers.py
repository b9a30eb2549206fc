import dataclasses
from types import SimpleNamespace

import numpy as np
import pytest

from sgne.game import AffineCoupling, GameProblem, MultiplierGraph, SeparableCoupling
from sgne.operators import IterateState
from sgne.oracle import BatchSchedule, OracleCounters, RngStreams
from sgne.scenarios import build_cournot, build_illustrative, build_quadratic_kkt
from sgne.solvers import (
    SIGNATURES,
    ConfigError,
    OracleConfig,
    SolverConfig,
    SolverError,
    SolverKind,
    baseline_step,
    probe_diverges,
    run,
    srfb_gnep_step,
    srfb_nep_step,
    srfb_projection_step,
    srpfb_step,
    validate_config,
)
from sgne.tuning import StepConfig, Vanishing


def one_agent(box=None, A=None, b=0.0):
    lo, hi = box if box is not None else (-np.inf, np.inf)
    clip = lambda i, v: np.clip(v, lo, hi)
    coupling = AffineCoupling([np.array([[A]])], [np.array([b])]) if A is not None else AffineCoupling.empty((1,))
    return GameProblem(
        dims=(1,),
        grad_sampler=lambda i, x, xi: np.tile(x, (len(xi), 1)),
        noise_sampler=lambda i, rng, size: np.zeros(size),
        prox_f=lambda i, v, step: clip(i, v),
        coupling=coupling,
        graph=MultiplierGraph(np.zeros((1, 1))),
        grad_exact=lambda i, x: x.copy(),
        projector=clip,
        x0=np.array([1.0]),
    )


def _step(fn, game, cfg, state=None, k=0):
    state = IterateState.initial(game) if state is None else state
    return fn(game, state, cfg, k, RngStreams(0), OracleCounters(), cfg.steps.matrices(game))


def test_srfb_hand_step_unconstrained():
    g = one_agent()
    cfg = SolverConfig("srfb", StepConfig.uniform(1, 0.1, 0.7))
    new = _step(srfb_gnep_step, g, cfg)
    assert new.x_bar[0] == pytest.approx(1.0)
    assert new.x[0] == pytest.approx(0.9)


def test_srpfb_hand_step():
    g = one_agent(box=(0.0, 1.0), A=1.0, b=0.5)
    cfg = SolverConfig("srpfb", StepConfig.uniform(1, 0.1, 0.7))
    new = _step(srpfb_step, g, cfg)
    assert new.x[0] == pytest.approx(0.9)
    assert new.z[0, 0] == 0.0
    assert new.lam[0, 0] == pytest.approx(0.03)


def test_srpfb_dual_sign_toggle():
    g = one_agent(box=(-5.0, 5.0), A=1.0, b=0.5)
    st = IterateState.initial(g, lam0=[1.0])
    plus = _step(srpfb_step, g, SolverConfig("srpfb", StepConfig.uniform(1, 0.1, 0.7)), st)
    printed = _step(srpfb_step, g, SolverConfig("srpfb", StepConfig.uniform(1, 0.1, 0.7), dual_sign=-1), st)
    assert plus.x[0] == pytest.approx(1.0 - 0.1 * (1.0 + 1.0))
    assert printed.x[0] == pytest.approx(1.0 - 0.1 * (1.0 - 1.0))


def test_delta_one_freezes_average():
    g, _ = build_quadratic_kkt()
    rec = run(g, SolverConfig("srfb", StepConfig.uniform(2, 0.2, 1.0), max_iters=20), keep_history=True)
    x_bar0 = rec.history[0].x_bar
    assert all(np.array_equal(s.x_bar, x_bar0) for s in rec.history)
    assert rec.identity_violation is None


def test_projection_variant_matches_prox_variant_on_boxes():
    g = build_cournot()
    steps = StepConfig.uniform(g.n_players, 1e-5, 0.7, ratios=(1.0, 1e6, 1e6))
    sched = OracleConfig("saa", BatchSchedule(cap=8))
    a = run(g, SolverConfig("srfb", steps, sched, max_iters=30, seed=4))
    b = run(g, SolverConfig("srfb_proj", steps, sched, max_iters=30, seed=4))
    assert np.array_equal(a.final_state.x, b.final_state.x)
    assert np.array_equal(a.final_state.lam, b.final_state.lam)
    assert a.to_csv() == b.to_csv()


def test_projection_variant_needs_projector():
    base = one_agent()
    g = dataclasses.replace(base, projector=None)
    assert validate_config(g, SolverConfig("srfb_proj", StepConfig.uniform(1, 0.1, 0.7)))


def test_projection_step_clips_to_box():
    g = one_agent(box=(0.0, 1.0))
    g = dataclasses.replace(g, grad_sampler=lambda i, x, xi: np.full((len(xi), 1), -7.0))
    cfg = SolverConfig("srfb_proj", StepConfig.uniform(1, 0.1, 0.7))
    # pre-projection point 1 + 0.1 * 7 = 1.7
    new = _step(srfb_projection_step, g, cfg)
    assert new.x[0] == 1.0


def _nep_cfg(delta=0.5, vanishing=None, alpha=0.1):
    st = StepConfig.uniform(1, alpha, delta, vanishing=vanishing)
    return SolverConfig("srfb_nep", st, OracleConfig("sa"))


def test_nep_zero_step_projects_average():
    g = one_agent(box=(0.0, 0.5))
    cfg = _nep_cfg(vanishing=SimpleNamespace(step=lambda k: 0.0))
    st = dataclasses.replace(IterateState.initial(g), x=np.array([1.0]), x_bar=np.array([0.0]))
    new = _step(srfb_nep_step, g, cfg, st)
    assert new.x_bar[0] == pytest.approx(0.5)
    assert new.x[0] == pytest.approx(0.5)


def test_nep_fixed_step_contracts_monotonically():
    g = one_agent()
    cfg = _nep_cfg(delta=0.5, alpha=0.1)
    st = IterateState.initial(g)
    mags = [1.0]
    for k in range(50):
        st = _step(srfb_nep_step, g, cfg, st, k)
        mags.append(abs(st.x[0]))
    assert all(b < a for a, b in zip(mags, mags[1:]))


def test_nep_rejects_coupled_games_and_missing_rule():
    g, _ = build_quadratic_kkt()
    cfg = SolverConfig("srfb_nep", StepConfig.uniform(2, 0.1, 0.5, vanishing=Vanishing(1.0)), OracleConfig("sa"))
    with pytest.raises(ConfigError, match="m = 0"):
        run(g, cfg)
    ill = build_illustrative()
    assert validate_config(ill, SolverConfig("srfb_nep", StepConfig.uniform(2, 0.1, 0.5), OracleConfig("sa")))
    assert validate_config(ill, SolverConfig("srfb_nep", StepConfig.uniform(2, 0.1, 0.9999, vanishing=Vanishing(1.0)))) == []
    assert validate_config(ill, SolverConfig("srfb_nep", StepConfig.uniform(2, 0.1, 1.0, vanishing=Vanishing(1.0))))


def test_config_validation_messages():
    g, _ = build_quadratic_kkt()
    assert validate_config(g, SolverConfig("srfb", StepConfig.uniform(2, 0.1, 0.5)))
    assert validate_config(g, SolverConfig("srfb", StepConfig.uniform(3, 0.1, 0.7)))
    bad = StepConfig(0.7, np.array([0.1, 0.0]), np.full(2, 0.1), np.full(2, 0.1))
    assert validate_config(g, SolverConfig("srfb", bad))
    with pytest.raises(ConfigError):
        SolverConfig("srfb", StepConfig.uniform(2, 0.1, 0.7), dual_sign=0)
    with pytest.raises(ConfigError):
        OracleConfig("mc")
    with pytest.raises(ValueError):
        SolverConfig("sse", StepConfig.uniform(2, 0.1, 0.7))


def test_srpfb_rejects_nonlinear_coupling():
    base = one_agent()
    g = dataclasses.replace(
        base, coupling=SeparableCoupling(1, lambda i, xi: xi**2, lambda i, xi: np.array([[2 * xi[0]]]))
    )
    for kind in ("srpfb", "spfb"):
        assert any("affine" in p for p in validate_config(g, SolverConfig(kind, StepConfig.uniform(1, 0.1, 0.7))))


def test_baseline_step_rejects_relaxed_kinds():
    g, _ = build_quadratic_kkt()
    cfg = SolverConfig("srfb", StepConfig.uniform(2, 0.1, 0.7))
    with pytest.raises(SolverError):
        baseline_step("srfb", g, IterateState.initial(g), cfg, 0, RngStreams(0), OracleCounters(), cfg.steps.matrices(g))


@pytest.mark.parametrize("kind", [k.value for k in SolverKind if k != SolverKind.SRFB_NEP])
def test_hundred_iteration_counters(kind):
    g, _ = build_quadratic_kkt(noise_std=0.1)
    rec = run(g, SolverConfig(kind, StepConfig.uniform(2, 0.1, 0.7), max_iters=100))
    p, f = SIGNATURES[SolverKind(kind)]
    assert (rec.last.prox_calls, rec.last.f_hat_calls) == (100 * p, 100 * f)


@pytest.mark.parametrize("kind", ["srfb", "srfb_proj", "srpfb", "spfb", "sfbf", "seg", "sprg"])
def test_zero_noise_convergence_to_kkt_solution(kind):
    g, ref = build_quadratic_kkt()
    rec = run(g, SolverConfig(kind, StepConfig.uniform(2, 0.2, 0.7), max_iters=10_000, tol_res=1e-10))
    assert rec.status == "converged"
    st = rec.final_state
    assert np.linalg.norm(st.x - ref.x) <= 1e-4
    assert np.abs(st.lam - ref.omega.lam).max() <= 1e-4
    dist = rec.column("dist_to_ref")
    assert dist[-1] < dist[0]


def test_max_iters_zero_gives_initial_row():
    g, _ = build_quadratic_kkt()
    rec = run(g, SolverConfig("srfb", StepConfig.uniform(2, 0.1, 0.7), max_iters=0))
    assert len(rec.rows) == 1 and rec.rows[0].k == 0
    assert rec.status == "budget" and rec.last.prox_calls == 0


def test_stop_tolerance():
    g, _ = build_quadratic_kkt(n_players=3, seed=5)
    rec = run(g, SolverConfig("srfb", StepConfig.uniform(3, 0.1, 0.7), max_iters=20_000, tol_res=1e-6))
    assert rec.status == "converged" and rec.last.residual <= 1e-6


def test_oversized_steps_flag_divergence():
    g = build_illustrative()
    rec = run(g, SolverConfig("srfb", StepConfig.uniform(2, 50.0, 0.7), max_iters=500))
    assert rec.diverged and rec.diverged_at is not None
    assert len(rec.rows) == rec.diverged_at + 1
    assert probe_diverges(g, SolverConfig("srfb", StepConfig.uniform(2, 1.0, 0.7)), 50.0, 200, 0)


def test_fixed_point_is_preserved():
    g, ref = build_quadratic_kkt()
    st = IterateState.from_omega(ref.omega)
    for kind in ("srfb", "srpfb", "sfbf", "seg", "sprg"):
        cfg = SolverConfig(kind, StepConfig.uniform(2, 0.2, 0.7), max_iters=5)
        rec = run(g, cfg, state0=st)
        assert np.allclose(rec.final_state.x, ref.x, atol=1e-12)
        assert np.allclose(rec.final_state.lam, ref.omega.lam, atol=1e-12)


def test_same_seed_same_trajectory():
    g, _ = build_quadratic_kkt(noise_std=0.3)
    cfg = SolverConfig("srfb", StepConfig.uniform(2, 0.2, 0.7), max_iters=40, seed=9)
    assert run(g, cfg).to_csv() == run(g, cfg).to_csv()
    other = dataclasses.replace(cfg, seed=10)
    assert run(g, cfg).to_csv() != run(g, other).to_csv()


def test_sink_receives_every_row():
    g, _ = build_quadratic_kkt()
    seen = []
    rec = run(g, SolverConfig("srfb", StepConfig.uniform(2, 0.1, 0.7), max_iters=7), sink=seen.append)
    assert seen == rec.rows


def test_nep_reference_step_rule_reaches_tolerance():
    # Literal example: 1/(k+10), delta 0.5, fixed seed, 1e5 iterations.
    # The rotation field is not paramonotone and sum(gamma^2) is finite,
    # so the contraction stalls near |x| = 1.4 and this stays red.
    g = build_illustrative()
    cfg = SolverConfig(
        "srfb_nep",
        StepConfig.uniform(2, 1.0, 0.5, vanishing=Vanishing(1.0, 1.0, offset=10.0)),
        OracleConfig("sa"),
        max_iters=100_000,
        tol_res=1e-2,
        seed=0,
    )
    rec = run(g, cfg)
    assert float(np.min(rec.column("dist_to_ref"))) <= 1e-2
