"""Solver behavior: schedules, determinism, tracker algebra, collapse, abort."""

import logging

import numpy as np
import pytest

from riescomp.errors import ContractViolation, NumericalAbort
from riescomp.manifolds import Euclidean, ManifoldPoint, geodesic_distance, random_point
from riescomp.problems import (
    LevelConstants,
    ProblemConstants,
    two_level_as_multi,
)
from riescomp.rng import make_stream
from riescomp.solvers import (
    Schedule,
    level_sensitivity,
    rate_bound_constants,
    run_biased_rsgd,
    run_multi_level,
    run_two_level,
    schedule_manual,
    schedule_multi_level,
    schedule_two_level,
)
from riescomp.synthetic import (
    linear_chain_three_level,
    linear_quadratic,
    spd_rate_instance,
)
from riescomp.verify import lyapunov_trace


class TestSchedules:
    def test_two_level_coupling_exact_values(self):
        c = ProblemConstants(L_F=1, L_f=1, V_g=0, C_g=1, C_f=1)
        s = schedule_two_level(c, K=100)
        assert s.alpha == 0.1
        assert s.beta == 0.05
        assert s.gamma(0) == 0.95

    def test_two_level_beta_clamp_warns(self, caplog):
        c = ProblemConstants(L_F=1, L_f=1000, V_g=0, C_g=1, C_f=1)
        with caplog.at_level(logging.WARNING, logger="riescomp.solvers"):
            s = schedule_two_level(c, K=4)
        assert s.beta == 0.99
        assert any("clamping" in r.message for r in caplog.records)

    def test_two_level_zero_coupling_rejected(self):
        c = ProblemConstants(L_F=1, L_f=0, V_g=0, C_g=1, C_f=1)
        with pytest.raises(ContractViolation):
            schedule_two_level(c, K=10)

    def test_level_sensitivity_all_ones_three_levels(self):
        lcs = [LevelConstants(L=1, V=0, C=1)] * 3
        assert level_sensitivity(lcs) == [2.0, 1.0]

    def test_level_sensitivity_reduces_to_two_level_coupling(self):
        lcs = [LevelConstants(L=0.5, V=0, C=2.0), LevelConstants(L=3.0, V=0, C=4.0)]
        # single term: C_1 * L_2
        assert level_sensitivity(lcs) == [2.0 * 3.0]

    def test_level_sensitivity_hand_enumeration(self):
        # N=3 with distinct constants, expanded by hand:
        # A_1 = C1 C3 L2 + C1 C2 L2 L3, A_2 = C1 C2 L3
        c1, c2, c3 = 2.0, 3.0, 5.0
        l2, l3 = 7.0, 11.0
        lcs = [LevelConstants(L=1.0, V=0, C=c1), LevelConstants(L=l2, V=0, C=c2),
               LevelConstants(L=l3, V=0, C=c3)]
        a = level_sensitivity(lcs)
        assert a[0] == pytest.approx(c1 * c3 * l2 + c1 * c2 * l2 * l3)
        assert a[1] == pytest.approx(c1 * c2 * l3)

    def test_multi_level_schedule_and_clamp(self, caplog):
        lcs = [LevelConstants(L=1, V=0, C=1)] * 3
        s = schedule_multi_level(lcs, K=100)
        assert s.alpha == 0.1
        assert s.beta == pytest.approx(0.1 * 5.0 / 2.0)  # sum A_n^2 = 4 + 1
        assert s.gamma(0) == pytest.approx(1 - s.beta)
        with caplog.at_level(logging.WARNING, logger="riescomp.solvers"):
            s2 = schedule_multi_level(lcs, K=4)
        assert s2.beta == 0.5

    def test_manual_schedule_requires_gamma(self):
        with pytest.raises(ContractViolation):
            Schedule(kind="manual", alpha=0.1, beta=0.5, K=10)

    def test_t_sequence_shapes_gamma(self):
        c = ProblemConstants(L_F=1, L_f=1, V_g=0, C_g=1, C_f=1)
        s = schedule_two_level(c, K=100, t_sequence=lambda k: 2.0)
        assert s.gamma(7) == pytest.approx(1 - 2.0 * 0.05)

    def test_rate_bound_constants_formulas(self):
        s = schedule_manual(alpha=0.1, beta=0.2, gamma=0.8, K=10)
        c = ProblemConstants(L_F=2, L_f=1, V_g=0.5, C_g=1, C_f=3, t=1)
        rb = rate_bound_constants(s, c)
        assert rb.B0 == pytest.approx(2 * 0.8 ** 2 + 2 * 0.8 ** 2 + 0.0)
        assert rb.B1 == pytest.approx(0.5 * 2 * 9 + 0.25 + (2 + 24) * 9)


def test_run_is_deterministic_given_seed():
    inst = linear_quadratic(noise_std=0.3, seed=1)
    x0 = ManifoldPoint(inst.problem.domain, np.zeros(6))
    sched = schedule_two_level(inst.problem.constants, K=40)
    r1 = run_two_level(inst.problem, x0, sched, seed=42, timing=False)
    r2 = run_two_level(inst.problem, x0, sched, seed=42, timing=False)
    assert len(r1) == len(r2) == 40
    for a, b in zip(r1, r2):
        assert np.array_equal(a.x.coords, b.x.coords)
        assert a.grad_norm_sq == b.grad_norm_sq
        assert a.tracking_err_sq == b.tracking_err_sq
        assert a.wall_time_s == 0.0


def test_different_seeds_diverge():
    inst = linear_quadratic(noise_std=0.3, seed=1)
    x0 = ManifoldPoint(inst.problem.domain, np.zeros(6))
    sched = schedule_two_level(inst.problem.constants, K=10)
    r1 = run_two_level(inst.problem, x0, sched, seed=1)
    r2 = run_two_level(inst.problem, x0, sched, seed=2)
    assert not np.array_equal(r1[-1].x.coords, r2[-1].x.coords)


def test_first_step_gamma_term_vanishes():
    # with x_prev = x_curr the correction term must cancel exactly:
    # y^1 = (1-beta) y^0 + beta g_phi(x^0)
    inst = linear_quadratic(noise_std=0.5, seed=3)
    prob = inst.problem
    x0 = ManifoldPoint(prob.domain, np.ones(6))
    sched = schedule_manual(alpha=0.0, beta=0.3, gamma=0.9, K=1)
    y0 = np.zeros(8)
    recs = run_two_level(prob, x0, sched, seed=9, y0_policy=y0, metrics_every=1)
    # replay the phi draw from the same derived stream
    phi = prob.draw_phi(make_stream(9, 0, "phi"))
    g0 = inst.A @ x0.coords + inst.b + phi
    expected_y1 = (1 - 0.3) * y0 + 0.3 * g0
    expected_track = float(np.sum((expected_y1 - (inst.A @ x0.coords + inst.b)) ** 2))
    assert recs[0].tracking_err_sq == pytest.approx(expected_track, rel=1e-12)


def test_beta_one_gamma_zero_tracks_last_sample():
    inst = linear_quadratic(noise_std=0.4, seed=4)
    prob = inst.problem
    x0 = ManifoldPoint(prob.domain, np.zeros(6))
    sched = schedule_manual(alpha=0.0, beta=1.0, gamma=0.0, K=1)
    recs = run_two_level(prob, x0, sched, seed=5, y0_policy=np.zeros(8))
    phi = prob.draw_phi(make_stream(5, 0, "phi"))
    g0 = inst.A @ x0.coords + inst.b + phi
    # y^1 = g_phi(x^0), so tracking error is exactly the noise norm
    assert recs[0].tracking_err_sq == pytest.approx(float(phi @ phi), rel=1e-12)


def test_record_bookkeeping_and_oracle_counts():
    inst = linear_quadratic(noise_std=0.1, seed=6)
    x0 = ManifoldPoint(inst.problem.domain, np.zeros(6))
    sched = schedule_two_level(inst.problem.constants, K=25)
    recs = run_two_level(inst.problem, x0, sched, seed=0)
    assert len(recs) == 25
    assert [r.k for r in recs] == list(range(1, 26))
    last = recs[-1].oracle_calls
    assert last.inner_value == 1 + 2 * 25  # one y0 draw plus two per step
    assert last.inner_adjoint == 25
    assert last.outer_grad == 25


def test_metrics_every_still_records_final_step():
    inst = linear_quadratic(seed=6)
    x0 = ManifoldPoint(inst.problem.domain, np.zeros(6))
    sched = schedule_two_level(inst.problem.constants, K=25)
    recs = run_two_level(inst.problem, x0, sched, seed=0, metrics_every=10)
    assert [r.k for r in recs] == [10, 20, 25]


def test_zero_noise_tracker_stays_exact_and_lyapunov_descends():
    inst = linear_quadratic(n=5, m=5, noise_std=0.0, seed=8)
    prob = inst.problem
    x0 = ManifoldPoint(prob.domain, inst.x_star + 1.5)
    sched = schedule_two_level(prob.constants, K=300)
    recs = run_two_level(prob, x0, sched, seed=1, y0_policy="exact")
    assert max(r.tracking_err_sq for r in recs) <= 1e-20
    trace = lyapunov_trace(recs, f_star=0.0)
    diffs = np.diff(trace)
    assert np.all(diffs <= 1e-12)
    assert trace[-1] < trace[0]


def test_nonfinite_eta_aborts_with_partial_records():
    inst = linear_quadratic(noise_std=0.0, seed=2)
    prob = inst.problem
    calls = {"n": 0}
    orig = prob.sample_outer_grad

    def flaky(y, xi):
        calls["n"] += 1
        if calls["n"] >= 4:
            return np.full(8, np.nan)
        return orig(y, xi)

    prob.sample_outer_grad = flaky
    x0 = ManifoldPoint(prob.domain, np.zeros(6))
    sched = schedule_manual(alpha=0.1, beta=0.5, gamma=0.5, K=10)
    with pytest.raises(NumericalAbort) as exc:
        run_two_level(prob, x0, sched, seed=0, mc_samples=0)
    assert len(exc.value.records) == 3


def test_exact_y0_policy_requires_exact_oracle():
    inst = linear_quadratic(seed=2)
    inst.problem.exact_inner_value = None
    x0 = ManifoldPoint(inst.problem.domain, np.zeros(6))
    sched = schedule_manual(alpha=0.1, beta=0.5, gamma=0.5, K=2)
    with pytest.raises(ContractViolation):
        run_two_level(inst.problem, x0, sched, seed=0, y0_policy="exact")


def test_multi_level_collapse_matches_two_level_exactly():
    inst = linear_quadratic(noise_std=0.25, seed=10)
    prob = inst.problem
    multi = two_level_as_multi(prob)
    x0 = ManifoldPoint(prob.domain, np.zeros(6))
    sched = schedule_two_level(prob.constants, K=50)
    xs_two = []
    xs_multi = []
    run_two_level(prob, x0, sched, seed=21,
                  hooks=[lambda s, r: xs_two.append(r.x)])
    run_multi_level(multi, x0, sched, seed=21, stream_tags=("phi", "xi"),
                    hooks=[lambda s, r: xs_multi.append(r.x)])
    assert len(xs_two) == len(xs_multi) == 50
    for a, b in zip(xs_two, xs_multi):
        assert geodesic_distance(a, b) <= 1e-12


def test_three_level_chain_zero_noise_eta_equals_exact_gradient():
    inst = linear_chain_three_level(domain_kind="euclidean", noise_std=(0.0, 0.0, 0.0), seed=3)
    prob = inst.problem
    rng = np.random.default_rng(7)
    x0 = random_point(prob.domain, rng)
    alpha = 0.05
    sched = schedule_manual(alpha=alpha, beta=0.4, gamma=0.6, K=1)
    recs = run_multi_level(prob, x0, sched, seed=0, y0_policy="exact")
    # recover eta from the Euclidean update x1 = x0 - alpha * eta, then
    # compare against the hand-written chain rule (trackers stay exact when
    # noise is zero and y0 starts at the exact values)
    eta = (x0.coords - recs[0].x.coords) / alpha
    ybar2 = inst.W2 @ (inst.M1 @ x0.coords + inst.b1) + inst.c2
    grad = inst.M1.T @ (inst.W2.T @ (ybar2 - inst.z_star))
    np.testing.assert_allclose(eta, grad, rtol=1e-12, atol=1e-12)


def test_multi_level_record_count_and_trackers():
    inst = linear_chain_three_level(domain_kind="spd", noise_std=(0.1, 0.1, 0.05), seed=4)
    x0 = ManifoldPoint(inst.problem.domain, np.eye(2))
    sched = schedule_multi_level([l.constants for l in inst.problem.levels], K=30)
    recs = run_multi_level(inst.problem, x0, sched, seed=11)
    assert len(recs) == 30
    assert all(np.isfinite(r.grad_norm_sq) for r in recs)
    assert recs[-1].oracle_calls.inner_value == 1 + 2 * 30
    assert recs[-1].oracle_calls.mid_value == 1 + 2 * 30


def test_biased_rsgd_zero_noise_equals_full_correction_rscgd():
    inst = linear_quadratic(n=5, m=5, noise_std=0.0, seed=12)
    prob = inst.problem
    x0 = ManifoldPoint(prob.domain, np.zeros(5))
    alpha = 0.05
    recs_b = run_biased_rsgd(prob, x0, alpha=alpha, K=30, seed=3)
    sched = schedule_manual(alpha=alpha, beta=1.0, gamma=0.0, K=30)
    recs_t = run_two_level(prob, x0, sched, seed=3, y0_policy="exact")
    for a, b in zip(recs_b, recs_t):
        np.testing.assert_array_equal(a.x.coords, b.x.coords)


def test_biased_rsgd_oracle_counts():
    inst = linear_quadratic(noise_std=0.2, seed=13)
    x0 = ManifoldPoint(inst.problem.domain, np.zeros(6))
    recs = run_biased_rsgd(inst.problem, x0, alpha=0.05, K=20, seed=0)
    last = recs[-1].oracle_calls
    assert last.inner_value == 20
    assert last.inner_adjoint == 20


def test_frozen_x_tracking_mse_close_to_closed_form():
    # quick version of the stationary-variance check; the acceptance test
    # runs the full grid
    from riescomp.verify import stationary_tracking_mse

    inst = linear_quadratic(n=6, m=8, noise_std=0.3, seed=14)
    prob = inst.problem
    v_g_sq = prob.constants.V_g ** 2
    beta = 0.5
    x0 = ManifoldPoint(prob.domain, np.ones(6))
    sched = schedule_manual(alpha=0.0, beta=beta, gamma=0.5, K=3000)
    recs = run_two_level(prob, x0, sched, seed=7, y0_policy="exact")
    mse = float(np.mean([r.tracking_err_sq for r in recs[500:]]))
    exact, bound = stationary_tracking_mse(beta, v_g_sq)
    assert mse == pytest.approx(exact, rel=0.15)
    assert mse <= bound


def test_spd_instance_iterates_stay_on_manifold():
    prob = spd_rate_instance(noise_std=0.3)
    x0 = ManifoldPoint(prob.domain, 3.0 * np.eye(2))
    sched = schedule_two_level(prob.constants, K=200)
    recs = run_two_level(prob, x0, sched, seed=2)
    for r in recs[::20]:
        evals = np.linalg.eigvalsh(r.x.coords)
        assert evals[0] > 0
