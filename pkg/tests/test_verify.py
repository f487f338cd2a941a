"""The verification oracles themselves, checked against closed forms."""

import numpy as np
import pytest

from riescomp.errors import ContractViolation
from riescomp.linalg import symmetrize
from riescomp.manifolds import (
    SPD,
    Euclidean,
    ManifoldPoint,
    Product,
    Sphere,
    egrad_to_rgrad,
    inner,
    random_point,
)
from riescomp.problems import composite_rgrad_exact
from riescomp.synthetic import finite_two_level_euclidean, finite_two_level_spd
from riescomp.verify import (
    enumerate_expectation,
    fd_rgrad,
    fit_rate,
    stationary_tracking_mse,
    tangent_basis,
)


@pytest.mark.parametrize("man", [Euclidean(5), Sphere(4), SPD(2), SPD(3),
                                 Product((Sphere(3), SPD(2)))], ids=repr)
def test_tangent_basis_is_orthonormal_and_complete(man):
    rng = np.random.default_rng(0)
    x = random_point(man, rng)
    basis = tangent_basis(x)
    assert len(basis) == man.intrinsic_dim
    gram = np.array([[inner(x, a, b) for b in basis] for a in basis])
    np.testing.assert_allclose(gram, np.eye(len(basis)), atol=1e-10)


def test_fd_rgrad_constant_function_is_zero():
    x = ManifoldPoint(SPD(2), np.eye(2))
    g = fd_rgrad(lambda p: 3.7, x)
    assert np.max(np.abs(g.coords)) <= 1e-12


def test_fd_rgrad_euclidean_quadratic():
    rng = np.random.default_rng(1)
    q = symmetrize(rng.standard_normal((5, 5)))
    man = Euclidean(5)
    x = random_point(man, rng)
    g = fd_rgrad(lambda p: 0.5 * float(p.coords @ q @ p.coords), x)
    np.testing.assert_allclose(g.coords, q @ x.coords, rtol=1e-6, atol=1e-8)


def test_fd_rgrad_spd_logdet():
    # grad of log det X under the affine-invariant metric is X itself:
    # euclidean gradient X^-1 converted through X (.) X
    rng = np.random.default_rng(2)
    man = SPD(2)
    for _ in range(5):
        x = random_point(man, rng)
        g = fd_rgrad(lambda p: float(np.linalg.slogdet(p.coords)[1]), x)
        np.testing.assert_allclose(g.coords, x.coords, rtol=1e-5, atol=1e-7)


def test_fd_rgrad_sphere_linear_functional():
    rng = np.random.default_rng(3)
    man = Sphere(4)
    a = rng.standard_normal(4)
    x = random_point(man, rng)
    g = fd_rgrad(lambda p: float(a @ p.coords), x)
    expected = egrad_to_rgrad(x, a)
    np.testing.assert_allclose(g.coords, expected.coords, rtol=1e-6, atol=1e-8)


def test_fd_rgrad_rejects_out_of_range_step():
    x = ManifoldPoint(Euclidean(2), np.zeros(2))
    with pytest.raises(ContractViolation):
        fd_rgrad(lambda p: 0.0, x, h=1e-2)


@pytest.mark.parametrize("factory,point", [
    (finite_two_level_euclidean, None),
    (finite_two_level_spd, np.array([[2.0, 0.5], [0.5, 1.5]])),
])
def test_enumeration_unbiased_and_matches_chain_rule(factory, point):
    prob = factory()
    rng = np.random.default_rng(4)
    x = (random_point(prob.domain, rng) if point is None
         else ManifoldPoint(prob.domain, point))
    mean_g, mean_eta = enumerate_expectation(prob, x)
    exact_g = np.asarray(prob.exact_inner_value(x), dtype=float)
    np.testing.assert_allclose(mean_g, exact_g, atol=1e-12)
    exact_grad = composite_rgrad_exact(prob, x)
    assert np.max(np.abs(mean_eta.coords - exact_grad.coords)) <= 1e-10


def test_enumeration_single_outcome_equals_sample():
    prob = finite_two_level_euclidean(n_phi=2, n_xi=2, seed=8)
    prob.phi_support = prob.phi_support[:1]
    prob.xi_support = prob.xi_support[:1]
    x = ManifoldPoint(prob.domain, np.zeros(4))
    mean_g, _ = enumerate_expectation(prob, x)
    only = np.asarray(prob.sample_inner_value(x, prob.phi_support[0]), dtype=float)
    np.testing.assert_array_equal(mean_g, only)


def test_enumeration_requires_finite_support():
    from riescomp.synthetic import linear_quadratic
    inst = linear_quadratic()
    x = ManifoldPoint(inst.problem.domain, np.zeros(6))
    with pytest.raises(ContractViolation):
        enumerate_expectation(inst.problem, x)


class TestStationaryTrackingMse:
    def test_beta_half_is_third_of_variance(self):
        exact, bound = stationary_tracking_mse(0.5, 3.0)
        assert exact == pytest.approx(1.0)
        assert bound == pytest.approx(3.0)

    def test_beta_near_one_approaches_full_variance(self):
        exact, _ = stationary_tracking_mse(1 - 1e-12, 2.0)
        assert exact == pytest.approx(2.0, rel=1e-9)

    def test_exact_below_bound(self):
        for beta in (0.02, 0.1, 0.5, 0.9):
            exact, bound = stationary_tracking_mse(beta, 1.0)
            assert exact < bound

    def test_matches_direct_ar1_simulation(self):
        # independent simulation of e_{k+1} = (1-b) e_k + b * noise
        beta, sigma, n = 0.2, 1.3, 100_000
        rng = np.random.default_rng(5)
        e = 0.0
        acc = 0.0
        for _ in range(n):
            e = (1 - beta) * e + beta * rng.normal(0.0, sigma)
            acc += e * e
        exact, _ = stationary_tracking_mse(beta, sigma ** 2)
        assert acc / n == pytest.approx(exact, rel=0.05)

    def test_rejects_bad_beta(self):
        with pytest.raises(ContractViolation):
            stationary_tracking_mse(0.0, 1.0)
        with pytest.raises(ContractViolation):
            stationary_tracking_mse(1.0, 1.0)


class TestFitRate:
    def test_recovers_exact_power_law(self):
        data = {k: [2.5 * k ** -0.5] * 5 for k in (100, 1000, 10_000)}
        fit = fit_rate(data)
        assert fit.slope == pytest.approx(-0.5, abs=1e-12)
        assert fit.intercept == pytest.approx(np.log(2.5), abs=1e-12)
        assert fit.r_squared == pytest.approx(1.0, abs=1e-12)

    def test_constant_data_has_zero_slope(self):
        data = {k: [4.0] * 5 for k in (10, 100, 1000)}
        assert fit_rate(data).slope == pytest.approx(0.0, abs=1e-12)

    def test_needs_three_horizons(self):
        with pytest.raises(ContractViolation):
            fit_rate({10: [1.0] * 5, 100: [0.5] * 5})

    def test_needs_five_seeds(self):
        with pytest.raises(ContractViolation):
            fit_rate({10: [1.0] * 3, 100: [1.0] * 5, 1000: [1.0] * 5})

    def test_rejects_nonpositive_metric(self):
        with pytest.raises(ContractViolation):
            fit_rate({10: [0.0] * 5, 100: [1.0] * 5, 1000: [1.0] * 5})
