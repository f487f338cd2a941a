"""Symmetric matrix function kernels, checked against spectral identities."""

import numpy as np
import pytest

from riescomp.linalg import (
    min_eigval,
    sym_expm,
    sym_logm,
    sym_invsqrtm,
    sym_sqrtm,
    sym_sqrtm_and_invsqrtm,
    symmetrize,
)


def random_spd(rng, d, floor=0.1):
    a = rng.standard_normal((d, d))
    return a @ a.T + floor * np.eye(d)


def test_expm_diagonal_is_entrywise_exp():
    x = np.diag([0.0, 1.0, -2.0])
    np.testing.assert_allclose(sym_expm(x), np.diag(np.exp([0.0, 1.0, -2.0])), rtol=1e-14)


def test_logm_inverts_expm():
    rng = np.random.default_rng(7)
    for _ in range(20):
        s = symmetrize(rng.standard_normal((4, 4)))
        x = sym_expm(s)
        np.testing.assert_allclose(sym_logm(x), s, rtol=1e-10, atol=1e-10)


def test_sqrtm_squares_back():
    rng = np.random.default_rng(8)
    for _ in range(20):
        x = random_spd(rng, 3)
        r = sym_sqrtm(x)
        np.testing.assert_allclose(r @ r, x, rtol=1e-10, atol=1e-12)


def test_invsqrtm_is_inverse_of_sqrtm():
    rng = np.random.default_rng(9)
    for _ in range(20):
        x = random_spd(rng, 3)
        s, si = sym_sqrtm_and_invsqrtm(x)
        np.testing.assert_allclose(s @ si, np.eye(3), atol=1e-10)
        np.testing.assert_allclose(si, sym_invsqrtm(x), rtol=1e-12, atol=1e-14)


def test_results_are_exactly_symmetric():
    rng = np.random.default_rng(10)
    x = random_spd(rng, 5)
    for f in (sym_expm, sym_logm, sym_sqrtm, sym_invsqrtm):
        y = f(x)
        assert np.array_equal(y, y.T)


def test_min_eigval_matches_numpy():
    rng = np.random.default_rng(11)
    x = random_spd(rng, 4)
    assert min_eigval(x) == pytest.approx(np.linalg.eigvalsh(x)[0], rel=1e-12)


def test_clamped_functions_tolerate_tiny_negative_eigenvalues():
    # round-off can push an eigenvalue slightly below zero; logm should not NaN
    x = np.diag([1.0, -1e-16])
    y = sym_logm(symmetrize(x))
    assert np.all(np.isfinite(y))
