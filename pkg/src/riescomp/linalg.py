"""Symmetric-matrix functions via eigendecomposition.

expm/logm/sqrtm and friends are only ever needed for symmetric matrices
here, so everything is computed through ``numpy.linalg.eigh``. Eigenvalues
are clamped at ``EIG_FLOOR`` before log/sqrt/inverse to absorb round-off on
matrices that are positive definite in exact arithmetic.
"""

import numpy as np

EIG_FLOOR = 1e-14


def symmetrize(a: np.ndarray) -> np.ndarray:
    """Symmetric part (A + A^T)/2."""
    return 0.5 * (a + a.T)


def _apply_spectral(a: np.ndarray, fn, clamp: bool) -> np.ndarray:
    w, q = np.linalg.eigh(symmetrize(a))
    if clamp:
        w = np.maximum(w, EIG_FLOOR)
    return symmetrize((q * fn(w)) @ q.T)


def sym_expm(a: np.ndarray) -> np.ndarray:
    """Matrix exponential of a symmetric matrix."""
    return _apply_spectral(a, np.exp, clamp=False)


def sym_logm(a: np.ndarray) -> np.ndarray:
    """Matrix logarithm of a symmetric positive definite matrix."""
    return _apply_spectral(a, np.log, clamp=True)


def sym_sqrtm(a: np.ndarray) -> np.ndarray:
    """Principal square root of a symmetric positive semidefinite matrix."""
    return _apply_spectral(a, np.sqrt, clamp=True)


def sym_invsqrtm(a: np.ndarray) -> np.ndarray:
    """Inverse principal square root of a symmetric positive definite matrix."""
    return _apply_spectral(a, lambda w: 1.0 / np.sqrt(w), clamp=True)


def sym_sqrtm_and_invsqrtm(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Square root and inverse square root from one eigendecomposition."""
    w, q = np.linalg.eigh(symmetrize(a))
    w = np.maximum(w, EIG_FLOOR)
    s = np.sqrt(w)
    return symmetrize((q * s) @ q.T), symmetrize((q / s) @ q.T)


def min_eigval(a: np.ndarray) -> float:
    """Smallest eigenvalue of a symmetric matrix."""
    return float(np.linalg.eigvalsh(symmetrize(a))[0])
