"""Independent verification oracles.

Everything here recomputes a quantity the library produces elsewhere through
a different route: finite differences instead of analytic adjoints, full
enumeration instead of sampling, closed-form AR(1) variance instead of
simulation, and a log-log regression for empirical convergence rates. Tests
compare the two routes; the solvers never call into this module.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ContractViolation, NumericalDomainError
from .manifolds import ManifoldPoint, TangentVector, exp_map, inner, scale
from .problems import TwoLevelProblem, stochastic_eta

log = logging.getLogger(__name__)

GRAM_WARN_TOL = 1e-8


def tangent_basis(x: ManifoldPoint) -> list[TangentVector]:
    """Orthonormal basis of T_x under the Riemannian metric.

    Projects the ambient coordinate basis, then runs modified Gram-Schmidt
    (twice; the second pass scrubs the round-off of the first). Warns if the
    resulting Gram matrix deviates from the identity by more than 1e-8.
    """
    man = x.manifold
    candidates = []
    for i in range(man.ambient_dim):
        e = np.zeros(man.ambient_dim)
        e[i] = 1.0
        candidates.append(man.project(x.coords, e))
    basis: list[np.ndarray] = []
    for c in candidates:
        v = c.copy()
        for _ in range(2):  # re-orthogonalize against earlier vectors
            for b in basis:
                v = v - man.inner(x.coords, b, v) * b
        nrm = np.sqrt(man.inner(x.coords, v, v))
        if nrm > 1e-10:
            basis.append(v / nrm)
    if len(basis) != man.intrinsic_dim:
        raise ContractViolation(
            f"tangent basis has {len(basis)} vectors, expected {man.intrinsic_dim}"
        )
    gram = np.array([[man.inner(x.coords, a, b) for b in basis] for a in basis])
    dev = float(np.max(np.abs(gram - np.eye(len(basis)))))
    if dev > GRAM_WARN_TOL:
        warnings.warn(f"tangent basis Gram deviation {dev:g} exceeds {GRAM_WARN_TOL:g}")
    return [TangentVector(x, b) for b in basis]


def fd_rgrad(fn: Callable[[ManifoldPoint], float], x: ManifoldPoint, h: float = 1e-5) -> TangentVector:
    """Central-difference Riemannian gradient of a scalar function.

    Differences fn along exp_map(x, +-h b_i) over an orthonormal tangent
    basis; exact geodesics make this a genuine directional derivative on the
    manifold rather than an ambient approximation.
    """
    if not (1e-7 <= h <= 1e-3):
        raise ContractViolation(f"step h must lie in [1e-7, 1e-3], got {h!r}")
    basis = tangent_basis(x)
    coeffs = []
    for b in basis:
        f_plus = float(fn(exp_map(x, scale(b, h))))
        f_minus = float(fn(exp_map(x, scale(b, -h))))
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NumericalDomainError("non-finite function value in finite differencing")
        coeffs.append((f_plus - f_minus) / (2.0 * h))
    total = np.zeros(x.manifold.shape)
    for c, b in zip(coeffs, basis):
        total = total + c * b.coords
    return TangentVector(x, total)


def _support_weights(support: Sequence, weights: Optional[Sequence[float]]) -> np.ndarray:
    if weights is None:
        return np.full(len(support), 1.0 / len(support))
    w = np.asarray(weights, dtype=float)
    if len(w) != len(support) or abs(w.sum() - 1.0) > 1e-12 or np.any(w < 0):
        raise ContractViolation("weights must be a probability vector matching the support")
    return w


def enumerate_expectation(problem: TwoLevelProblem, x: ManifoldPoint,
                          y_tracked: Optional[np.ndarray] = None,
                          max_outcomes: int = 10_000) -> tuple[np.ndarray, TangentVector]:
    """Exact E[g_phi(x)] and E[eta] by brute force over the finite supports.

    ``y_tracked`` defaults to the enumerated mean of g (the chain-rule
    cross-check evaluates the estimator at y = E[g(x)]). The double sum runs
    over the product of the phi and xi supports, using independence.
    """
    if not problem.has_finite_support():
        raise ContractViolation("problem does not declare finite sample supports")
    phi_w = _support_weights(problem.phi_support, problem.phi_weights)
    xi_w = _support_weights(problem.xi_support, problem.xi_weights)
    joint = len(problem.phi_support) * len(problem.xi_support)
    if joint > max_outcomes:
        raise ContractViolation(f"joint support has {joint} outcomes (max {max_outcomes})")
    mean_g = None
    for phi, w in zip(problem.phi_support, phi_w):
        val = np.asarray(problem.sample_inner_value(x, phi), dtype=float)
        if not np.all(np.isfinite(val)):
            raise NumericalDomainError("non-finite inner value during enumeration")
        mean_g = w * val if mean_g is None else mean_g + w * val
    if y_tracked is None:
        y_tracked = mean_g
    mean_eta = np.zeros(x.manifold.shape)
    for phi, wp in zip(problem.phi_support, phi_w):
        for xi, wx in zip(problem.xi_support, xi_w):
            eta = stochastic_eta(problem, x, y_tracked, phi, xi)
            if not np.all(np.isfinite(eta.coords)):
                raise NumericalDomainError("non-finite eta during enumeration")
            mean_eta = mean_eta + (wp * wx) * eta.coords
    return mean_g, TangentVector(x, mean_eta)


def stationary_tracking_mse(beta: float, v_g_sq: float) -> tuple[float, float]:
    """Stationary mean squared tracking error of a frozen-point tracker.

    With x frozen the tracker is the AR(1) recursion
    e_{k+1} = (1-beta) e_k + beta (g_phi - E g), so the stationary MSE is
    beta/(2-beta) * V_g^2 exactly. Returns (exact value, 2*beta*V_g^2), the
    second being the looser bound the convergence analysis uses.
    """
    if not (0 < beta < 1):
        raise ContractViolation(f"beta must be in (0,1), got {beta!r}")
    if v_g_sq < 0:
        raise ContractViolation("variance must be >= 0")
    exact = beta / (2.0 - beta) * v_g_sq
    bound = 2.0 * beta * v_g_sq
    return exact, bound


def lyapunov_trace(records: Sequence, f_star: float) -> list[float]:
    """Per-record Lyapunov values: objective - f_star + tracking term."""
    out = []
    for rec in records:
        if np.isnan(rec.objective) or np.isnan(rec.tracking_err_sq):
            raise ContractViolation(
                "records lack exact objective/tracking metrics needed for the Lyapunov trace"
            )
        out.append(rec.objective - f_star + rec.tracking_err_sq)
    return out


@dataclass(frozen=True)
class RateFit:
    """Least-squares fit of log(metric) against log(K)."""

    K_values: tuple[int, ...]
    metric_values: tuple[float, ...]
    slope: float
    intercept: float
    r_squared: float


def fit_rate(metric_by_K: dict[int, Sequence[float]], min_horizons: int = 3,
             min_seeds: int = 5) -> RateFit:
    """Fit the empirical convergence order from per-seed metric values.

    ``metric_by_K`` maps horizon K to the per-seed values of the metric
    (mean squared gradient norm over the run). Values are seed-averaged,
    then regressed on log K.
    """
    ks = sorted(metric_by_K)
    if len(ks) < min_horizons:
        raise ContractViolation(f"need >= {min_horizons} horizons, got {len(ks)}")
    means = []
    for k in ks:
        vals = np.asarray(metric_by_K[k], dtype=float)
        if vals.size < min_seeds:
            raise ContractViolation(f"horizon {k} has {vals.size} seeds, need >= {min_seeds}")
        if np.any(~np.isfinite(vals)) or np.any(vals <= 0):
            raise ContractViolation("metric values must be finite and positive for a log fit")
        means.append(float(vals.mean()))
    logk = np.log(np.asarray(ks, dtype=float))
    logm = np.log(np.asarray(means))
    slope, intercept = np.polyfit(logk, logm, 1)
    pred = slope * logk + intercept
    ss_res = float(np.sum((logm - pred) ** 2))
    ss_tot = float(np.sum((logm - logm.mean()) ** 2))
    r_sq = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    return RateFit(
        K_values=tuple(int(k) for k in ks),
        metric_values=tuple(means),
        slope=float(slope),
        intercept=float(intercept),
        r_squared=r_sq,
    )


def mean_sq_grad(records: Sequence) -> float:
    """Mean of grad_norm_sq over a run's records."""
    vals = np.asarray([rec.grad_norm_sq for rec in records], dtype=float)
    if vals.size == 0 or np.any(~np.isfinite(vals)):
        raise ContractViolation("records lack finite gradient norms")
    return float(vals.mean())
