"""Synthetic problem fixtures with closed-form ground truth.

These are the instances the verification and rate tests run against: linear
inner maps and quadratic outer functions, so the composite gradient, the
minimum value, and all smoothness constants are known exactly. Sample spaces
are either Gaussian (for rate/tracking runs) or small finite sets (for exact
enumeration).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ContractViolation
from .linalg import symmetrize
from .manifolds import SPD, Euclidean, ManifoldPoint, TangentVector, egrad_to_rgrad
from .problems import (
    Level,
    LevelConstants,
    MultiLevelProblem,
    ProblemConstants,
    TwoLevelProblem,
)


def _orthogonal(rng: np.random.Generator, n: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def _matrix_with_spectrum(rng: np.random.Generator, m: int, n: int,
                          smin: float, smax: float) -> np.ndarray:
    k = min(m, n)
    svals = np.linspace(smin, smax, k)
    u = _orthogonal(rng, m)[:, :k]
    v = _orthogonal(rng, n)[:, :k]
    return u @ np.diag(svals) @ v.T


@dataclass
class LinearQuadraticInstance:
    """g_phi(x) = A x + b + phi, f(y) = 0.5 ||y - c||^2, minimum value 0."""

    problem: TwoLevelProblem
    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    x_star: np.ndarray
    noise_std: float

    @property
    def smoothness(self) -> float:
        # largest eigenvalue of A^T A; gradient descent is stable for
        # alpha < 2 / smoothness
        return float(np.linalg.norm(self.A, 2) ** 2)


def linear_quadratic(n: int = 6, m: int = 8, noise_std: float = 0.1, seed: int = 0,
                     smin: float = 0.5, smax: float = 1.5) -> LinearQuadraticInstance:
    """Euclidean fixture with additive Gaussian inner noise of known variance.

    The total inner-value variance is m * noise_std^2, so V_g = noise_std *
    sqrt(m). The outer function is deterministic.
    """
    if m < n:
        raise ContractViolation("need m >= n so the minimum value is exactly 0")
    rng = np.random.default_rng(seed)
    A = _matrix_with_spectrum(rng, m, n, smin, smax)
    b = rng.standard_normal(m)
    x_star = rng.standard_normal(n)
    c = A @ x_star + b
    domain = Euclidean(n)
    codomain = Euclidean(m)

    def sample_inner_value(x: ManifoldPoint, phi):
        return A @ x.coords + b + phi

    def sample_inner_adjoint(x: ManifoldPoint, phi, u):
        return TangentVector(x, A.T @ np.asarray(u, dtype=float))

    def sample_outer_grad(y, xi):
        return np.asarray(y, dtype=float) - c

    def sample_outer_value(y, xi):
        d = np.asarray(y, dtype=float) - c
        return 0.5 * float(d @ d)

    constants = ProblemConstants(
        L_F=smax ** 2,
        L_f=1.0,
        V_g=noise_std * np.sqrt(m),
        C_g=smax,
        C_f=10.0,  # local bound on ||y - c|| over the region runs visit
        t=1.0,
    )
    problem = TwoLevelProblem(
        domain=domain,
        inner_codomain=codomain,
        sample_inner_value=sample_inner_value,
        sample_inner_adjoint=sample_inner_adjoint,
        sample_outer_grad=sample_outer_grad,
        sample_outer_value=sample_outer_value,
        draw_phi=(lambda rng_: rng_.standard_normal(m) * noise_std),
        draw_xi=(lambda rng_: None),
        constants=constants,
        exact_inner_value=(lambda x: A @ x.coords + b),
        exact_inner_adjoint=(lambda x, u: TangentVector(x, A.T @ np.asarray(u, dtype=float))),
        exact_outer_grad=(lambda y: np.asarray(y, dtype=float) - c),
        exact_outer_value=(lambda y: 0.5 * float(np.sum((np.asarray(y, dtype=float) - c) ** 2))),
        name="linear-quadratic",
    )
    return LinearQuadraticInstance(problem=problem, A=A, b=b, c=c, x_star=x_star,
                                   noise_std=noise_std)


def _centered_set(rng: np.random.Generator, count: int, dim: int, scale: float) -> list[np.ndarray]:
    """count vectors (count even) that sum to zero: pairs (v, -v)."""
    if count % 2 != 0:
        raise ContractViolation("finite supports here are sign-symmetric; count must be even")
    half = [rng.standard_normal(dim) * scale for _ in range(count // 2)]
    return half + [-v for v in half]


def finite_two_level_euclidean(n: int = 4, m: int = 5, n_phi: int = 8, n_xi: int = 6,
                               seed: int = 0) -> TwoLevelProblem:
    """Finite-sample-space fixture whose inner differential depends on phi.

    g_phi(x) = (A + c_phi B) x + b + d_phi with (c_phi, d_phi) ranging over a
    sign-symmetric set, f_xi(y) = 0.5||y||^2 + <xi, y> with sign-symmetric xi,
    so E[g] = A x + b and grad F(x) = A^T (A x + b) exactly.
    """
    if n_phi > 32 or n_xi > 32:
        raise ContractViolation("finite supports are capped at 32 outcomes")
    rng = np.random.default_rng(seed)
    A = _matrix_with_spectrum(rng, m, n, 0.6, 1.4)
    B = _matrix_with_spectrum(rng, m, n, 0.2, 0.5)
    b = rng.standard_normal(m)
    c_half = rng.uniform(0.2, 0.8, n_phi // 2)
    c_vals = [float(v) for v in np.concatenate([c_half, -c_half])]
    d_vals = _centered_set(rng, n_phi, m, 0.3)
    phi_support = list(zip(c_vals, d_vals))
    xi_support = _centered_set(rng, n_xi, m, 0.4)

    def sample_inner_value(x: ManifoldPoint, phi):
        c, d = phi
        return (A + c * B) @ x.coords + b + d

    def sample_inner_adjoint(x: ManifoldPoint, phi, u):
        c, _ = phi
        return TangentVector(x, (A + c * B).T @ np.asarray(u, dtype=float))

    def sample_outer_grad(y, xi):
        return np.asarray(y, dtype=float) + xi

    def sample_outer_value(y, xi):
        y = np.asarray(y, dtype=float)
        return 0.5 * float(y @ y) + float(xi @ y)

    constants = ProblemConstants(L_F=4.0, L_f=1.0, V_g=1.0, C_g=2.0, C_f=10.0)
    return TwoLevelProblem(
        domain=Euclidean(n),
        inner_codomain=Euclidean(m),
        sample_inner_value=sample_inner_value,
        sample_inner_adjoint=sample_inner_adjoint,
        sample_outer_grad=sample_outer_grad,
        sample_outer_value=sample_outer_value,
        draw_phi=(lambda rng_: phi_support[rng_.integers(len(phi_support))]),
        draw_xi=(lambda rng_: xi_support[rng_.integers(len(xi_support))]),
        constants=constants,
        exact_inner_value=(lambda x: A @ x.coords + b),
        exact_inner_adjoint=(lambda x, u: TangentVector(x, A.T @ np.asarray(u, dtype=float))),
        exact_outer_grad=(lambda y: np.asarray(y, dtype=float)),
        exact_outer_value=(lambda y: 0.5 * float(np.sum(np.asarray(y, dtype=float) ** 2))),
        phi_support=phi_support,
        xi_support=xi_support,
        name="finite-euclidean",
    )


def _vec(mat: np.ndarray) -> np.ndarray:
    return np.asarray(mat, dtype=float).reshape(-1)


def _unvec(v: np.ndarray, d: int = 2) -> np.ndarray:
    return np.asarray(v, dtype=float).reshape(d, d)


def finite_two_level_spd(n_phi: int = 8, n_xi: int = 4, seed: int = 1,
                         target: Optional[np.ndarray] = None) -> TwoLevelProblem:
    """SPD(2) finite-sample-space fixture.

    g_phi(X) = vec(X) + d_phi, f_xi(y) = 0.5||y - vec(T)||^2 + <xi, y>, both
    supports sign-symmetric, so grad F(X) = X (X - T) X exactly (the
    Euclidean gradient X - T pushed through the metric conversion).
    """
    if n_phi > 32 or n_xi > 32:
        raise ContractViolation("finite supports are capped at 32 outcomes")
    rng = np.random.default_rng(seed)
    T = np.asarray(target, dtype=float) if target is not None else np.array([[1.5, 0.3], [0.3, 0.8]])
    vec_t = _vec(T)
    phi_support = _centered_set(rng, n_phi, 4, 0.25)
    xi_support = _centered_set(rng, n_xi, 4, 0.3)
    domain = SPD(2)

    def adjoint(x: ManifoldPoint, u):
        return egrad_to_rgrad(x, symmetrize(_unvec(u)))

    constants = ProblemConstants(L_F=8.0, L_f=1.0, V_g=0.5, C_g=3.0, C_f=10.0)
    return TwoLevelProblem(
        domain=domain,
        inner_codomain=Euclidean(4),
        sample_inner_value=(lambda x, phi: _vec(x.coords) + phi),
        sample_inner_adjoint=(lambda x, phi, u: adjoint(x, u)),
        sample_outer_grad=(lambda y, xi: np.asarray(y, dtype=float) - vec_t + xi),
        sample_outer_value=(
            lambda y, xi: 0.5 * float(np.sum((np.asarray(y, dtype=float) - vec_t) ** 2))
            + float(np.dot(xi, np.asarray(y, dtype=float)))
        ),
        draw_phi=(lambda rng_: phi_support[rng_.integers(len(phi_support))]),
        draw_xi=(lambda rng_: xi_support[rng_.integers(len(xi_support))]),
        constants=constants,
        exact_inner_value=(lambda x: _vec(x.coords)),
        exact_inner_adjoint=(lambda x, u: adjoint(x, u)),
        exact_outer_grad=(lambda y: np.asarray(y, dtype=float) - vec_t),
        exact_outer_value=(lambda y: 0.5 * float(np.sum((np.asarray(y, dtype=float) - vec_t) ** 2))),
        phi_support=phi_support,
        xi_support=xi_support,
        name="finite-spd",
    )


def spd_rate_instance(noise_std: float = 0.4, seed: int = 0,
                      target: Optional[np.ndarray] = None) -> TwoLevelProblem:
    """SPD(2) instance for rate runs: g_phi(X) = vec(X) + phi (Gaussian),
    f(y) = 0.5||y - vec(T)||^2. F(X) = 0.5||X - T||_F^2 with minimum 0 at T.
    """
    T = np.asarray(target, dtype=float) if target is not None else np.array([[1.2, 0.4], [0.4, 0.9]])
    vec_t = _vec(T)
    domain = SPD(2)

    def adjoint(x: ManifoldPoint, u):
        return egrad_to_rgrad(x, symmetrize(_unvec(u)))

    constants = ProblemConstants(
        L_F=4.0,
        L_f=1.0,
        V_g=noise_std * 2.0,  # total std of 4 iid coordinates
        C_g=2.0,              # ||V||_F <= lam_max(X) ||V||_X on the region near T
        C_f=6.0,
        t=1.0,
    )
    return TwoLevelProblem(
        domain=domain,
        inner_codomain=Euclidean(4),
        sample_inner_value=(lambda x, phi: _vec(x.coords) + phi),
        sample_inner_adjoint=(lambda x, phi, u: adjoint(x, u)),
        sample_outer_grad=(lambda y, xi: np.asarray(y, dtype=float) - vec_t),
        sample_outer_value=(lambda y, xi: 0.5 * float(np.sum((np.asarray(y, dtype=float) - vec_t) ** 2))),
        draw_phi=(lambda rng_: rng_.standard_normal(4) * noise_std),
        draw_xi=(lambda rng_: None),
        constants=constants,
        exact_inner_value=(lambda x: _vec(x.coords)),
        exact_inner_adjoint=(lambda x, u: adjoint(x, u)),
        exact_outer_grad=(lambda y: np.asarray(y, dtype=float) - vec_t),
        exact_outer_value=(lambda y: 0.5 * float(np.sum((np.asarray(y, dtype=float) - vec_t) ** 2))),
        name="spd-rate",
    )


@dataclass
class LinearChainInstance:
    problem: MultiLevelProblem
    x_star_coords: np.ndarray
    M1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    c2: np.ndarray
    z_star: np.ndarray


def linear_chain_three_level(domain_kind: str = "spd", d2: int = 4, d3: int = 3,
                             noise_std: tuple[float, float, float] = (0.2, 0.2, 0.1),
                             seed: int = 0) -> LinearChainInstance:
    """Three-level chain: two affine levels under a quadratic top level.

    f1(x; th1) = M1 vec(x) + b1 + th1, f2(y; th2) = W2 y + c2 + th2,
    f3(z; th3) = 0.5||z - z*||^2 + <th3, z>, all noise zero-mean Gaussian.
    The nested-expectation objective is 0.5||W2(M1 vec(x) + b1) + c2 - z*||^2
    and the minimum value is 0 at a known point.
    """
    rng = np.random.default_rng(seed)
    if domain_kind == "spd":
        domain = SPD(2)
        d1 = 4
        x_star_mat = np.array([[1.3, 0.2], [0.2, 0.7]])
        x_star = _vec(x_star_mat)
    elif domain_kind == "euclidean":
        d1 = 4
        domain = Euclidean(d1)
        x_star = rng.standard_normal(d1)
    else:
        raise ContractViolation(f"unknown domain kind {domain_kind!r}")
    M1 = _matrix_with_spectrum(rng, d2, d1, 0.6, 1.2)
    b1 = rng.standard_normal(d2) * 0.5
    W2 = _matrix_with_spectrum(rng, d3, d2, 0.6, 1.2)
    c2 = rng.standard_normal(d3) * 0.5
    z_star = W2 @ (M1 @ x_star + b1) + c2
    s1, s2, s3 = noise_std

    def level1_value(x: ManifoldPoint, th):
        return M1 @ _vec(x.coords) + b1 + th

    def level1_adjoint(x: ManifoldPoint, th, u):
        e = M1.T @ np.asarray(u, dtype=float)
        if domain_kind == "spd":
            return egrad_to_rgrad(x, symmetrize(_unvec(e)))
        return TangentVector(x, e)

    lvl1 = Level(
        dim_out=d2,
        sample_value=level1_value,
        draw_theta=(lambda rng_: rng_.standard_normal(d2) * s1),
        constants=LevelConstants(L=0.0, V=s1 * np.sqrt(d2), C=1.2),
        sample_adjoint=level1_adjoint,
        exact_value=(lambda x: M1 @ _vec(x.coords) + b1),
        exact_adjoint=(lambda x, u: level1_adjoint(x, None, u)),
    )
    lvl2 = Level(
        dim_out=d3,
        sample_value=(lambda y, th: W2 @ np.asarray(y, dtype=float) + c2 + th),
        draw_theta=(lambda rng_: rng_.standard_normal(d3) * s2),
        constants=LevelConstants(L=0.0, V=s2 * np.sqrt(d3), C=1.2),
        sample_jacobian_T=(lambda y, th, w: W2.T @ np.asarray(w, dtype=float)),
        exact_value=(lambda y: W2 @ np.asarray(y, dtype=float) + c2),
        exact_jacobian_T=(lambda y, w: W2.T @ np.asarray(w, dtype=float)),
    )

    def level3_value(z, th):
        z = np.asarray(z, dtype=float)
        val = 0.5 * float(np.sum((z - z_star) ** 2))
        if th is not None:
            val += float(np.dot(th, z))
        return np.atleast_1d(val)

    def level3_jac_t(z, th, w):
        z = np.asarray(z, dtype=float)
        g = z - z_star + (0 if th is None else th)
        return float(np.asarray(w, dtype=float).reshape(())) * g

    lvl3 = Level(
        dim_out=1,
        sample_value=level3_value,
        draw_theta=(lambda rng_: rng_.standard_normal(d3) * s3),
        constants=LevelConstants(L=1.0, V=0.0, C=6.0),
        sample_jacobian_T=level3_jac_t,
        exact_value=(lambda z: np.atleast_1d(0.5 * float(np.sum((np.asarray(z, dtype=float) - z_star) ** 2)))),
        exact_jacobian_T=(lambda z, w: float(np.asarray(w, dtype=float).reshape(())) * (np.asarray(z, dtype=float) - z_star)),
    )
    problem = MultiLevelProblem(
        domain=domain,
        levels=[lvl1, lvl2, lvl3],
        name=f"linear-chain-3-{domain_kind}",
    )
    return LinearChainInstance(problem=problem, x_star_coords=x_star, M1=M1, b1=b1,
                               W2=W2, c2=c2, z_star=z_star)


def with_corrupted_adjoint(problem: TwoLevelProblem, factor: float = 1.02) -> TwoLevelProblem:
    """Negative control: scales the sampled adjoint so pairing checks must fail."""
    orig = problem.sample_inner_adjoint

    def bad_adjoint(x, phi, u):
        v = orig(x, phi, u)
        return TangentVector(v.point, factor * v.coords)

    return dataclasses.replace(
        problem,
        sample_inner_adjoint=bad_adjoint,
        name=(problem.name + "-corrupted") if problem.name else "corrupted",
    )
