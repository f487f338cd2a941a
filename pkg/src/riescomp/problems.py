"""Problem abstractions for nested stochastic compositions.

A two-level problem is F(x) = E_xi[ f_xi( E_phi[ g_phi(x) ] ) ] with x on a
manifold and the inner values living in an embedding space. Oracles are plain
callables keyed by sample tokens: the solver draws a token from its own RNG
stream and passes it in, so trajectories replay exactly. Exact oracles are
optional and only verification code touches them.

The composite Riemannian gradient is grad F(x) = (Dg(x))* Proj_{g(x)} grad f,
where the adjoint is supplied by the problem as the Euclidean gradient of
x -> <g_phi(x), u> converted through egrad_to_rgrad.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Sequence

import numpy as np

from .errors import ContractViolation, MissingOracle
from .manifolds import (
    Euclidean,
    Manifold,
    ManifoldPoint,
    TangentVector,
    exp_map,
    inner,
    norm_sq,
    scale,
)


@dataclass(frozen=True)
class ProblemConstants:
    """Smoothness/variance bounds used by schedules and rate diagnostics.

    All nonnegative. ``t`` is the sup of |t_k| in the gamma coupling
    gamma_k = 1 - t_k * beta_k.
    """

    L_F: float
    L_f: float
    V_g: float
    C_g: float
    C_f: float
    t: float = 1.0

    def __post_init__(self):
        for name in ("L_F", "L_f", "V_g", "C_g", "C_f", "t"):
            val = getattr(self, name)
            if not np.isfinite(val) or val < 0:
                raise ContractViolation(f"constant {name} must be finite and >= 0, got {val!r}")


@dataclass(frozen=True)
class LevelConstants:
    """Per-level smoothness L, value-noise bound V, gradient bound C."""

    L: float
    V: float
    C: float

    def __post_init__(self):
        for name in ("L", "V", "C"):
            val = getattr(self, name)
            if not np.isfinite(val) or val < 0:
                raise ContractViolation(f"constant {name} must be finite and >= 0, got {val!r}")


@dataclass
class TwoLevelProblem:
    """F(x) = E_xi[f_xi(E_phi[g_phi(x)])] with sampled oracles.

    sample_inner_value(x, phi) -> ambient vector (a valid point of
    ``inner_codomain``); sample_inner_adjoint(x, phi, u) -> TangentVector at x
    for an ambient covector u; sample_outer_grad(y, xi) -> ambient vector;
    sample_outer_value(y, xi) -> float.
    """

    domain: Manifold
    inner_codomain: Manifold
    sample_inner_value: Callable[[ManifoldPoint, Any], np.ndarray]
    sample_inner_adjoint: Callable[[ManifoldPoint, Any, np.ndarray], TangentVector]
    sample_outer_grad: Callable[[np.ndarray, Any], np.ndarray]
    sample_outer_value: Callable[[np.ndarray, Any], float]
    draw_phi: Callable[[np.random.Generator], Any]
    draw_xi: Callable[[np.random.Generator], Any]
    constants: ProblemConstants
    exact_inner_value: Optional[Callable[[ManifoldPoint], np.ndarray]] = None
    exact_inner_adjoint: Optional[Callable[[ManifoldPoint, np.ndarray], TangentVector]] = None
    exact_outer_grad: Optional[Callable[[np.ndarray], np.ndarray]] = None
    exact_outer_value: Optional[Callable[[np.ndarray], float]] = None
    phi_support: Optional[Sequence[Any]] = None
    phi_weights: Optional[Sequence[float]] = None
    xi_support: Optional[Sequence[Any]] = None
    xi_weights: Optional[Sequence[float]] = None
    name: str = ""

    @property
    def inner_dim(self) -> int:
        return self.inner_codomain.ambient_dim

    def has_exact_oracles(self) -> bool:
        return (
            self.exact_inner_value is not None
            and self.exact_inner_adjoint is not None
            and self.exact_outer_grad is not None
        )

    def has_finite_support(self) -> bool:
        return self.phi_support is not None and self.xi_support is not None


@dataclass
class Level:
    """One stage f_n of a multi-level composition.

    For the first level the input is a ManifoldPoint and ``sample_adjoint``
    maps an ambient covector to a TangentVector; later levels map flat vectors
    to flat vectors and ``sample_jacobian_T`` applies the transposed Jacobian
    to a covector of the output space. The last level must have dim_out = 1.
    """

    dim_out: int
    sample_value: Callable[..., np.ndarray]
    draw_theta: Callable[[np.random.Generator], Any]
    constants: LevelConstants
    sample_jacobian_T: Optional[Callable[[np.ndarray, Any, np.ndarray], np.ndarray]] = None
    sample_adjoint: Optional[Callable[[ManifoldPoint, Any, np.ndarray], TangentVector]] = None
    exact_value: Optional[Callable[..., np.ndarray]] = None
    exact_jacobian_T: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    exact_adjoint: Optional[Callable[[ManifoldPoint, np.ndarray], TangentVector]] = None
    theta_support: Optional[Sequence[Any]] = None
    theta_weights: Optional[Sequence[float]] = None


@dataclass
class MultiLevelProblem:
    """F(x) = E[f_N(...f_2(f_1(x; th_1); th_2)...; th_N)], N >= 2 levels."""

    domain: Manifold
    levels: list[Level]
    inner_codomain: Optional[Manifold] = None  # codomain of level 1; Euclidean default
    name: str = ""

    def __post_init__(self):
        n = len(self.levels)
        if n < 2:
            raise ContractViolation(f"multi-level problem needs >= 2 levels, got {n}")
        if self.levels[-1].dim_out != 1:
            raise ContractViolation("final level must be scalar-valued (dim_out = 1)")
        if self.levels[0].sample_adjoint is None:
            raise ContractViolation("first level must provide sample_adjoint")
        for lev in self.levels[1:]:
            if lev.sample_jacobian_T is None:
                raise ContractViolation("levels after the first must provide sample_jacobian_T")
        if self.inner_codomain is None:
            self.inner_codomain = Euclidean(self.levels[0].dim_out)

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    def has_exact_oracles(self) -> bool:
        if self.levels[0].exact_value is None or self.levels[0].exact_adjoint is None:
            return False
        return all(
            lev.exact_value is not None and lev.exact_jacobian_T is not None
            for lev in self.levels[1:]
        )


def project_covector(codomain: Manifold, base_coords: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Proj_{base} u as a flat ambient vector; identity on Euclidean spaces."""
    if isinstance(codomain, Euclidean):
        return np.asarray(u, dtype=float)
    return codomain.flatten(codomain.project(codomain.as_coords(base_coords), u))


def composite_rgrad_exact(problem: TwoLevelProblem, x: ManifoldPoint) -> TangentVector:
    """grad F(x) from the exact oracles via the chain rule."""
    if not problem.has_exact_oracles():
        raise MissingOracle("problem does not supply exact inner/outer oracles")
    g = np.asarray(problem.exact_inner_value(x), dtype=float)
    grad_f = np.asarray(problem.exact_outer_grad(g), dtype=float)
    proj = project_covector(problem.inner_codomain, g, grad_f)
    return problem.exact_inner_adjoint(x, proj)


def stochastic_eta(
    problem: TwoLevelProblem,
    x: ManifoldPoint,
    y_tracked: np.ndarray,
    phi_sample: Any,
    xi_sample: Any,
    g_at_x: Optional[np.ndarray] = None,
) -> TangentVector:
    """Gradient estimate (Dg_phi(x))* Proj_{g_phi(x)} grad f_xi(y_tracked).

    ``g_at_x`` may be supplied to reuse a value the caller already computed;
    it is only needed when the inner codomain is curved (Proj base point).
    """
    grad_f = np.asarray(problem.sample_outer_grad(np.asarray(y_tracked, dtype=float), xi_sample))
    if isinstance(problem.inner_codomain, Euclidean):
        proj = grad_f
    else:
        if g_at_x is None:
            g_at_x = problem.sample_inner_value(x, phi_sample)
        proj = project_covector(problem.inner_codomain, g_at_x, grad_f)
    return problem.sample_inner_adjoint(x, phi_sample, proj)


def multi_level_eta(
    problem: MultiLevelProblem,
    x: ManifoldPoint,
    y_values: Sequence[np.ndarray],
    thetas: Sequence[Any],
    g_at_x: Optional[np.ndarray] = None,
) -> TangentVector:
    """Chain-rule gradient estimate for a multi-level problem.

    ``y_values[n-1]`` stands in for f_n's input value (the tracker y_n), and
    ``thetas`` holds one sample token per level. The covector is built right
    to left: w = grad f_N, then w = J_n^T w down to level 2, then the level-1
    adjoint with the tangent projection at g_at_x (level-1 value at x).
    """
    levels = problem.levels
    n = len(levels)
    if len(y_values) != n - 1 or len(thetas) != n:
        raise ContractViolation("y_values must have N-1 entries and thetas N entries")
    w = np.asarray(
        levels[-1].sample_jacobian_T(np.asarray(y_values[-1], dtype=float), thetas[-1], np.ones(1)),
        dtype=float,
    )
    for i in range(n - 2, 0, -1):
        w = np.asarray(
            levels[i].sample_jacobian_T(np.asarray(y_values[i - 1], dtype=float), thetas[i], w),
            dtype=float,
        )
    if not isinstance(problem.inner_codomain, Euclidean):
        if g_at_x is None:
            g_at_x = levels[0].sample_value(x, thetas[0])
        w = project_covector(problem.inner_codomain, g_at_x, w)
    return levels[0].sample_adjoint(x, thetas[0], w)


def multi_level_exact_value(problem: MultiLevelProblem, x: ManifoldPoint) -> float:
    """F(x) through the exact per-level oracles."""
    if not problem.has_exact_oracles():
        raise MissingOracle("problem does not supply exact per-level oracles")
    y = np.asarray(problem.levels[0].exact_value(x), dtype=float)
    for lev in problem.levels[1:]:
        y = np.asarray(lev.exact_value(y), dtype=float)
    return float(y.reshape(()))


def multi_level_rgrad_exact(problem: MultiLevelProblem, x: ManifoldPoint) -> TangentVector:
    """grad F(x) for a multi-level problem from exact oracles."""
    if not problem.has_exact_oracles():
        raise MissingOracle("problem does not supply exact per-level oracles")
    levels = problem.levels
    values = [np.asarray(levels[0].exact_value(x), dtype=float)]
    for lev in levels[1:-1]:
        values.append(np.asarray(lev.exact_value(values[-1]), dtype=float))
    w = np.asarray(levels[-1].exact_jacobian_T(values[-1], np.ones(1)), dtype=float)
    for i in range(len(levels) - 2, 0, -1):
        w = np.asarray(levels[i].exact_jacobian_T(values[i - 1], w), dtype=float)
    if not isinstance(problem.inner_codomain, Euclidean):
        w = project_covector(problem.inner_codomain, values[0], w)
    return levels[0].exact_adjoint(x, w)


def adjoint_pairing_residual(
    problem: TwoLevelProblem,
    x: ManifoldPoint,
    phi_sample: Any,
    v: TangentVector,
    u: np.ndarray,
    h: float = 1e-5,
) -> float:
    """|<Dg_phi(x)[v], Proj u> - <v, (Dg_phi)*(Proj u)>_x|.

    The differential is a central finite difference of sample_inner_value
    along exp_map(x, +-h v); a correct adjoint drives this to zero up to
    the O(h^2) discretization error.
    """
    u = np.asarray(u, dtype=float)
    g0 = np.asarray(problem.sample_inner_value(x, phi_sample), dtype=float)
    proj_u = project_covector(problem.inner_codomain, g0, u)
    g_plus = np.asarray(problem.sample_inner_value(exp_map(x, scale(v, h)), phi_sample), dtype=float)
    g_minus = np.asarray(problem.sample_inner_value(exp_map(x, scale(v, -h)), phi_sample), dtype=float)
    dg_v = (g_plus - g_minus) / (2.0 * h)
    lhs = float(np.dot(dg_v, proj_u))
    rhs = inner(x, v, problem.sample_inner_adjoint(x, phi_sample, proj_u))
    return abs(lhs - rhs)


def estimate_constants(
    problem: TwoLevelProblem,
    n_samples: int,
    rng: np.random.Generator,
    n_probe_points: int = 5,
    t: float = 1.0,
) -> ProblemConstants:
    """Monte-Carlo estimates of the schedule constants.

    V_g^2 is the max over probe points of the total sample variance of
    g_phi(x); C_g^2 the max of ||Dg_phi(x)[v]||^2 / ||v||_x^2 over random
    tangent directions (finite differences); C_f^2 the max of
    ||grad f_xi(y)||^2 over sampled inner values; L_f from sampled gradient
    differences. L_F is taken as C_g^2 * L_f, the flat-space chain bound, and
    is only used by rate diagnostics, never by the update rule. Per-sample
    (vs. in-expectation) smoothness of noisy outer oracles is not separated;
    estimates reflect the drawn samples only.
    """
    from .manifolds import random_point, random_tangent  # local import avoids cycle confusion

    if n_samples < 100:
        raise ContractViolation(f"n_samples must be >= 100, got {n_samples}")
    h = 1e-5
    v_g_sq = 0.0
    c_g_sq = 0.0
    c_f_sq = 0.0
    l_f = 0.0
    per_point = max(1, n_samples // n_probe_points)
    probe_ys: list[np.ndarray] = []
    for _ in range(n_probe_points):
        x = random_point(problem.domain, rng)
        vals = np.array(
            [problem.sample_inner_value(x, problem.draw_phi(rng)) for _ in range(per_point)],
            dtype=float,
        )
        mean = vals.mean(axis=0)
        var = float(np.mean(np.sum((vals - mean) ** 2, axis=1)))
        # flush pure round-off so deterministic oracles report V_g = 0 exactly
        if var < (1e-12 * (1.0 + float(np.linalg.norm(mean)))) ** 2:
            var = 0.0
        v_g_sq = max(v_g_sq, var)
        probe_ys.extend(vals[:8])
        for _ in range(4):
            v = random_tangent(x, rng)
            nv_sq = norm_sq(v)
            if nv_sq == 0.0:
                continue
            phi = problem.draw_phi(rng)
            g_p = np.asarray(problem.sample_inner_value(exp_map(x, scale(v, h)), phi), dtype=float)
            g_m = np.asarray(problem.sample_inner_value(exp_map(x, scale(v, -h)), phi), dtype=float)
            dg = (g_p - g_m) / (2.0 * h)
            c_g_sq = max(c_g_sq, float(np.dot(dg, dg)) / nv_sq)
    grads = []
    for y in probe_ys:
        xi = problem.draw_xi(rng)
        grads.append((y, np.asarray(problem.sample_outer_grad(y, xi), dtype=float)))
        c_f_sq = max(c_f_sq, float(np.dot(grads[-1][1], grads[-1][1])))
    for (y1, g1), (y2, g2) in zip(grads[:-1], grads[1:]):
        dy = float(np.linalg.norm(y1 - y2))
        if dy > 1e-12:
            l_f = max(l_f, float(np.linalg.norm(g1 - g2)) / dy)
    c_g = float(np.sqrt(c_g_sq))
    return ProblemConstants(
        L_F=c_g * c_g * l_f,
        L_f=l_f,
        V_g=float(np.sqrt(v_g_sq)),
        C_g=c_g,
        C_f=float(np.sqrt(c_f_sq)),
        t=t,
    )


def two_level_as_multi(problem: TwoLevelProblem) -> MultiLevelProblem:
    """View a two-level problem as an N=2 multi-level problem.

    The level-2 map is the outer function itself (scalar) and its transposed
    Jacobian at covector w is w * grad f_xi. Sample tokens pass through, so a
    multi-level run with streams matched to (phi, xi) reproduces the
    two-level trajectory draw for draw.
    """
    c = problem.constants
    level1 = Level(
        dim_out=problem.inner_codomain.ambient_dim,
        sample_value=problem.sample_inner_value,
        draw_theta=problem.draw_phi,
        constants=LevelConstants(L=0.0, V=c.V_g, C=c.C_g),
        sample_adjoint=problem.sample_inner_adjoint,
        exact_value=problem.exact_inner_value,
        exact_adjoint=problem.exact_inner_adjoint,
        theta_support=problem.phi_support,
        theta_weights=problem.phi_weights,
    )

    def outer_value(y, xi):
        return np.atleast_1d(np.asarray(problem.sample_outer_value(y, xi), dtype=float))

    def outer_jac_t(y, xi, w):
        return np.asarray(w, dtype=float).reshape(())[()] * np.asarray(
            problem.sample_outer_grad(y, xi), dtype=float
        )

    exact_value2 = None
    exact_jac_t2 = None
    if problem.exact_outer_value is not None:
        exact_value2 = lambda y: np.atleast_1d(np.asarray(problem.exact_outer_value(y), dtype=float))
    if problem.exact_outer_grad is not None:
        exact_jac_t2 = lambda y, w: np.asarray(w, dtype=float).reshape(())[()] * np.asarray(
            problem.exact_outer_grad(y), dtype=float
        )
    level2 = Level(
        dim_out=1,
        sample_value=outer_value,
        draw_theta=problem.draw_xi,
        constants=LevelConstants(L=c.L_f, V=0.0, C=c.C_f),
        sample_jacobian_T=outer_jac_t,
        exact_value=exact_value2,
        exact_jacobian_T=exact_jac_t2,
        theta_support=problem.xi_support,
        theta_weights=problem.xi_weights,
    )
    return MultiLevelProblem(
        domain=problem.domain,
        levels=[level1, level2],
        inner_codomain=problem.inner_codomain,
        name=problem.name + "-as-multi" if problem.name else "two-as-multi",
    )
