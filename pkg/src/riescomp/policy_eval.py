"""Policy-evaluation benchmark: grid MDP with a Gaussian-RBF value model.

The value function of a random MDP on a square grid is approximated by a
radial-basis expansion phi(s) = sum_i w_i N(s; mu_i, Sigma) with one shared
covariance. The true transition matrix P and reward r are constructed so the
Bellman equation holds exactly at the true parameters; the solvers only see
noisy copies of P and r. Minimizing the squared Bellman residual over Sigma
on SPD(2) is the compositional problem: inner map = residual under sampled
(P, r), outer function = squared norm.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ContractViolation, NumericalDomainError
from .linalg import min_eigval, symmetrize
from .manifolds import (
    SPD,
    Euclidean,
    ManifoldPoint,
    Product,
    TangentVector,
    egrad_to_rgrad,
)
from .problems import ProblemConstants, TwoLevelProblem
from .rng import make_stream

DENSITY_FLOOR = 1e-300
SIGMA_MIN_EIG = 1e-10


@dataclass
class GridMDP:
    """Synthetic MDP on a grid_side x grid_side board, states in R^2."""

    grid_side: int
    coords: np.ndarray    # S x 2 state coordinates
    P_true: np.ndarray    # S x S row-stochastic
    r_true: np.ndarray    # S x S rewards
    rho: float
    sigma_P: float
    sigma_r: float
    V_true: np.ndarray    # length S

    @property
    def n_states(self) -> int:
        return self.coords.shape[0]

    def bellman_residual_norm(self) -> float:
        """Max | V(s) - sum_s' P(s,s') (r(s,s') + rho V(s')) |; ~0 by construction."""
        rhs = np.sum(self.P_true * (self.r_true + self.rho * self.V_true[None, :]), axis=1)
        return float(np.max(np.abs(self.V_true - rhs)))


@dataclass
class RBFValueModel:
    """Fixed weights and centers; Sigma is the (true) shared covariance."""

    w: np.ndarray        # (D,)
    mu: np.ndarray       # (D, 2)
    Sigma: np.ndarray    # (2, 2) SPD

    @property
    def n_bases(self) -> int:
        return self.w.shape[0]


def gaussian_features(coords: np.ndarray, mu: np.ndarray, Sigma: np.ndarray) -> np.ndarray:
    """S x D matrix of N(s; mu_i, Sigma) densities, underflow flushed to 0."""
    Sigma = np.asarray(Sigma, dtype=float)
    det = float(np.linalg.det(Sigma))
    if det <= 0:
        raise NumericalDomainError(f"covariance determinant {det:g} <= 0")
    inv = np.linalg.inv(Sigma)
    delta = coords[:, None, :] - mu[None, :, :]          # S x D x 2
    quad = np.einsum("sia,ab,sib->si", delta, inv, delta)
    dens = np.exp(-0.5 * quad) / (2.0 * np.pi * np.sqrt(det))
    dens[dens < DENSITY_FLOOR] = 0.0
    return dens


def value_estimate(mdp: GridMDP, model: RBFValueModel, Sigma: np.ndarray,
                   w: Optional[np.ndarray] = None, mu: Optional[np.ndarray] = None) -> np.ndarray:
    """phi(s; Sigma) for every state: the RBF value-function approximation."""
    w = model.w if w is None else w
    mu = model.mu if mu is None else mu
    return gaussian_features(mdp.coords, mu, Sigma) @ w


def generate_instance(grid_side: int = 7, n_bases: int = 5, rho: float = 0.9,
                      sigma_P: float = 0.01, sigma_r: float = 0.05,
                      seed: int = 0) -> tuple[GridMDP, RBFValueModel]:
    """Random instance whose Bellman equation holds exactly at the truth.

    Rewards are r(s,s') = V(s) - rho V(s'), which together with row-stochastic
    P gives sum_s' P(s,s')(r(s,s') + rho V(s')) = V(s) identically.
    """
    if grid_side < 2 or n_bases < 1:
        raise ContractViolation("need grid_side >= 2 and n_bases >= 1")
    if not (0.0 < rho < 1.0):
        raise ContractViolation(f"discount must lie in (0,1), got {rho!r}")
    rng = make_stream(seed, 0, "init")
    side = np.arange(grid_side, dtype=float)
    coords = np.array([(i, j) for i in side for j in side])
    s_count = coords.shape[0]
    w = rng.uniform(0.5, 1.5, n_bases)
    mu = rng.uniform(0.0, grid_side - 1.0, (n_bases, 2))
    a = rng.standard_normal((2, 2))
    sigma_true = a @ a.T + 0.5 * np.eye(2)
    model = RBFValueModel(w=w, mu=mu, Sigma=sigma_true)
    v_true = gaussian_features(coords, mu, sigma_true) @ w
    p_raw = rng.uniform(0.0, 1.0, (s_count, s_count))
    p_true = p_raw / p_raw.sum(axis=1, keepdims=True)
    r_true = v_true[:, None] - rho * v_true[None, :]
    mdp = GridMDP(grid_side=grid_side, coords=coords, P_true=p_true, r_true=r_true,
                  rho=rho, sigma_P=sigma_P, sigma_r=sigma_r, V_true=v_true)
    return mdp, model


def bellman_residual(mdp: GridMDP, model: RBFValueModel, Sigma: np.ndarray,
                     P_hat: np.ndarray, r_hat: np.ndarray,
                     w: Optional[np.ndarray] = None, mu: Optional[np.ndarray] = None) -> np.ndarray:
    """g(Sigma) componentwise: phi(s) - sum_s' P_hat(s,s')(r_hat(s,s') + rho phi(s'))."""
    phi = value_estimate(mdp, model, Sigma, w=w, mu=mu)
    return phi - np.sum(P_hat * r_hat, axis=1) - mdp.rho * (P_hat @ phi)


def bellman_residual_adjoint(mdp: GridMDP, model: RBFValueModel, sigma_point: ManifoldPoint,
                             P_hat: np.ndarray, u: np.ndarray) -> TangentVector:
    """(Dg(Sigma))* applied to a covector u, as a tangent vector on SPD(2).

    The Euclidean gradient of <g(Sigma), u> collects the per-state feature
    gradients dN/dSigma = N * 0.5 (inv d d^T inv - inv) with the chain
    weights c = u - rho P_hat^T u, then converts through the metric.
    """
    Sigma = sigma_point.coords
    if min_eigval(Sigma) < SIGMA_MIN_EIG:
        raise NumericalDomainError("covariance is numerically singular")
    u = np.asarray(u, dtype=float)
    c = u - mdp.rho * (P_hat.T @ u)
    inv = np.linalg.inv(Sigma)
    dens = gaussian_features(mdp.coords, model.mu, Sigma)
    delta = mdp.coords[:, None, :] - model.mu[None, :, :]
    weights = dens * (c[:, None] * model.w[None, :])       # S x D
    total = float(weights.sum())
    m = np.einsum("si,sia,sib->ab", weights, delta, delta)
    egrad = 0.5 * (inv @ m @ inv - total * inv)
    return egrad_to_rgrad(sigma_point, symmetrize(egrad))


def squared_norm(y: np.ndarray) -> float:
    """Outer objective f(y) = ||y||^2."""
    y = np.asarray(y, dtype=float)
    return float(y @ y)


def squared_norm_grad(y: np.ndarray) -> np.ndarray:
    return 2.0 * np.asarray(y, dtype=float)


def inner_value_variance(mdp: GridMDP, model: RBFValueModel, Sigma: np.ndarray) -> float:
    """Exact total variance of the sampled residual under Gaussian noise.

    g is affine in the noise entries, so each state's variance is a closed
    form: sum_s' [sigma_P^2 (r + rho phi)^2 + sigma_r^2 (P^2 + sigma_P^2)].
    """
    phi = value_estimate(mdp, model, Sigma)
    coef = mdp.r_true + mdp.rho * phi[None, :]
    var = (mdp.sigma_P ** 2 * coef ** 2
           + mdp.sigma_r ** 2 * (mdp.P_true ** 2 + mdp.sigma_P ** 2))
    return float(var.sum())


def _finite_noise_patterns(mdp: GridMDP, pattern_seed: int) -> tuple[np.ndarray, np.ndarray]:
    rng = make_stream(pattern_seed, 0, "init")
    s = mdp.n_states
    return rng.standard_normal((s, s)), rng.standard_normal((s, s))


def as_two_level_problem(mdp: GridMDP, model: RBFValueModel, noise: str = "gaussian",
                         optimize: str = "sigma", pattern_seed: int = 1234,
                         constants: Optional[ProblemConstants] = None) -> TwoLevelProblem:
    """Wire the benchmark into the two-level composition contract.

    noise: "gaussian" (i.i.d. additive on every entry of P and r), "finite"
    (four equally likely sign combinations of fixed patterns, enumerable
    exactly), or "none". Noisy P rows are not renormalized; renormalizing
    would bias E[P_hat] away from P.

    optimize: "sigma" puts only the shared covariance on SPD(2); "all" also
    frees the weights and centers on Product(Euclidean(D), Euclidean(2D),
    SPD(2)).
    """
    if noise not in ("gaussian", "finite", "none"):
        raise ContractViolation(f"unknown noise model {noise!r}")
    if optimize not in ("sigma", "all"):
        raise ContractViolation(f"unknown optimization mode {optimize!r}")
    s = mdp.n_states
    d_bases = model.n_bases
    zero = (np.zeros((s, s)), np.zeros((s, s)))
    phi_support = None
    if noise == "gaussian":
        def draw_phi(rng):
            return (rng.standard_normal((s, s)) * mdp.sigma_P,
                    rng.standard_normal((s, s)) * mdp.sigma_r)
    elif noise == "finite":
        ep, er = _finite_noise_patterns(mdp, pattern_seed)
        phi_support = [(sp * mdp.sigma_P * ep, sr * mdp.sigma_r * er)
                       for sp in (1.0, -1.0) for sr in (1.0, -1.0)]

        def draw_phi(rng):
            return phi_support[rng.integers(4)]
    else:
        def draw_phi(rng):
            return zero

    if optimize == "sigma":
        domain = SPD(2)

        def unpack(x: ManifoldPoint):
            return model.w, model.mu, x.coords
    else:
        domain = Product((Euclidean(d_bases), Euclidean(2 * d_bases), SPD(2)))

        def unpack(x: ManifoldPoint):
            w_part, mu_part, sig_part = domain.split(x.coords)
            return w_part, mu_part.reshape(d_bases, 2), sig_part

    def sample_inner_value(x: ManifoldPoint, phi):
        d_p, d_r = phi
        w_x, mu_x, sig_x = unpack(x)
        return bellman_residual(mdp, model, sig_x, mdp.P_true + d_p, mdp.r_true + d_r,
                                w=w_x, mu=mu_x)

    def sample_inner_adjoint(x: ManifoldPoint, phi, u):
        d_p, _ = phi
        p_hat = mdp.P_true + d_p
        if optimize == "sigma":
            return bellman_residual_adjoint(mdp, model, x, p_hat, u)
        return _full_adjoint(mdp, model, domain, x, p_hat, u)

    if constants is None:
        v_g = float(np.sqrt(inner_value_variance(mdp, model, model.Sigma)))
        if noise == "none":
            v_g = 0.0
        constants = ProblemConstants(L_F=20.0, L_f=2.0, V_g=v_g, C_g=2.0, C_f=10.0)

    return TwoLevelProblem(
        domain=domain,
        inner_codomain=Euclidean(s),
        sample_inner_value=sample_inner_value,
        sample_inner_adjoint=sample_inner_adjoint,
        sample_outer_grad=(lambda y, xi: squared_norm_grad(y)),
        sample_outer_value=(lambda y, xi: squared_norm(y)),
        draw_phi=draw_phi,
        draw_xi=(lambda rng: None),
        constants=constants,
        exact_inner_value=(lambda x: sample_inner_value(x, zero)),
        exact_inner_adjoint=(lambda x, u: sample_inner_adjoint(x, zero, u)),
        exact_outer_grad=squared_norm_grad,
        exact_outer_value=squared_norm,
        phi_support=phi_support,
        xi_support=[None] if noise != "gaussian" else None,
        name=f"policy-eval-{noise}-{optimize}",
    )


def _full_adjoint(mdp: GridMDP, model: RBFValueModel, domain: Product,
                  x: ManifoldPoint, p_hat: np.ndarray, u: np.ndarray) -> TangentVector:
    """Adjoint for the (w, mu, Sigma) product-manifold mode."""
    d_bases = model.n_bases
    w_x, mu_flat, sig = domain.split(x.coords)
    mu_x = mu_flat.reshape(d_bases, 2)
    if min_eigval(sig) < SIGMA_MIN_EIG:
        raise NumericalDomainError("covariance is numerically singular")
    u = np.asarray(u, dtype=float)
    c = u - mdp.rho * (p_hat.T @ u)
    inv = np.linalg.inv(sig)
    dens = gaussian_features(mdp.coords, mu_x, sig)
    delta = mdp.coords[:, None, :] - mu_x[None, :, :]
    egrad_w = dens.T @ c
    # dphi/dmu_i = w_i N(s; mu_i, Sigma) inv (s - mu_i)
    weights = dens * (c[:, None] * w_x[None, :])
    egrad_mu = np.einsum("si,ab,sib->ia", weights, inv, delta)
    total = float(weights.sum())
    m = np.einsum("si,sia,sib->ab", weights, delta, delta)
    egrad_sig = 0.5 * (inv @ m @ inv - total * inv)
    flat = np.concatenate([egrad_w, egrad_mu.reshape(-1), symmetrize(egrad_sig).reshape(-1)])
    return egrad_to_rgrad(x, flat)


def save_instance(path: str, mdp: GridMDP, model: RBFValueModel) -> None:
    """Self-describing JSON snapshot; floats round-trip exactly."""
    payload = {
        "format": "riescomp-policy-eval-instance",
        "version": 1,
        "grid_side": mdp.grid_side,
        "rho": mdp.rho,
        "sigma_P": mdp.sigma_P,
        "sigma_r": mdp.sigma_r,
        "coords": mdp.coords.tolist(),
        "P_true": mdp.P_true.tolist(),
        "r_true": mdp.r_true.tolist(),
        "V_true": mdp.V_true.tolist(),
        "w": model.w.tolist(),
        "mu": model.mu.tolist(),
        "Sigma": model.Sigma.tolist(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1)


def load_instance(path: str) -> tuple[GridMDP, RBFValueModel]:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != "riescomp-policy-eval-instance":
        raise ContractViolation(f"{path} is not a policy-eval instance file")
    mdp = GridMDP(
        grid_side=int(payload["grid_side"]),
        coords=np.asarray(payload["coords"], dtype=float),
        P_true=np.asarray(payload["P_true"], dtype=float),
        r_true=np.asarray(payload["r_true"], dtype=float),
        rho=float(payload["rho"]),
        sigma_P=float(payload["sigma_P"]),
        sigma_r=float(payload["sigma_r"]),
        V_true=np.asarray(payload["V_true"], dtype=float),
    )
    model = RBFValueModel(
        w=np.asarray(payload["w"], dtype=float),
        mu=np.asarray(payload["mu"], dtype=float),
        Sigma=np.asarray(payload["Sigma"], dtype=float),
    )
    return mdp, model
