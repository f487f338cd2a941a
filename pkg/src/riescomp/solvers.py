"""Compositional solvers on manifolds.

Three update rules share the same record format:

* two-level tracked solver: a running estimate y of the inner expectation is
  corrected each step with one fresh inner sample evaluated at both the
  current and previous iterate (same sample token for both), then the outer
  gradient is taken at the tracked value;
* multi-level tracked solver: one tracker per level, updated in sequence,
  with the gradient estimate built right-to-left through the transposed
  Jacobians;
* biased stochastic gradient baseline: plugs a single noisy inner value
  straight into the outer gradient.

Step sizes come from fixed-horizon schedules: alpha = 1/sqrt(K), beta
proportional to alpha via the smoothness constants, gamma = 1 - t*beta.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Optional, Sequence

import numpy as np

from .errors import ContractViolation, NumericalAbort
from .manifolds import (
    Euclidean,
    ManifoldPoint,
    TangentVector,
    exp_map,
    norm_sq,
    scale,
)
from .problems import (
    MultiLevelProblem,
    ProblemConstants,
    TwoLevelProblem,
    composite_rgrad_exact,
    multi_level_exact_value,
    multi_level_rgrad_exact,
    project_covector,
    stochastic_eta,
)
from .rng import SampleStreams

log = logging.getLogger(__name__)

TWO_LEVEL_BETA_CAP = 0.99
MULTI_LEVEL_BETA_CAP = 0.5


@dataclass(frozen=True)
class Schedule:
    """Fixed-horizon constant step sizes.

    gamma_k = 1 - t_k * beta for the coupled kinds; manual schedules carry an
    explicit gamma. ``t_sequence`` maps an iteration index to t_k (None means
    t_k = 1).
    """

    kind: str  # "theorem1" | "theorem2" | "manual"
    alpha: float
    beta: float
    K: int
    gamma_const: Optional[float] = None
    t_sequence: Optional[Callable[[int], float]] = None

    def __post_init__(self):
        if self.kind not in ("theorem1", "theorem2", "manual"):
            raise ContractViolation(f"unknown schedule kind {self.kind!r}")
        if self.K < 1:
            raise ContractViolation("schedule horizon K must be >= 1")
        if not (self.alpha >= 0 and np.isfinite(self.alpha)):
            raise ContractViolation(f"alpha must be finite and >= 0, got {self.alpha!r}")
        if not (0 < self.beta <= 1):
            raise ContractViolation(f"beta must be in (0, 1], got {self.beta!r}")
        if self.kind == "manual" and self.gamma_const is None:
            raise ContractViolation("manual schedules need an explicit gamma")

    def t_at(self, k: int) -> float:
        return 1.0 if self.t_sequence is None else float(self.t_sequence(k))

    def gamma(self, k: int) -> float:
        if self.gamma_const is not None and self.t_sequence is None:
            return self.gamma_const
        return 1.0 - self.t_at(k) * self.beta


def schedule_two_level(constants: ProblemConstants, K: int,
                       t_sequence: Optional[Callable[[int], float]] = None) -> Schedule:
    """Coupled schedule: alpha = 1/sqrt(K), beta = alpha*C_g^2*L_f^2/2."""
    if K < 1:
        raise ContractViolation("K must be >= 1")
    coupling = constants.C_g ** 2 * constants.L_f ** 2
    if coupling <= 0:
        raise ContractViolation(
            "C_g * L_f = 0 leaves beta undefined; use a manual schedule"
        )
    alpha = 1.0 / math.sqrt(K)
    beta = alpha * coupling / 2.0
    if beta >= 1.0:
        log.warning(
            "two-level beta = %.3g >= 1 (K too small for the constants); clamping to %.2f",
            beta, TWO_LEVEL_BETA_CAP,
        )
        beta = TWO_LEVEL_BETA_CAP
    return Schedule(kind="theorem1", alpha=alpha, beta=beta, K=K, t_sequence=t_sequence)


def level_sensitivity(level_constants: Sequence) -> list[float]:
    """Error-amplification factors A_1..A_{N-1} of the level chain.

    A_n = sum over m = n+1..N of (prod of C_j over j != m) * (prod of L_j for
    j = n+1..m). For N = 2 this reduces to A_1 = C_1 * L_2, matching the
    two-level coupling.
    """
    n_levels = len(level_constants)
    if n_levels < 2:
        raise ContractViolation("need >= 2 levels")
    C = [lc.C for lc in level_constants]
    L = [lc.L for lc in level_constants]
    out = []
    for n in range(1, n_levels):  # A_n for n = 1..N-1
        total = 0.0
        for m in range(n + 1, n_levels + 1):
            c_prod = math.prod(C[j - 1] for j in range(1, n_levels + 1) if j != m)
            l_prod = math.prod(L[j - 1] for j in range(n + 1, m + 1))
            total += c_prod * l_prod
        out.append(total)
    return out


def schedule_multi_level(level_constants: Sequence, K: int) -> Schedule:
    """Coupled schedule: alpha = 1/sqrt(K), beta = alpha*(sum A_n^2)/2 <= 1/2."""
    if K < 1:
        raise ContractViolation("K must be >= 1")
    a = level_sensitivity(level_constants)
    coupling = sum(x * x for x in a)
    if coupling <= 0:
        raise ContractViolation("level constants give zero coupling; use a manual schedule")
    alpha = 1.0 / math.sqrt(K)
    beta = alpha * coupling / 2.0
    if beta > MULTI_LEVEL_BETA_CAP:
        log.warning(
            "multi-level beta = %.3g > 1/2; clamping to %.2f", beta, MULTI_LEVEL_BETA_CAP
        )
        beta = MULTI_LEVEL_BETA_CAP
    return Schedule(kind="theorem2", alpha=alpha, beta=beta, K=K, gamma_const=1.0 - beta)


def schedule_manual(alpha: float, beta: float, gamma: float, K: int) -> Schedule:
    return Schedule(kind="manual", alpha=alpha, beta=beta, K=K, gamma_const=gamma)


@dataclass(frozen=True)
class RateBoundConstants:
    """Constants of the expectation rate bound, for diagnostics only."""

    B0: float
    B1: float
    A: tuple[float, ...] = ()


def rate_bound_constants(schedule: Schedule, constants: ProblemConstants,
                         level_constants: Optional[Sequence] = None) -> RateBoundConstants:
    beta = schedule.beta
    gamma = schedule.gamma(0)
    b0 = 2.0 * (1.0 - beta) ** 2 + 2.0 * gamma ** 2 + (1.0 - beta - gamma) ** 2 / beta
    c = constants
    b1 = (
        (c.L_F / 2.0) * c.C_g ** 2 * c.C_f ** 2
        + c.C_g ** 4 * c.L_f ** 4 * c.V_g ** 2
        + (2.0 + 6.0 * (c.t + 1.0) ** 2) * c.C_g ** 4 * c.C_f ** 2
    )
    a = tuple(level_sensitivity(level_constants)) if level_constants is not None else ()
    return RateBoundConstants(B0=b0, B1=b1, A=a)


@dataclass
class OracleCounts:
    """Cumulative oracle-call tallies. ``inner_value`` is the budget currency."""

    inner_value: int = 0
    inner_adjoint: int = 0
    outer_grad: int = 0
    outer_value: int = 0
    mid_value: int = 0
    mid_jacobian: int = 0

    def snapshot(self) -> "OracleCounts":
        return replace(self)


@dataclass
class IterationRecord:
    """Snapshot after one solver step (k = number of completed steps)."""

    k: int
    x: ManifoldPoint
    grad_norm_sq: float
    grad_is_estimate: bool
    objective: float
    tracking_err_sq: float
    lyapunov_partial: float
    eta_norm_sq: float
    alpha: float
    beta: float
    gamma: float
    oracle_calls: OracleCounts
    wall_time_s: float


@dataclass
class TwoLevelState:
    x_prev: ManifoldPoint
    x_curr: ManifoldPoint
    y: np.ndarray
    k: int
    streams: SampleStreams
    counts: OracleCounts = field(default_factory=OracleCounts)


@dataclass
class MultiLevelState:
    x_prev: ManifoldPoint
    x_curr: ManifoldPoint
    y: list[np.ndarray]  # trackers y_1..y_{N-1}
    k: int
    streams: SampleStreams
    counts: OracleCounts = field(default_factory=OracleCounts)


@dataclass
class BiasedState:
    x_curr: ManifoldPoint
    k: int
    streams: SampleStreams
    counts: OracleCounts = field(default_factory=OracleCounts)


def _check_finite(arr: np.ndarray, what: str, k: int, records: list) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericalAbort(f"non-finite {what} at iteration {k}", records=records)


def _eta_checked(problem: TwoLevelProblem, x: ManifoldPoint, y_tracked: np.ndarray,
                 phi, xi, g_at_x: np.ndarray, k: int, records: list) -> TangentVector:
    """stochastic_eta with per-stage finiteness checks so a blow-up aborts
    with partial records instead of surfacing as a type-validation error."""
    grad_f = np.asarray(problem.sample_outer_grad(np.asarray(y_tracked, dtype=float), xi),
                        dtype=float)
    _check_finite(grad_f, "outer gradient", k, records)
    if isinstance(problem.inner_codomain, Euclidean):
        proj = grad_f
    else:
        proj = project_covector(problem.inner_codomain, g_at_x, grad_f)
    try:
        eta = problem.sample_inner_adjoint(x, phi, proj)
    except ContractViolation as exc:
        raise NumericalAbort(f"invalid gradient estimate at iteration {k}: {exc}",
                             records=records) from exc
    _check_finite(eta.coords, "gradient estimate", k, records)
    return eta


class _MetricsEngine:
    """Computes record metrics; uses exact oracles when the problem has them,
    otherwise a flagged Monte-Carlo plug-in from the dedicated metrics stream.

    Metric evaluations never touch the solver's sample streams and are not
    counted against the oracle budget.
    """

    def __init__(self, problem, streams: SampleStreams, mc_samples: int = 64):
        self.problem = problem
        self.stream = streams.stream("metrics")
        self.mc_samples = mc_samples
        self.two_level = isinstance(problem, TwoLevelProblem)
        self.exact = problem.has_exact_oracles()

    def _mc_two_level(self, x: ManifoldPoint):
        p = self.problem
        phis = [p.draw_phi(self.stream) for _ in range(self.mc_samples)]
        vals = np.array([p.sample_inner_value(x, ph) for ph in phis], dtype=float)
        y_bar = vals.mean(axis=0)
        eta_sum = None
        obj = 0.0
        for ph in phis:
            xi = p.draw_xi(self.stream)
            eta = stochastic_eta(p, x, y_bar, ph, xi, g_at_x=y_bar)
            eta_sum = eta.coords if eta_sum is None else eta_sum + eta.coords
            obj += float(p.sample_outer_value(y_bar, xi))
        mean_eta = TangentVector(x, eta_sum / self.mc_samples)
        return y_bar, norm_sq(mean_eta), obj / self.mc_samples

    def measure(self, x: ManifoldPoint, tracking_ref: ManifoldPoint, y_repr) -> tuple:
        """Returns (grad_norm_sq, is_estimate, objective, tracking_err_sq).

        ``tracking_ref`` is the iterate the tracker is paired with (the
        previous x); ``y_repr`` is the tracker value (two-level: vector;
        multi-level: list; None for the biased baseline).
        """
        p = self.problem
        if self.two_level:
            if self.exact:
                grad = composite_rgrad_exact(p, x)
                gsq = norm_sq(grad)
                obj = float("nan")
                if p.exact_outer_value is not None:
                    obj = float(p.exact_outer_value(np.asarray(p.exact_inner_value(x), dtype=float)))
                track = float("nan")
                if y_repr is not None:
                    g_ref = np.asarray(p.exact_inner_value(tracking_ref), dtype=float)
                    track = float(np.sum((np.asarray(y_repr, dtype=float) - g_ref) ** 2))
                return gsq, False, obj, track
            y_bar, gsq, obj = self._mc_two_level(x)
            track = float("nan")
            if y_repr is not None:
                track = float(np.sum((np.asarray(y_repr, dtype=float) - y_bar) ** 2))
            return gsq, True, obj, track
        # multi-level
        if self.exact:
            grad = multi_level_rgrad_exact(p, x)
            gsq = norm_sq(grad)
            obj = multi_level_exact_value(p, x)
            track = float("nan")
            if y_repr is not None:
                track = 0.0
                ref = np.asarray(p.levels[0].exact_value(tracking_ref), dtype=float)
                for n, lev in enumerate(p.levels[:-1]):
                    track += float(np.sum((np.asarray(y_repr[n], dtype=float) - ref) ** 2))
                    if n + 1 < len(p.levels) - 1:
                        ref = np.asarray(p.levels[n + 1].exact_value(np.asarray(y_repr[n], dtype=float)), dtype=float)
                return gsq, False, obj, track
            return gsq, False, obj, track
        raise ContractViolation("multi-level metrics require exact per-level oracles")


def _make_record(k, x, schedule_vals, metrics, eta_sq, counts, t0, timing) -> IterationRecord:
    alpha, beta, gamma = schedule_vals
    gsq, est, obj, track = metrics
    lyap = obj + (0.0 if math.isnan(track) else track)
    return IterationRecord(
        k=k,
        x=x,
        grad_norm_sq=gsq,
        grad_is_estimate=est,
        objective=obj,
        tracking_err_sq=track,
        lyapunov_partial=lyap,
        eta_norm_sq=eta_sq,
        alpha=alpha,
        beta=beta,
        gamma=gamma,
        oracle_calls=counts.snapshot(),
        wall_time_s=(time.perf_counter() - t0) if timing else 0.0,
    )


def _resolve_y0_two_level(problem: TwoLevelProblem, x0: ManifoldPoint, y0_policy,
                          streams: SampleStreams, counts: OracleCounts) -> np.ndarray:
    if isinstance(y0_policy, str):
        if y0_policy == "sample":
            phi = problem.draw_phi(streams.stream("init"))
            counts.inner_value += 1
            return np.asarray(problem.sample_inner_value(x0, phi), dtype=float)
        if y0_policy == "exact":
            if problem.exact_inner_value is None:
                raise ContractViolation("y0_policy 'exact' needs an exact inner oracle")
            return np.asarray(problem.exact_inner_value(x0), dtype=float)
        raise ContractViolation(f"unknown y0 policy {y0_policy!r}")
    if callable(y0_policy):
        return np.asarray(y0_policy(x0), dtype=float)
    arr = np.asarray(y0_policy, dtype=float)
    if arr.shape != (problem.inner_dim,):
        raise ContractViolation(
            f"y0 must have shape ({problem.inner_dim},), got {arr.shape}"
        )
    return arr


def step_two_level(problem: TwoLevelProblem, state: TwoLevelState, schedule: Schedule,
                   records: Optional[list] = None) -> tuple[TwoLevelState, dict]:
    """One tracked-gradient step. Returns the new state and raw step info;
    record assembly (metrics) is the runner's job."""
    k = state.k
    alpha = schedule.alpha
    beta = schedule.beta
    gamma = schedule.gamma(k)
    phi = problem.draw_phi(state.streams.stream("phi"))
    xi = problem.draw_xi(state.streams.stream("xi"))
    g_curr = np.asarray(problem.sample_inner_value(state.x_curr, phi), dtype=float)
    g_prev = np.asarray(problem.sample_inner_value(state.x_prev, phi), dtype=float)
    state.counts.inner_value += 2
    recs = records if records is not None else []
    y_new = state.y - beta * (state.y - g_curr) + gamma * (g_curr - g_prev)
    _check_finite(y_new, "tracker value", k, recs)
    eta = _eta_checked(problem, state.x_curr, y_new, phi, xi, g_curr, k, recs)
    state.counts.inner_adjoint += 1
    state.counts.outer_grad += 1
    x_new = exp_map(state.x_curr, scale(eta, -alpha))
    new_state = TwoLevelState(
        x_prev=state.x_curr, x_curr=x_new, y=y_new, k=k + 1,
        streams=state.streams, counts=state.counts,
    )
    info = {"eta_sq": norm_sq(eta), "alpha": alpha, "beta": beta, "gamma": gamma}
    return new_state, info


def run_two_level(
    problem: TwoLevelProblem,
    x0: ManifoldPoint,
    schedule: Schedule,
    K: Optional[int] = None,
    seed: int = 0,
    replication: int = 0,
    y0_policy="sample",
    metrics_every: int = 1,
    mc_samples: int = 64,
    hooks: Sequence[Callable] = (),
    stream_tags: tuple[str, str] = ("phi", "xi"),
    timing: bool = True,
) -> list[IterationRecord]:
    """Run K tracked-gradient steps from x0; one record per step.

    Records are emitted every ``metrics_every`` steps (the final step always
    gets one). Streams are derived from (seed, replication) with the given
    tags, so reruns are bitwise identical.
    """
    K = schedule.K if K is None else K
    if K < 1:
        raise ContractViolation("K must be >= 1")
    streams = SampleStreams(master_seed=seed, replication=replication)
    streams.alias("phi", stream_tags[0])
    streams.alias("xi", stream_tags[1])
    counts = OracleCounts()
    y0 = _resolve_y0_two_level(problem, x0, y0_policy, streams, counts)
    state = TwoLevelState(x_prev=x0, x_curr=x0, y=y0, k=0, streams=streams, counts=counts)
    engine = _MetricsEngine(problem, streams, mc_samples)
    records: list[IterationRecord] = []
    t0 = time.perf_counter()
    for _ in range(K):
        x_pre = state.x_curr
        state, info = step_two_level(problem, state, schedule, records)
        if state.k % metrics_every == 0 or state.k == K:
            metrics = engine.measure(state.x_curr, x_pre, state.y)
            rec = _make_record(
                state.k, state.x_curr, (info["alpha"], info["beta"], info["gamma"]),
                metrics, info["eta_sq"], state.counts, t0, timing,
            )
            records.append(rec)
            for hook in hooks:
                hook(state, rec)
    return records


def _resolve_y0_multi(problem: MultiLevelProblem, x0: ManifoldPoint, y0_policy,
                      streams: SampleStreams, counts: OracleCounts) -> list[np.ndarray]:
    levels = problem.levels
    if isinstance(y0_policy, str):
        if y0_policy == "sample":
            rng = streams.stream("init")
            y = []
            cur: Any = x0
            for i, lev in enumerate(levels[:-1]):
                theta = lev.draw_theta(rng)
                cur = np.asarray(lev.sample_value(cur, theta), dtype=float)
                if i == 0:
                    counts.inner_value += 1
                else:
                    counts.mid_value += 1
                y.append(cur)
            return y
        if y0_policy == "exact":
            if not problem.has_exact_oracles():
                raise ContractViolation("y0_policy 'exact' needs exact per-level oracles")
            y = []
            cur: Any = x0
            for lev in levels[:-1]:
                cur = np.asarray(lev.exact_value(cur), dtype=float)
                y.append(cur)
            return y
        raise ContractViolation(f"unknown y0 policy {y0_policy!r}")
    if callable(y0_policy):
        return [np.asarray(v, dtype=float) for v in y0_policy(x0)]
    vals = [np.asarray(v, dtype=float) for v in y0_policy]
    if len(vals) != len(levels) - 1:
        raise ContractViolation(f"y0 must supply {len(levels) - 1} tracker values")
    return vals


def step_multi_level(problem: MultiLevelProblem, state: MultiLevelState, schedule: Schedule,
                     records: Optional[list] = None) -> tuple[MultiLevelState, dict]:
    """One multi-level step: sequential tracker updates, then the chain-rule
    gradient estimate with the same per-level sample tokens."""
    k = state.k
    recs = records if records is not None else []
    alpha = schedule.alpha
    beta = schedule.beta
    gamma = schedule.gamma(k)
    levels = problem.levels
    n_trackers = len(levels) - 1
    thetas = []
    y_new: list[np.ndarray] = []
    g_at_x = None
    for n in range(n_trackers):
        lev = levels[n]
        theta = lev.draw_theta(state.streams.stream(f"theta_{n + 1}"))
        thetas.append(theta)
        if n == 0:
            v_curr = np.asarray(lev.sample_value(state.x_curr, theta), dtype=float)
            v_prev = np.asarray(lev.sample_value(state.x_prev, theta), dtype=float)
            state.counts.inner_value += 2
            g_at_x = v_curr
        else:
            v_curr = np.asarray(lev.sample_value(y_new[n - 1], theta), dtype=float)
            v_prev = np.asarray(lev.sample_value(state.y[n - 1], theta), dtype=float)
            state.counts.mid_value += 2
        upd = state.y[n] - beta * (state.y[n] - v_curr) + gamma * (v_curr - v_prev)
        _check_finite(upd, f"tracker {n + 1}", k, recs)
        y_new.append(upd)
    theta_last = levels[-1].draw_theta(state.streams.stream(f"theta_{len(levels)}"))
    thetas.append(theta_last)
    # covector chain, right to left, with per-stage checks
    w = np.asarray(levels[-1].sample_jacobian_T(y_new[-1], theta_last, np.ones(1)), dtype=float)
    state.counts.outer_grad += 1
    _check_finite(w, f"level-{len(levels)} gradient", k, recs)
    for i in range(len(levels) - 2, 0, -1):
        w = np.asarray(levels[i].sample_jacobian_T(y_new[i - 1], thetas[i], w), dtype=float)
        state.counts.mid_jacobian += 1
        _check_finite(w, f"level-{i + 1} covector", k, recs)
    if not isinstance(problem.inner_codomain, Euclidean):
        w = project_covector(problem.inner_codomain, g_at_x, w)
    try:
        eta = levels[0].sample_adjoint(state.x_curr, thetas[0], w)
    except ContractViolation as exc:
        raise NumericalAbort(f"invalid gradient estimate at iteration {k}: {exc}",
                             records=recs) from exc
    state.counts.inner_adjoint += 1
    _check_finite(eta.coords, "gradient estimate", k, recs)
    x_new = exp_map(state.x_curr, scale(eta, -alpha))
    new_state = MultiLevelState(
        x_prev=state.x_curr, x_curr=x_new, y=y_new, k=k + 1,
        streams=state.streams, counts=state.counts,
    )
    info = {"eta_sq": norm_sq(eta), "alpha": alpha, "beta": beta, "gamma": gamma}
    return new_state, info


def run_multi_level(
    problem: MultiLevelProblem,
    x0: ManifoldPoint,
    schedule: Schedule,
    K: Optional[int] = None,
    seed: int = 0,
    replication: int = 0,
    y0_policy="sample",
    metrics_every: int = 1,
    hooks: Sequence[Callable] = (),
    stream_tags: Optional[Sequence[str]] = None,
    timing: bool = True,
) -> list[IterationRecord]:
    """Multi-level analogue of run_two_level; one tracker per inner level."""
    K = schedule.K if K is None else K
    if K < 1:
        raise ContractViolation("K must be >= 1")
    streams = SampleStreams(master_seed=seed, replication=replication)
    if stream_tags is not None:
        if len(stream_tags) != problem.n_levels:
            raise ContractViolation("stream_tags must name one stream per level")
        for n, tag in enumerate(stream_tags, start=1):
            streams.alias(f"theta_{n}", tag)
    counts = OracleCounts()
    y0 = _resolve_y0_multi(problem, x0, y0_policy, streams, counts)
    state = MultiLevelState(x_prev=x0, x_curr=x0, y=y0, k=0, streams=streams, counts=counts)
    engine = _MetricsEngine(problem, streams)
    records: list[IterationRecord] = []
    t0 = time.perf_counter()
    for _ in range(K):
        x_pre = state.x_curr
        state, info = step_multi_level(problem, state, schedule, records)
        if state.k % metrics_every == 0 or state.k == K:
            metrics = engine.measure(state.x_curr, x_pre, state.y)
            rec = _make_record(
                state.k, state.x_curr, (info["alpha"], info["beta"], info["gamma"]),
                metrics, info["eta_sq"], state.counts, t0, timing,
            )
            records.append(rec)
            for hook in hooks:
                hook(state, rec)
    return records


def step_biased_rsgd(problem: TwoLevelProblem, state: BiasedState, alpha_k: float,
                     records: Optional[list] = None) -> tuple[BiasedState, dict]:
    """Baseline step: eta from a single inner sample plugged into the outer
    gradient (biased through the nonlinearity of f)."""
    recs = records if records is not None else []
    phi = problem.draw_phi(state.streams.stream("phi"))
    xi = problem.draw_xi(state.streams.stream("xi"))
    g_val = np.asarray(problem.sample_inner_value(state.x_curr, phi), dtype=float)
    state.counts.inner_value += 1
    _check_finite(g_val, "inner value", state.k, recs)
    eta = _eta_checked(problem, state.x_curr, g_val, phi, xi, g_val, state.k, recs)
    state.counts.inner_adjoint += 1
    state.counts.outer_grad += 1
    x_new = exp_map(state.x_curr, scale(eta, -alpha_k))
    new_state = BiasedState(x_curr=x_new, k=state.k + 1, streams=state.streams, counts=state.counts)
    info = {"eta_sq": norm_sq(eta), "alpha": alpha_k, "beta": float("nan"), "gamma": float("nan")}
    return new_state, info


def run_biased_rsgd(
    problem: TwoLevelProblem,
    x0: ManifoldPoint,
    alpha: float,
    K: int,
    seed: int = 0,
    replication: int = 0,
    metrics_every: int = 1,
    mc_samples: int = 64,
    hooks: Sequence[Callable] = (),
    timing: bool = True,
) -> list[IterationRecord]:
    if K < 1:
        raise ContractViolation("K must be >= 1")
    streams = SampleStreams(master_seed=seed, replication=replication)
    state = BiasedState(x_curr=x0, k=0, streams=streams)
    engine = _MetricsEngine(problem, streams, mc_samples)
    records: list[IterationRecord] = []
    t0 = time.perf_counter()
    for _ in range(K):
        x_pre = state.x_curr
        state, info = step_biased_rsgd(problem, state, alpha, records)
        if state.k % metrics_every == 0 or state.k == K:
            metrics = engine.measure(state.x_curr, x_pre, None)
            rec = _make_record(
                state.k, state.x_curr, (info["alpha"], info["beta"], info["gamma"]),
                metrics, info["eta_sq"], state.counts, t0, timing,
            )
            records.append(rec)
            for hook in hooks:
                hook(state, rec)
    return records
