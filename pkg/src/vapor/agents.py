"""Episodic policy producers: beliefs in, per-layer action distributions out.

Every function accepts either a :class:`~vapor.bayes.BeliefState` or a
:class:`~vapor.oracles.FiniteSupportPrior`; both expose ``transformed``,
``sample_mdp``, ``reward_mu``, ``mean_transitions`` and ``rho``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .bayes import sample_transformed_rewards
from .mdp import backward_induction_tables, occupancy_from_policy, policy_from_occupancy
from .oracles import FiniteSupportPrior, exact_pgamma
from .solver import (
    SolverOptions,
    VaporProblem,
    solve_frank_wolfe,
    solve_vapor_lite_tabular,
    vapor_lite_schedule,
)


class AgentKind(str, enum.Enum):
    VAPOR = "vapor"
    PSRL = "psrl"
    KLEARNING = "klearning"
    SOFT_Q = "soft_q"
    MARGINAL = "marginal"
    RLSVI = "rlsvi"
    VAPOR_LITE = "vapor_lite"
    PGAMMA = "pgamma"


def _problem(b, sigma_mode, value_range=None) -> VaporProblem:
    t = b.transformed(sigma_mode, value_range)
    return VaporProblem(t.P_mean, t.rho, t.reward_mu, t.sigma_tilde)


def vapor_policy(b, opts: SolverOptions | None = None, sigma_mode: str = "count_bound", init=None,
                 value_range=None):
    """Solve the VAPOR program on the transformed beliefs; returns ``(policy, diagnostics, lam)``."""
    prob = _problem(b, sigma_mode, value_range)
    lam, diag = solve_frank_wolfe(prob, opts, init=init)
    return policy_from_occupancy(lam), diag, lam


def psrl_policy(b, rng) -> list:
    """Greedy policy of one posterior draw."""
    m = b.sample_mdp(rng)
    return backward_induction_tables(m.P, m.r)[1]


def _logsumexp_rows(x):
    m = x.max(axis=1)
    return m + np.log(np.exp(x - m[:, None]).sum(axis=1))


def _softmax_rows(x):
    e = np.exp(x - x.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def soft_values(P, reward, tau):
    """Soft backup ``V_l = tau logsumexp(Q_l / tau)``, ``Q_l = reward_l + P_l V_{l+1}``.

    ``tau`` may be a scalar or per-layer tables; returns ``(Q, V)`` lists.
    """
    L = len(reward)
    Q, V = [None] * L, [None] * L
    v_next = None
    for l in range(L - 1, -1, -1):
        t = tau if np.isscalar(tau) else tau[l]
        q = reward[l] if v_next is None else reward[l] + P[l] @ v_next
        Q[l] = q
        V[l] = t * _logsumexp_rows(q / t)
        v_next = V[l]
    return Q, V


def soft_q_policy(r_source, P_source, temperature: float = 1.0) -> list:
    """Boltzmann policy of soft value iteration on expected rewards (no epistemic term)."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    Q, _ = soft_values(P_source, r_source, temperature)
    return [_softmax_rows(q / temperature) for q in Q]


def _klearning_values(P, r, sigma2, tau):
    return soft_values(P, [x + s / (2 * tau) for x, s in zip(r, sigma2)], tau)


def klearning_temperature(P, rho, r, sigma, tau_bounds=(1e-3, 1e3), grid: int = 41):
    """Scalar temperature minimising ``g(tau) = rho . V_1(tau)`` (soft values with bonus ``sigma^2/(2 tau)``)."""
    lo, hi = tau_bounds
    if not 0 < lo < hi:
        raise ValueError("need 0 < tau_min < tau_max")
    sigma2 = [np.asarray(s, dtype=float) ** 2 for s in sigma]

    def g(log_tau):
        return float(rho @ _klearning_values(P, r, sigma2, np.exp(log_tau))[1][0])

    xs = np.linspace(np.log(lo), np.log(hi), grid)
    vals = np.array([g(x) for x in xs])
    i = int(np.argmin(vals))
    a, c = xs[max(i - 1, 0)], xs[min(i + 1, grid - 1)]
    if c > a:
        res = minimize_scalar(g, bounds=(a, c), method="bounded", options={"xatol": 1e-10})
        if res.fun <= vals[i]:
            return float(np.exp(res.x)), float(res.fun)
    return float(np.exp(xs[i])), float(vals[i])


def klearning_policy(b, tau_bounds=(1e-3, 1e3), sigma_mode: str = "count_bound", grid: int = 41,
                     value_range=None) -> list:
    """Equal-temperature soft backup on the transformed beliefs; Boltzmann policy at the optimal ``tau``."""
    t = b.transformed(sigma_mode, value_range)
    tau, _ = klearning_temperature(t.P_mean, t.rho, t.reward_mu, t.sigma_tilde, tau_bounds, grid)
    sigma2 = [s**2 for s in t.sigma_tilde]
    K, _ = _klearning_values(t.P_mean, t.reward_mu, sigma2, tau)
    return [_softmax_rows(k / tau) for k in K]


def marginal_optimality_policy(b, n_samples: int, rng) -> list:
    """Per-state frequency with which each action is optimal across posterior draws."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if isinstance(b, FiniteSupportPrior):
        return b.optimal_policy_mixture(b.sample_counts(rng, n_samples))
    total = None
    for _ in range(n_samples):
        pi = psrl_policy(b, rng)
        total = pi if total is None else [t + p for t, p in zip(total, pi)]
    return [t / n_samples for t in total]


def pgamma_policy(prior: FiniteSupportPrior) -> list:
    """Policy induced by the exact posterior probability of optimality (finite-support priors only)."""
    if not isinstance(prior, FiniteSupportPrior):
        raise TypeError("the exact P(Gamma) policy needs a finite-support prior")
    return policy_from_occupancy(exact_pgamma(prior))


def rlsvi_variant_policy(b, rng, sigma_mode: str = "count_bound", value_range=None) -> list:
    """Greedy policy under mean dynamics and one draw of the inflated rewards."""
    t = b.transformed(sigma_mode, value_range)
    r = sample_transformed_rewards(t, rng)
    return backward_induction_tables(t.P_mean, r)[1]


def vapor_lite_policy(b, t: int, opts: SolverOptions | None = None, sigma_mode: str = "count_bound",
                      init=None, value_range=None):
    """Policy-entropy relaxation with the episode-indexed scale; returns ``(policy, diagnostics, lam)``."""
    prob = _problem(b, sigma_mode, value_range)
    c = vapor_lite_schedule(prob.layout.n_states, prob.layout.L, t)
    lam, diag = solve_vapor_lite_tabular(prob, c, opts, init=init)
    return policy_from_occupancy(lam), diag, lam


# --- stateful wrappers used by the learning loop -----------------------------------


@dataclass
class AgentSpec:
    kind: AgentKind
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.kind = AgentKind(self.kind)
        for key in ("temperature", "n_samples"):
            if key in self.params and not self.params[key] > 0:
                raise ValueError(f"{key} must be positive")


class Agent:
    """Maps ``(beliefs, episode, rng)`` to a policy plus solver diagnostics."""

    def __init__(self, spec: AgentSpec, solver: SolverOptions | None = None, sigma_mode: str = "count_bound",
                 warm_start: bool = True, value_range: float | None = None):
        self.spec = spec
        self.value_range = spec.params.get("value_range", value_range)
        self.solver = solver or SolverOptions()
        self.sigma_mode = spec.params.get("sigma_mode", sigma_mode)
        self.warm_start = warm_start
        self._last_policy = None
        self._cache = None  # (prior, policy) for deterministic agents on immutable finite priors

    @property
    def name(self) -> str:
        return self.spec.kind.value

    def _init(self, b):
        if not self.warm_start or self._last_policy is None:
            return None
        return occupancy_from_policy(b.mean_transitions(), b.rho, self._last_policy)

    def policy(self, b, t: int, rng):
        kind = self.spec.kind
        cacheable = isinstance(b, FiniteSupportPrior) and kind in (
            AgentKind.SOFT_Q, AgentKind.KLEARNING, AgentKind.PGAMMA)
        if cacheable and self._cache is not None and self._cache[0] is b:
            return self._cache[1], {"fw_gap": float("nan"), "fw_iters": 0}
        pi, info = self._compute(b, t, rng)
        if cacheable:
            self._cache = (b, pi)
        return pi, info

    def _compute(self, b, t: int, rng):
        kind, p = self.spec.kind, self.spec.params
        info = {"fw_gap": float("nan"), "fw_iters": 0}
        if kind in (AgentKind.VAPOR, AgentKind.VAPOR_LITE):
            if kind is AgentKind.VAPOR:
                pi, diag, _ = vapor_policy(b, self.solver, self.sigma_mode, self._init(b), self.value_range)
            else:
                pi, diag, _ = vapor_lite_policy(b, t, self.solver, self.sigma_mode, self._init(b),
                                                  self.value_range)
            info = {"fw_gap": diag.fw_gap, "fw_iters": diag.iterations}
            self._last_policy = pi
        elif kind is AgentKind.PSRL:
            pi = psrl_policy(b, rng)
        elif kind is AgentKind.KLEARNING:
            pi = klearning_policy(b, tuple(p.get("tau_bounds", (1e-3, 1e3))), self.sigma_mode,
                                  value_range=self.value_range)
        elif kind is AgentKind.SOFT_Q:
            pi = soft_q_policy(b.reward_mu, b.mean_transitions(), p.get("temperature", 1.0))
        elif kind is AgentKind.MARGINAL:
            pi = marginal_optimality_policy(b, int(p.get("n_samples", 100)), rng)
        elif kind is AgentKind.PGAMMA:
            pi = pgamma_policy(b)
        elif kind is AgentKind.RLSVI:
            pi = rlsvi_variant_policy(b, rng, self.sigma_mode, self.value_range)
        else:  # pragma: no cover - enum is exhaustive
            raise ValueError(kind)
        return pi, info
