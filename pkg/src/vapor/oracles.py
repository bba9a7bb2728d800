"""Exact and Monte-Carlo ground truth for the probability of state-action optimality.

Under known dynamics, the probability that ``(s, a)`` is visited at step ``l``
by the optimal policy of the (random) environment is itself an occupancy
measure: the posterior mixture of the optimal occupancies.  On finite-support
priors it is computed exactly; for continuous posteriors it is estimated by
averaging posterior-sampling occupancies.
"""
from __future__ import annotations

from functools import cached_property

import numpy as np

from .bayes import TransformedBeliefs
from .mdp import (
    LayeredMdp,
    backward_induction,
    occupancy_from_policy,
    optimal_return,
)


class FiniteSupportPrior:
    """A discrete prior over MDPs that share shape, ``rho`` and (usually) ``P``."""

    def __init__(self, mdps, weights):
        self.mdps = list(mdps)
        w = np.asarray(weights, dtype=float)
        if len(self.mdps) == 0 or w.shape != (len(self.mdps),):
            raise ValueError("need one weight per MDP")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be a probability vector")
        self.weights = w
        base = self.mdps[0]
        for m in self.mdps[1:]:
            if m.layer_sizes != base.layer_sizes or m.A != base.A:
                raise ValueError("support MDPs must share their shape")
            if not np.array_equal(m.rho, base.rho):
                raise ValueError("support MDPs must share rho")

    # shape, mirroring BeliefState
    @property
    def L(self):
        return self.mdps[0].L

    @property
    def A(self):
        return self.mdps[0].A

    @property
    def layer_sizes(self):
        return self.mdps[0].layer_sizes

    @property
    def rho(self):
        return self.mdps[0].rho

    @cached_property
    def shared_P(self) -> bool:
        base = self.mdps[0].P
        return all(all(np.array_equal(p, q) for p, q in zip(base, m.P)) for m in self.mdps[1:])

    def mean_transitions(self) -> list:
        return [sum(w * m.P[l] for w, m in zip(self.weights, self.mdps)) for l in range(self.L - 1)]

    @property
    def reward_mu(self) -> list:
        return [sum(w * m.r[l] for w, m in zip(self.weights, self.mdps)) for l in range(self.L)]

    def reward_std(self) -> list:
        mu = self.reward_mu
        return [
            np.sqrt(np.maximum(sum(w * (m.r[l] - mu[l]) ** 2 for w, m in zip(self.weights, self.mdps)), 0.0))
            for l in range(self.L)
        ]

    def transformed(self, sigma_mode=None, value_range=None) -> TransformedBeliefs:
        """Known-dynamics view: mean rewards and their exact prior spread as the uncertainty."""
        self._require_shared_P()
        return TransformedBeliefs(list(self.mdps[0].P), self.reward_mu, self.reward_std(), self.rho)

    def sample_index(self, rng, size=None):
        return rng.choice(len(self.mdps), size=size, p=self.weights)

    def sample_mdp(self, rng) -> LayeredMdp:
        return self.mdps[int(self.sample_index(rng))]

    def sample_counts(self, rng, n: int) -> np.ndarray:
        """How many of ``n`` independent posterior draws land on each support point."""
        return rng.multinomial(n, self.weights)

    def optimal_policy_mixture(self, counts) -> list:
        """Per-layer mixture of the members' optimal policies in proportion to ``counts``.

        Memoised per count vector, so repeated draws share one policy object.
        """
        key = tuple(int(c) for c in counts)
        mix = self._mixtures.get(key)
        if mix is None:
            n = sum(key)
            mix = [sum(c * p[l] for c, p in zip(key, self.optimal_policies)) / n for l in range(self.L)]
            self._mixtures[key] = mix
        return mix

    @cached_property
    def _mixtures(self) -> dict:
        return {}

    @cached_property
    def optimal_policies(self) -> list:
        return [backward_induction(m)[1] for m in self.mdps]

    @cached_property
    def optimal_occupancies(self) -> list:
        return [occupancy_from_policy(m.P, m.rho, pi) for m, pi in zip(self.mdps, self.optimal_policies)]

    @cached_property
    def optimal_values(self) -> np.ndarray:
        return np.array([optimal_return(m) for m in self.mdps])

    @cached_property
    def _same_mean(self) -> list:
        """Per layer, the cells where every support point has the same mean reward."""
        return [np.all([m.r[l] == self.mdps[0].r[l] for m in self.mdps], axis=0) for l in range(self.L)]

    @cached_property
    def _all_noisy(self) -> bool:
        return all(m.reward_noise_std > 0 for m in self.mdps)

    def condition(self, l, s, a, r_obs, s_next=None, replication: int = 1, tol: float = 1e-9):
        """Posterior after ``replication`` copies of one observed transition.

        Noise-free support points (``reward_noise_std == 0``) are kept only when
        their mean matches ``r_obs`` within ``tol``; noisy ones are reweighted by
        the Gaussian likelihood.  Returns ``self`` when nothing changes.
        """
        base = self.mdps[0]
        if (
            self.shared_P
            and self._same_mean[l][s, a]
            and (self._all_noisy or abs(r_obs - base.r[l][s, a]) <= tol)
            and (s_next is None or l >= base.L - 1 or base.P[l][s, a, s_next] > 0)
        ):
            # every support point predicts the same observation: nothing to learn
            return self
        means = [m.r[l][s, a] for m in self.mdps]
        logw = np.log(np.where(self.weights > 0, self.weights, 1.0))
        logw = np.where(self.weights > 0, logw, -np.inf)
        for i, m in enumerate(self.mdps):
            mean = means[i]
            if m.reward_noise_std > 0:
                logw[i] += -0.5 * replication * ((r_obs - mean) / m.reward_noise_std) ** 2
            elif abs(r_obs - mean) > tol:
                logw[i] = -np.inf
            if s_next is not None and l < m.L - 1:
                p = m.P[l][s, a, s_next]
                logw[i] += replication * np.log(p) if p > 0 else -np.inf
        if not np.any(np.isfinite(logw)):
            raise ValueError("observation has zero probability under every support point")
        w = np.exp(logw - logw[np.isfinite(logw)].max())
        w /= w.sum()
        if np.allclose(w, self.weights, rtol=0, atol=1e-15):
            return self
        keep = w > 0
        return FiniteSupportPrior([m for m, k in zip(self.mdps, keep) if k], w[keep] / w[keep].sum())

    def _require_shared_P(self):
        if not self.shared_P:
            raise ValueError("this operation needs transition tables shared across the support")


def _mix(tables_list, coef):
    return [sum(c * t[l] for c, t in zip(coef, tables_list)) for l in range(len(tables_list[0]))]


def exact_pgamma(prior: FiniteSupportPrior) -> list:
    """Posterior mixture of optimal occupancies (requires shared dynamics)."""
    prior._require_shared_P()
    return _mix(prior.optimal_occupancies, prior.weights)


def ts_monte_carlo_pgamma(b, n_samples: int, rng, sampled_P: bool = False) -> list:
    """Average over ``n_samples`` posterior draws of the greedy policy's occupancy.

    Occupancies are taken under the mean dynamics unless ``sampled_P``, in which
    case each draw is rolled out under its own sampled dynamics.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if isinstance(b, FiniteSupportPrior):
        counts = b.sample_counts(rng, n_samples)
        occ = b.optimal_occupancies if (sampled_P or b.shared_P) else [
            occupancy_from_policy(b.mean_transitions(), b.rho, pi) for pi in b.optimal_policies
        ]
        return _mix(occ, counts / n_samples)
    P_mean = b.mean_transitions()
    total = None
    for _ in range(n_samples):
        m = b.sample_mdp(rng)
        _, pi = backward_induction(m)
        lam = occupancy_from_policy(m.P if sampled_P else P_mean, b.rho, pi)
        total = lam if total is None else [t + x for t, x in zip(total, lam)]
    return [t / n_samples for t in total]


def weighted_kl(tau, lam_p, lam_q) -> float:
    """``sum tau p log(p / q)`` with ``0 log 0 = 0``.

    Cells with infinite (sentinel) temperature are left out of the sum; a cell
    with ``p > 0 = q`` and positive finite ``tau`` makes the result ``+inf``.
    """
    total = 0.0
    for t, p, q in zip(tau, lam_p, lam_q):
        t, p, q = (np.asarray(x, dtype=float) for x in (t, p, q))
        use = np.isfinite(t) & (t > 0) & (p > 0)
        if np.any(use & (q <= 0)):
            return np.inf
        total += float(np.sum(t[use] * p[use] * np.log(p[use] / q[use])))
    return total


def exact_expected_vstar(prior: FiniteSupportPrior) -> float:
    return float(prior.weights @ prior.optimal_values)


def mc_expected_vstar(b, n_samples: int, rng):
    """Monte-Carlo posterior mean of ``rho . V_1*`` and its standard error."""
    if n_samples < 2:
        raise ValueError("need at least two samples for a standard error")
    if isinstance(b, FiniteSupportPrior):
        vals = b.optimal_values[b.sample_index(rng, size=n_samples)]
    else:
        vals = np.array([optimal_return(b.sample_mdp(rng)) for _ in range(n_samples)])
    return float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(n_samples))
