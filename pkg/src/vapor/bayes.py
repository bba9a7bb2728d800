"""Conjugate beliefs over a layered MDP and the known-dynamics reduction.

Transitions carry independent Dirichlet posteriors per ``(l, s, a)`` and mean
rewards independent Gaussian posteriors with known observation noise ``nu``.
Only sufficient statistics are stored (pseudo-counts, visit counts, reward
sums), so a replicated observation is a single arithmetic update.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .mdp import LayeredMdp

# inflation of the reward scale when unknown dynamics are folded into rewards
TRANSFORM_REWARD_SCALE = 3.6
SIGMA_MODES = ("count_bound", "exact_posterior_std")


class TransformedBeliefs(NamedTuple):
    P_mean: list
    reward_mu: list
    sigma_tilde: list
    rho: np.ndarray


@dataclass
class BeliefState:
    """Posterior over ``(P, r)``.  ``alpha`` is ``None`` when the dynamics are known."""

    rho: np.ndarray
    alpha: list | None
    prior_mu: list
    prior_var: list
    nu: float
    counts: list
    reward_sum: list
    known_P: list | None = None

    # -- shape ---------------------------------------------------------------
    @property
    def L(self) -> int:
        return len(self.counts)

    @property
    def A(self) -> int:
        return self.counts[0].shape[1]

    @property
    def layer_sizes(self) -> tuple:
        return tuple(c.shape[0] for c in self.counts)

    def copy(self) -> "BeliefState":
        cp = lambda xs: None if xs is None else [np.array(x, copy=True) for x in xs]
        return BeliefState(
            self.rho.copy(), cp(self.alpha), cp(self.prior_mu), cp(self.prior_var), self.nu,
            cp(self.counts), cp(self.reward_sum), self.known_P,
        )

    # -- posterior moments ----------------------------------------------------
    def reward_posterior(self):
        """Per-layer ``(mean, variance)`` of the Gaussian posterior on mean rewards."""
        means, variances = [], []
        for m0, v0, n, tot in zip(self.prior_mu, self.prior_var, self.counts, self.reward_sum):
            if self.nu**2 > 0:
                prec = np.where(v0 > 0, 1.0 / np.where(v0 > 0, v0, 1.0), np.inf) + n / self.nu**2
                with np.errstate(invalid="ignore", divide="ignore"):
                    mean = (np.where(v0 > 0, m0 / np.where(v0 > 0, v0, 1.0), 0.0) + tot / self.nu**2) / prec
                mean = np.where(np.isinf(prec), m0, mean)
                var = 1.0 / prec
            else:
                # noiseless observations: the first visit reveals the mean
                seen = n > 0
                mean = np.where(seen, tot / np.where(seen, n, 1.0), m0)
                var = np.where(seen, 0.0, v0)
            means.append(mean)
            variances.append(var)
        return means, variances

    @property
    def reward_mu(self) -> list:
        return self.reward_posterior()[0]

    def mean_transitions(self) -> list:
        if self.alpha is None:
            return [np.asarray(p, dtype=float) for p in self.known_P]
        return [a / a.sum(axis=2, keepdims=True) for a in self.alpha]

    def transformed(self, sigma_mode: str = "count_bound", value_range: float | None = None) -> TransformedBeliefs:
        return transform_beliefs(self, sigma_mode, value_range)

    def sample_mdp(self, rng) -> LayeredMdp:
        return sample_mdp(self, rng)

    # -- persistence -----------------------------------------------------------
    def to_json(self) -> str:
        doc = {
            "L": self.L,
            "alpha": None if self.alpha is None else [a.tolist() for a in self.alpha],
            "reward_mu": [m.tolist() for m in self.reward_mu],
            "reward_count": [c.tolist() for c in self.counts],
            "nu": self.nu,
            "reward_sum": [x.tolist() for x in self.reward_sum],
            "prior_mu": [x.tolist() for x in self.prior_mu],
            "prior_var": [x.tolist() for x in self.prior_var],
            "rho": self.rho.tolist(),
            "known_P": None if self.known_P is None else [np.asarray(p).tolist() for p in self.known_P],
        }
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str) -> "BeliefState":
        doc = json.loads(text)
        arr = lambda xs: None if xs is None else [np.asarray(x, dtype=float) for x in xs]
        b = cls(
            rho=np.asarray(doc["rho"], dtype=float),
            alpha=arr(doc["alpha"]),
            prior_mu=arr(doc["prior_mu"]),
            prior_var=arr(doc["prior_var"]),
            nu=float(doc["nu"]),
            counts=arr(doc["reward_count"]),
            reward_sum=arr(doc["reward_sum"]),
            known_P=arr(doc["known_P"]),
        )
        if b.L != doc["L"]:
            raise ValueError("snapshot layer count does not match its tables")
        return b


def belief_init(layer_sizes, A: int, rho, dirichlet_scale=None, reward_prior=(0.0, 1.0),
                nu: float = 1.0, known_P=None) -> BeliefState:
    """Symmetric Dirichlet transition prior and Gaussian reward prior per cell.

    ``dirichlet_scale=None`` uses ``1/sqrt(S_{l+1})`` for layer ``l``.  Any row
    whose pseudo-counts sum below 1 is rescaled to sum exactly 1.  Passing
    ``known_P`` drops the transition posterior altogether.
    """
    layer_sizes = tuple(int(s) for s in layer_sizes)
    L = len(layer_sizes)
    if nu < 0:
        raise ValueError("nu must be non-negative")
    mu0, var0 = reward_prior
    if var0 < 0:
        raise ValueError("prior variance must be non-negative")
    alpha = None
    if known_P is None:
        alpha = []
        for l in range(L - 1):
            nxt = layer_sizes[l + 1]
            scale = 1.0 / np.sqrt(nxt) if dirichlet_scale is None else float(dirichlet_scale)
            if scale <= 0:
                raise ValueError("dirichlet_scale must be positive")
            scale = max(scale, 1.0 / nxt)
            alpha.append(np.full((layer_sizes[l], A, nxt), scale))
    else:
        known_P = [np.asarray(p, dtype=float) for p in known_P]
    shape = lambda S: (S, A)
    return BeliefState(
        rho=np.asarray(rho, dtype=float),
        alpha=alpha,
        prior_mu=[np.full(shape(S), float(mu0)) for S in layer_sizes],
        prior_var=[np.full(shape(S), float(var0)) for S in layer_sizes],
        nu=float(nu),
        counts=[np.zeros(shape(S)) for S in layer_sizes],
        reward_sum=[np.zeros(shape(S)) for S in layer_sizes],
        known_P=known_P,
    )


def belief_update(b: BeliefState, l: int, s: int, a: int, r_obs: float, s_next=None,
                  replication: int = 1) -> BeliefState:
    """Add ``replication`` copies of one observed transition (in place; returns ``b``)."""
    if replication < 1:
        raise ValueError("replication must be >= 1")
    if not (0 <= l < b.L and 0 <= s < b.layer_sizes[l] and 0 <= a < b.A):
        raise IndexError(f"cell ({l}, {s}, {a}) out of range")
    b.counts[l][s, a] += replication
    b.reward_sum[l][s, a] += replication * r_obs
    if b.alpha is not None and l < b.L - 1:
        if s_next is None or not 0 <= s_next < b.layer_sizes[l + 1]:
            raise IndexError(f"next state {s_next} out of range at layer {l + 1}")
        b.alpha[l][s, a, s_next] += replication
    return b


def uncertainty_sigma(b: BeliefState, mode: str = "count_bound") -> list:
    """Per-cell reward uncertainty.

    ``count_bound``: ``sqrt((nu^2 + 1) / max(n, 1))``.
    ``exact_posterior_std``: standard deviation of the Gaussian posterior.
    """
    if mode == "count_bound":
        return [np.sqrt((b.nu**2 + 1.0) / np.maximum(n, 1.0)) for n in b.counts]
    if mode == "exact_posterior_std":
        return [np.sqrt(v) for v in b.reward_posterior()[1]]
    raise ValueError(f"unknown sigma mode {mode!r}")


def transformed_sigma(sigma, alpha_totals, L: int, value_range: float | None = None) -> list:
    """``sqrt(3.6^2 sigma^2 + (L - l)^2 / sum alpha)`` with 1-indexed ``l``.

    ``L - l`` is the span of the value-to-go when every mean reward lies in
    [0, 1]; ``value_range`` caps that span when returns are known to be
    narrower.  ``alpha_totals`` is ``None`` for known dynamics (second term
    dropped); the last layer has no transition term either way.
    """
    out = []
    for l, s in enumerate(sigma):
        var = (TRANSFORM_REWARD_SCALE * np.asarray(s, dtype=float)) ** 2
        if alpha_totals is not None and l < L - 1:
            span = L - 1 - l if value_range is None else min(L - 1 - l, value_range)
            var = var + span**2 / alpha_totals[l]
        out.append(np.sqrt(var))
    return out


def transform_beliefs(b: BeliefState, sigma_mode: str = "count_bound",
                      value_range: float | None = None) -> TransformedBeliefs:
    """Mean dynamics plus inflated reward uncertainty, reducing to the known-P case."""
    sigma = uncertainty_sigma(b, sigma_mode)
    totals = None if b.alpha is None else [a.sum(axis=2) for a in b.alpha]
    sig = transformed_sigma(sigma, totals, b.L, value_range)
    return TransformedBeliefs(b.mean_transitions(), b.reward_mu, sig, b.rho)


def _dirichlet_rows(rng, alpha):
    """Vectorised Dirichlet draws along the last axis."""
    g = rng.standard_gamma(alpha)
    tot = g.sum(axis=-1, keepdims=True)
    bad = tot[..., 0] <= 0
    if np.any(bad):
        # every gamma underflowed: fall back to numpy's small-alpha sampler
        for idx in zip(*np.nonzero(bad)):
            g[idx] = rng.dirichlet(alpha[idx])
        tot = g.sum(axis=-1, keepdims=True)
    return g / tot


def sample_mdp(b: BeliefState, rng) -> LayeredMdp:
    """One posterior draw of the environment (dynamics and mean rewards)."""
    P = b.known_P if b.alpha is None else [_dirichlet_rows(rng, a) for a in b.alpha]
    means, variances = b.reward_posterior()
    r = [m + np.sqrt(v) * rng.standard_normal(m.shape) for m, v in zip(means, variances)]
    return LayeredMdp(P, r, b.rho, b.nu)


def sample_transformed_rewards(t: TransformedBeliefs, rng) -> list:
    """Independent draws ``r ~ N(reward_mu, sigma_tilde^2)`` per cell."""
    return [m + s * rng.standard_normal(m.shape) for m, s in zip(t.reward_mu, t.sigma_tilde)]
