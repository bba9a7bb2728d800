"""Finite layered MDPs, exact dynamic programming and occupancy-measure algebra.

A layered MDP with ``L`` layers stores

* ``P[l]`` with shape ``(S_l, A, S_{l+1})`` for ``l = 0 .. L-2`` (the last layer
  has no successor, ``V_{L+1} = 0``),
* ``r[l]`` with shape ``(S_l, A)`` for ``l = 0 .. L-1``,
* ``rho`` with shape ``(S_1,)``.

Occupancy measures, policies and per-cell tables (rewards, uncertainties,
temperatures) are plain lists of ``(S_l, A)`` arrays.  Layers are 0-indexed in
code; the horizon position of layer ``l`` is ``l + 1``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

@dataclass(frozen=True)
class LayeredMdp:
    P: tuple
    r: tuple
    rho: np.ndarray
    reward_noise_std: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "P", tuple(np.asarray(p, dtype=float) for p in self.P))
        object.__setattr__(self, "r", tuple(np.asarray(x, dtype=float) for x in self.r))
        object.__setattr__(self, "rho", np.asarray(self.rho, dtype=float))
        for arr in (*self.P, *self.r, self.rho):
            arr.setflags(write=False)
        object.__setattr__(self, "_sizes", tuple(x.shape[0] for x in self.r))

    @property
    def L(self) -> int:
        return len(self.r)

    @property
    def A(self) -> int:
        return self.r[0].shape[1]

    @property
    def layer_sizes(self) -> tuple:
        return self._sizes

    @property
    def S(self) -> int:
        return sum(self.layer_sizes)

    def replace(self, **changes) -> "LayeredMdp":
        kw = dict(P=self.P, r=self.r, rho=self.rho, reward_noise_std=self.reward_noise_std)
        kw.update(changes)
        return LayeredMdp(**kw)

class ValueTables(NamedTuple):
    Q: list
    V: list  # V[l] for l = 0..L-1; V_{L+1} = 0 is implicit

@dataclass
class Layout:
    """Maps per-layer ``(S_l, A)`` tables onto one stacked ``(sum S_l, A)`` array."""

    layer_sizes: tuple
    A: int
    offsets: np.ndarray = field(init=False)

    def __post_init__(self):
        self.layer_sizes = tuple(int(s) for s in self.layer_sizes)
        self.offsets = np.concatenate([[0], np.cumsum(self.layer_sizes)]).astype(int)

    @classmethod
    def of(cls, mdp: LayeredMdp) -> "Layout":
        return cls(mdp.layer_sizes, mdp.A)

    @property
    def L(self) -> int:
        return len(self.layer_sizes)

    @property
    def n_states(self) -> int:
        return int(self.offsets[-1])

    def stack(self, tables: Sequence[np.ndarray]) -> np.ndarray:
        return np.concatenate([np.asarray(t, dtype=float).reshape(-1, self.A) for t in tables], axis=0)

    def split(self, flat: np.ndarray) -> list:
        """Per-layer views into ``flat`` (no copy)."""
        return [flat[self.offsets[l]:self.offsets[l + 1]] for l in range(self.L)]

    def layer_index(self) -> np.ndarray:
        """0-based layer of every stacked row."""
        return np.repeat(np.arange(self.L), self.layer_sizes)

def _check_shapes(P, r_or_pi, rho=None):
    L = len(r_or_pi)
    if len(P) != L - 1:
        raise ValueError(f"expected {L - 1} transition tables for {L} layers, got {len(P)}")
    A = r_or_pi[0].shape[1]
    for l, x in enumerate(r_or_pi):
        if x.ndim != 2 or x.shape[1] != A:
            raise ValueError(f"layer {l}: table shape {x.shape} is not (S_l, {A})")
    for l, p in enumerate(P):
        want = (r_or_pi[l].shape[0], A, r_or_pi[l + 1].shape[0])
        if p.shape != want:
            raise ValueError(f"layer {l}: transition shape {p.shape}, expected {want}")
    if rho is not None and rho.shape != (r_or_pi[0].shape[0],):
        raise ValueError(f"rho shape {rho.shape} does not match layer-1 size {r_or_pi[0].shape[0]}")

def validate_mdp(mdp: LayeredMdp, tol: float = 1e-9) -> list:
    """Return a list of human-readable invariant violations (empty if valid)."""
    problems = []
    try:
        _check_shapes(mdp.P, mdp.r, mdp.rho)
    except ValueError as exc:
        return [f"shape: {exc}"]
    for l, p in enumerate(mdp.P):
        neg = np.argwhere(p < 0)
        for s, a, sn in neg:
            problems.append(f"P layer {l} state {s} action {a}: negative entry at next state {sn}")
        sums = p.sum(axis=2)
        for s, a in np.argwhere(np.abs(sums - 1.0) > tol):
            problems.append(f"P layer {l} state {s} action {a}: row sums to {sums[s, a]:.12g}")
    for l, x in enumerate(mdp.r):
        if not np.all(np.isfinite(x)):
            problems.append(f"r layer {l}: non-finite reward")
    for s in np.flatnonzero(mdp.rho < 0):
        problems.append(f"rho: negative entry at state {s}")
    if abs(mdp.rho.sum() - 1.0) > tol:
        problems.append(f"rho sums to {mdp.rho.sum():.12g}")
    if mdp.reward_noise_std < 0:
        problems.append("reward_noise_std is negative")
    return problems

def backward_induction(mdp: LayeredMdp, reward: Sequence[np.ndarray] | None = None):
    """Exact optimal ``(Q*, V*)`` and the greedy deterministic policy.

    ``reward`` overrides ``mdp.r`` (Frank-Wolfe gradients, sampled rewards).
    Ties go to the lowest action index.
    """
    return backward_induction_tables(mdp.P, mdp.r if reward is None else reward)

def backward_induction_tables(P, reward):
    reward = [np.asarray(x, dtype=float) for x in reward]
    _check_shapes(P, reward)
    L = len(reward)
    Q = [None] * L
    V = [None] * L
    pi = [None] * L
    v_next = None
    for l in range(L - 1, -1, -1):
        q = reward[l] if v_next is None else reward[l] + P[l] @ v_next
        best = np.argmax(q, axis=1)
        Q[l] = q
        V[l] = q[np.arange(q.shape[0]), best]
        pi[l] = np.zeros_like(q)
        pi[l][np.arange(q.shape[0]), best] = 1.0
        v_next = V[l]
    return ValueTables(Q, V), pi

def greedy_actions(P, reward) -> list:
    """Backward induction returning only the argmax action per state (fast path)."""
    L = len(reward)
    acts = [None] * L
    v_next = None
    for l in range(L - 1, -1, -1):
        q = reward[l] if v_next is None else reward[l] + P[l] @ v_next
        a = np.argmax(q, axis=1)
        acts[l] = a
        v_next = q[np.arange(q.shape[0]), a]
    return acts

def policy_value(mdp: LayeredMdp, policy: Sequence[np.ndarray], reward=None) -> ValueTables:
    """Exact ``(Q^pi, V^pi)`` by backward recursion."""
    if reward is None:
        reward = mdp.r  # validated when the MDP was built
    else:
        reward = [np.asarray(x, dtype=float) for x in reward]
        _check_shapes(mdp.P, reward)
    _check_shapes(mdp.P, [np.asarray(p) for p in policy])
    L = mdp.L
    Q = [None] * L
    V = [None] * L
    v_next = None
    for l in range(L - 1, -1, -1):
        q = reward[l] if v_next is None else reward[l] + mdp.P[l] @ v_next
        Q[l] = q
        V[l] = (policy[l] * q).sum(axis=1)
        v_next = V[l]
    return ValueTables(Q, V)

def state_distribution(P, rho, policy) -> list:
    """``d_l(s)``: probability of being in ``s`` at layer ``l`` under ``policy``."""
    d = [np.asarray(rho, dtype=float)]
    for l in range(len(policy) - 1):
        d.append(np.einsum("s,sa,sap->p", d[l], policy[l], P[l]))
    return d

def occupancy_from_policy(P, rho, policy) -> list:
    """``lambda_l(s,a)``, the probability of visiting ``(s,a)`` at layer ``l``."""
    policy = [np.asarray(p, dtype=float) for p in policy]
    _check_shapes(P, policy, np.asarray(rho, dtype=float))
    lam = []
    d = np.asarray(rho, dtype=float)
    for l, pi in enumerate(policy):
        lam.append(d[:, None] * pi)
        if l < len(P):
            d = np.tensordot(lam[l], P[l], axes=([0, 1], [0, 1]))
    return lam

def policy_from_occupancy(lam, floor: float = 1e-300) -> list:
    """Row-normalise; rows with total mass below ``floor`` become uniform."""
    out = []
    for x in lam:
        x = np.clip(np.asarray(x, dtype=float), 0.0, None)
        tot = x.sum(axis=1, keepdims=True)
        A = x.shape[1]
        pi = np.where(tot >= floor, x / np.where(tot >= floor, tot, 1.0), 1.0 / A)
        out.append(pi)
    return out

def flow_residual(lam, P, rho) -> float:
    """Sup-norm violation of the occupancy constraints (including negativity)."""
    lam = [np.asarray(x, dtype=float) for x in lam]
    res = abs(float(np.max(np.abs(lam[0].sum(axis=1) - rho))))
    for l in range(len(lam) - 1):
        inflow = np.tensordot(lam[l], P[l], axes=([0, 1], [0, 1]))
        res = max(res, float(np.max(np.abs(lam[l + 1].sum(axis=1) - inflow))))
    most_negative = min(float(x.min()) for x in lam)
    return max(res, -most_negative, 0.0)

def check_flow(lam, P, rho, tol: float = 1e-8):
    """``(ok, residual)`` with the residual in sup norm."""
    res = flow_residual(lam, P, rho)
    return res <= tol, res

def check_policy(policy, tol: float = 1e-12) -> bool:
    return all(
        np.all(np.asarray(p) >= 0) and np.allclose(np.sum(p, axis=1), 1.0, atol=tol, rtol=0)
        for p in policy
    )

def expected_return(mdp: LayeredMdp, policy, reward=None) -> float:
    """``rho . V_1^pi``."""
    return float(mdp.rho @ policy_value(mdp, policy, reward).V[0])

def optimal_return(mdp: LayeredMdp, reward=None) -> float:
    values, _ = backward_induction(mdp, reward)
    return float(mdp.rho @ values.V[0])

def deterministic_policies(layer_sizes, A):
    """Enumerate every deterministic policy (exhaustive; tiny MDPs only)."""
    import itertools

    n = sum(layer_sizes)
    for choice in itertools.product(range(A), repeat=n):
        pol, k = [], 0
        for S in layer_sizes:
            p = np.zeros((S, A))
            p[np.arange(S), choice[k:k + S]] = 1.0
            pol.append(p)
            k += S
        yield pol

def random_mdp(rng, layer_sizes, A, reward_scale: float = 1.0, dirichlet: float = 1.0,
               noise_std: float = 0.0) -> LayeredMdp:
    """Random layered MDP with Dirichlet rows and Gaussian reward means."""
    layer_sizes = tuple(layer_sizes)
    P = [rng.dirichlet(np.full(layer_sizes[l + 1], dirichlet), size=(layer_sizes[l], A))
         for l in range(len(layer_sizes) - 1)]
    r = [reward_scale * rng.standard_normal((S, A)) for S in layer_sizes]
    rho = rng.dirichlet(np.ones(layer_sizes[0]))
    return LayeredMdp(P, r, rho, noise_std)
