"""Tabular environments as layered MDPs, plus a noisy stepping interface."""
from __future__ import annotations

import warnings

import numpy as np

from .mdp import LayeredMdp

LEFT, RIGHT = 0, 1
EXIT, ADVANCE = 0, 1  # chain actions: drop to the absorbing exit, move along the chain
MOVES = np.array([(-1, 0), (1, 0), (0, -1), (0, 1)])  # up, down, left, right


def make_deepsea(L: int, noise_std: float = 0.0) -> LayeredMdp:
    """``L x L`` DeepSea: layer ``l`` (0-based) holds columns ``0..l``.

    Action 1 moves right and costs ``0.01 / L`` (including at the last row);
    action 0 moves left, clipped at column 0.  Going right from the bottom-right
    cell pays an extra +1.
    """
    if L < 2:
        raise ValueError("DeepSea needs L >= 2")
    cost = 0.01 / L
    P, r = [], []
    for l in range(L):
        S = l + 1
        rl = np.zeros((S, 2))
        rl[:, RIGHT] = -cost
        r.append(rl)
        if l < L - 1:
            p = np.zeros((S, 2, S + 1))
            cols = np.arange(S)
            p[cols, LEFT, np.maximum(cols - 1, 0)] = 1.0
            p[cols, RIGHT, cols + 1] = 1.0
            P.append(p)
    r[-1][L - 1, RIGHT] += 1.0
    return LayeredMdp(P, r, np.array([1.0]), noise_std)


def deepsea_goal(L: int):
    """``(layer, state, action)`` of the rewarding transition."""
    return L - 1, L - 1, RIGHT


def _grid_dynamics(n, walls, L):
    """One-hot layered dynamics for cardinal moves on an ``n x n`` grid (walls block)."""
    S = n * n
    p = np.zeros((S, 4, S))
    for cell in range(S):
        i, j = divmod(cell, n)
        for a, (di, dj) in enumerate(MOVES):
            ni, nj = i + di, j + dj
            if not (0 <= ni < n and 0 <= nj < n) or walls[ni, nj] or walls[i, j]:
                ni, nj = i, j
            p[cell, a, ni * n + nj] = 1.0
    return [p] * (L - 1)


def make_gridworld(n: int, rng, reward_spec: dict | None = None, L: int | None = None) -> LayeredMdp:
    """Layered ``n x n`` grid with cardinal moves (moves into walls stay put).

    ``reward_spec`` keys: ``density`` (fraction of cells with a nonzero mean,
    default 0.2), ``scale`` (std of those means, default 1), ``noise_std``
    (observation noise, default 1).  Rewards depend on the cell only and are
    shared by all actions and layers.  The agent starts at the top-left cell.
    """
    if n < 2:
        raise ValueError("grid needs n >= 2")
    spec = {"density": 0.2, "scale": 1.0, "noise_std": 1.0}
    spec.update(reward_spec or {})
    L = 2 * n if L is None else int(L)
    S = n * n
    means = np.zeros(S)
    k = max(1, int(round(spec["density"] * S)))
    cells = rng.choice(S, size=k, replace=False)
    means[cells] = spec["scale"] * rng.standard_normal(k)
    P = _grid_dynamics(n, np.zeros((n, n), dtype=bool), L)
    r = [np.repeat(means[:, None], 4, axis=1) for _ in range(L)]
    rho = np.zeros(S)
    rho[0] = 1.0
    return LayeredMdp(P, r, rho, float(spec["noise_std"]))


def four_room_walls(n: int) -> np.ndarray:
    """Boolean wall mask: a cross through the middle with one door per wall segment."""
    if n < 5 or n % 2 == 0:
        raise ValueError("four-room grid needs odd n >= 5")
    m = n // 2
    walls = np.zeros((n, n), dtype=bool)
    walls[m, :] = True
    walls[:, m] = True
    q = m // 2
    for door in [(m, q), (m, m + 1 + q), (q, m), (m + 1 + q, m)]:
        walls[door] = False
    return walls


def make_four_room(n: int, L: int | None = None) -> LayeredMdp:
    """Reward-free four-room grid, horizon ``2n`` by default, start in the top-left room."""
    walls = four_room_walls(n)
    L = 2 * n if L is None else int(L)
    S = n * n
    P = _grid_dynamics(n, walls, L)
    r = [np.zeros((S, 4)) for _ in range(L)]
    rho = np.zeros(S)
    rho[0] = 1.0
    return LayeredMdp(P, r, rho, 0.0)


def free_cells(walls) -> np.ndarray:
    return np.flatnonzero(~np.asarray(walls).ravel())


def make_chain(L: int, epsilon: float, end_reward: float) -> LayeredMdp:
    """One member of the two-MDP chain.

    Layer 0 holds the start; later layers hold the chain state (index 0) and an
    absorbing zero-reward exit (index 1).  Advancing costs ``epsilon``; the last
    chain state is terminal and pays ``end_reward`` for either action.
    """
    P, r = [], []
    for l in range(L):
        S = 1 if l == 0 else 2
        rl = np.zeros((S, 2))
        if l < L - 1:
            rl[0, ADVANCE] = -epsilon
            p = np.zeros((S, 2, 2))
            p[0, ADVANCE, 0] = 1.0
            p[0, EXIT, 1] = 1.0
            if S == 2:
                p[1, :, 1] = 1.0
            P.append(p)
        else:
            rl[0, :] = end_reward
        r.append(rl)
    return LayeredMdp(P, r, np.array([1.0]), 0.0)


def make_chain_pair(L: int, epsilon: float):
    """Equal-weight prior over the chain with end reward +1 and with end reward -1."""
    from .oracles import FiniteSupportPrior

    if L < 2:
        raise ValueError("chain needs L >= 2")
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    if epsilon * L >= 0.1:
        warnings.warn("epsilon * L >= 0.1: the chain is no longer a near-free walk", stacklevel=2)
    return FiniteSupportPrior([make_chain(L, epsilon, 1.0), make_chain(L, epsilon, -1.0)], [0.5, 0.5])


def env_step(mdp: LayeredMdp, l: int, s: int, a: int, rng):
    """Sample ``(r_obs, s_next)``; ``s_next`` is ``None`` after the last layer."""
    L = len(mdp.r)
    if not (0 <= l < L and 0 <= s < mdp.layer_sizes[l] and 0 <= a < mdp.A):
        raise IndexError(f"cell ({l}, {s}, {a}) out of range")
    r = float(mdp.r[l][s, a])
    if mdp.reward_noise_std > 0:
        r += mdp.reward_noise_std * float(rng.standard_normal())
    if l == L - 1:
        return r, None
    row = mdp.P[l][s, a]
    s_next = int(row.argmax())
    if row[s_next] != 1.0:
        s_next = int(rng.choice(len(row), p=row))
    return r, s_next
