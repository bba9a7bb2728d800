"""The concave occupancy-measure program and its Frank-Wolfe solver.

The objective is

    V(lam) = sum_{l,s,a} lam * (r + sigma * sqrt(-2 log lam))

maximised over the flow polytope of ``P``.  It is the pointwise minimum over
temperatures ``tau > 0`` of the entropy-regularised optimistic value
``lam . (r + sigma^2 / (2 tau)) - sum tau lam log lam``.

Frank-Wolfe iterates never leave the polytope: every linear maximisation is
one backward-induction pass on the gradient "reward" followed by one forward
pass through the dynamics.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import brentq

from .mdp import Layout, flow_residual, greedy_actions, occupancy_from_policy

log = logging.getLogger(__name__)

TAU_SENTINEL = np.inf
_LOG_FLOOR = 1e-300


@dataclass
class VaporProblem:
    P: list
    rho: np.ndarray
    r: list
    sigma: list
    layout: Layout = field(init=False, repr=False)

    def __post_init__(self):
        self.P = [np.asarray(p, dtype=float) for p in self.P]
        self.rho = np.asarray(self.rho, dtype=float)
        self.r = [np.asarray(x, dtype=float) for x in self.r]
        self.sigma = [np.asarray(x, dtype=float) for x in self.sigma]
        self.layout = Layout(tuple(x.shape[0] for x in self.r), self.r[0].shape[1])
        if len(self.P) != self.layout.L - 1:
            raise ValueError("need one transition table per layer except the last")
        for l, (x, s) in enumerate(zip(self.r, self.sigma)):
            if x.shape != s.shape:
                raise ValueError(f"layer {l}: reward shape {x.shape} != sigma shape {s.shape}")
            if np.any(s < 0):
                raise ValueError(f"layer {l}: negative uncertainty")
        self.r_flat = self.layout.stack(self.r)
        self.sigma_flat = self.layout.stack(self.sigma)

    @property
    def sigma_max(self) -> float:
        return float(self.sigma_flat.max(initial=0.0))


@dataclass
class SolverOptions:
    max_iters: int = 5000
    gap_tol: float = 1e-5
    delta: float | None = None
    accuracy: float = 1e-3  # epsilon in delta = epsilon / (sigma_max L S A)
    lambda_floor: float = 1e-300
    step: str = "pairwise"  # "pairwise" | "line_search" | "open_loop"
    min_iters: int = 1

    def __post_init__(self):
        if self.max_iters < 1 or self.gap_tol <= 0 or self.accuracy <= 0 or self.lambda_floor <= 0:
            raise ValueError("solver options must be positive")
        if self.delta is not None and self.delta <= 0:
            raise ValueError("delta must be positive")
        if self.step not in ("pairwise", "line_search", "open_loop"):
            raise ValueError(f"unknown step rule {self.step!r}")

    def resolve_delta(self, sigma_max: float, layout: Layout) -> float:
        if self.delta is not None:
            return self.delta
        scale = max(sigma_max, 1e-12) * layout.L * layout.n_states * layout.A
        return self.accuracy / scale


@dataclass
class SolveDiagnostics:
    objective_trace: list
    fw_gap: float
    iterations: int
    max_flow_residual: float
    objective: float = float("nan")
    dual_value: float = float("nan")
    gap_trace: list = field(default_factory=list)
    residual_trace: list = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return bool(np.isfinite(self.fw_gap))

    @property
    def duality_gap(self) -> float:
        return self.dual_value - self.objective

    def dump_trace(self, path) -> None:
        """CSV with columns iter, objective, fw_gap, max_flow_residual."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "objective", "fw_gap", "max_flow_residual"])
            for k, (obj, gap, res) in enumerate(
                zip(self.objective_trace, self.gap_trace, self.residual_trace), start=1
            ):
                w.writerow([k, repr(obj), repr(gap), repr(res)])


def _as_flat(lam, layout: Layout) -> np.ndarray:
    if isinstance(lam, np.ndarray) and lam.ndim == 2 and lam.shape == (layout.n_states, layout.A):
        return lam
    return layout.stack(lam)


# --- objectives -----------------------------------------------------------


def _optimism(x, floor):
    return np.sqrt(np.maximum(-2.0 * np.log(np.clip(x, floor, 1.0)), 0.0))


def vapor_objective(lam, prob: VaporProblem, lambda_floor: float = _LOG_FLOOR) -> float:
    """``sum lam (r + sigma sqrt(-2 log lam))`` with ``0 sqrt(-2 log 0) = 0``."""
    x = _as_flat(lam, prob.layout)
    return float(np.sum(x * (prob.r_flat + prob.sigma_flat * _optimism(x, lambda_floor))))


def _tau_terms(x, tau, sigma, floor):
    """Per-cell ``sigma^2/(2 tau) lam - tau lam log lam``; sentinel cells give 0."""
    finite = np.isfinite(tau)
    safe_tau = np.where(finite, tau, 1.0)
    xlogx = np.where(x > 0, x * np.log(np.clip(x, floor, None)), 0.0)
    return np.where(finite, x * sigma**2 / (2 * safe_tau) - safe_tau * xlogx, 0.0)


def vapor_objective_tau(lam, tau, prob: VaporProblem, lambda_floor: float = _LOG_FLOOR) -> float:
    """``lam . (r + sigma^2/(2 tau)) - sum tau lam log lam``.

    Sentinel (infinite) temperatures mark cells where both the optimism and the
    entropy term vanish (``sigma = 0`` or ``lam = 1``); they contribute ``lam r``.
    """
    x = _as_flat(lam, prob.layout)
    t = _as_flat(tau, prob.layout)
    if np.any(t <= 0):
        raise ValueError("temperatures must be positive")
    return float(np.sum(x * prob.r_flat + _tau_terms(x, t, prob.sigma_flat, lambda_floor)))


def closed_form_tau(lam, sigma, one_tol: float = 1e-12):
    """Per-cell minimiser ``tau = sigma / sqrt(-2 log lam)`` of the temperature game.

    Returns the same container type as ``lam`` (list of tables or stacked array).
    """
    def one(x, s):
        x = np.asarray(x, dtype=float)
        s = np.asarray(s, dtype=float)
        root = np.sqrt(-2.0 * np.log(np.clip(x, _LOG_FLOOR, 1.0)))
        degenerate = (x >= 1.0 - one_tol) | (s <= 0)
        return np.where(degenerate, TAU_SENTINEL, s / np.where(degenerate, 1.0, root))

    if isinstance(lam, np.ndarray):
        return one(lam, sigma)
    return [one(x, s) for x, s in zip(lam, sigma)]


def smoothed_objective_flat(x, r, sigma, delta) -> float:
    inner = -2.0 * (np.log(x + delta) + delta)
    return float(np.sum(x * (r + sigma * np.sqrt(np.maximum(inner, 0.0)))))


def smoothed_gradient_flat(x, r, sigma, delta) -> np.ndarray:
    inner = -2.0 * (np.log(x + delta) + delta)
    active = inner > 0
    g = np.sqrt(np.where(active, inner, 1.0))
    bonus = g - x / ((x + delta) * g)
    return r + np.where(active, sigma * bonus, 0.0)


def _kink(delta):
    """Largest cell value before the clamped branch of the smoothed objective."""
    return (np.exp(-delta) - delta) * (1 - 1e-9)


def smoothed_objective(lam, prob: VaporProblem, delta: float) -> float:
    """``sum lam (r + sigma sqrt(-2 (log(lam + delta) + delta)))``, inner term clamped at 0."""
    x = _as_flat(lam, prob.layout)
    return smoothed_objective_flat(x, prob.r_flat, prob.sigma_flat, delta)


def smoothed_gradient(lam, prob: VaporProblem, delta: float):
    """Elementwise derivative of :func:`smoothed_objective` (equal to ``r`` on the clamped branch)."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    flat_in = isinstance(lam, np.ndarray)
    x = _as_flat(lam, prob.layout)
    g = smoothed_gradient_flat(x, prob.r_flat, prob.sigma_flat, delta)
    return g if flat_in else [t.copy() for t in prob.layout.split(g)]


# --- Frank-Wolfe ----------------------------------------------------------


class _Polytope:
    """Linear maximisation oracle over the occupancy polytope of ``P``."""

    def __init__(self, P, rho, layout: Layout):
        self.P = P
        self.rho = rho
        self.layout = layout

    def vertex(self, grad_flat):
        acts = greedy_actions(self.P, self.layout.split(grad_flat))
        out = np.zeros((self.layout.n_states, self.layout.A))
        views = self.layout.split(out)
        d = self.rho
        for l, a in enumerate(acts):
            idx = np.arange(a.shape[0])
            views[l][idx, a] = d
            if l < len(self.P):
                d = d @ self.P[l][idx, a]
        key = b"".join(a.astype(np.int16).tobytes() for a in acts)
        return out, key

    def uniform(self):
        A = self.layout.A
        pol = [np.full((S, A), 1.0 / A) for S in self.layout.layer_sizes]
        return self.layout.stack(occupancy_from_policy(self.P, self.rho, pol))

    def residual(self, flat):
        return flow_residual(self.layout.split(flat), self.P, self.rho)


def _line_search(value, grad, x, direction, gmax, f0, ceiling=None):
    """Maximise a concave function on the segment ``x + g d``, ``g in [0, gmax]``.

    ``ceiling`` (scalar or per-coordinate) caps every coordinate that the step
    increases; the smoothed objective stops being concave once a cell crosses it.
    """
    if ceiling is not None:
        up = direction > 0
        if np.any(up):
            cap = ceiling[up] if np.ndim(ceiling) else ceiling
            room = (cap - x[up]) / direction[up]
            gmax = min(gmax, max(float(room.min()), 0.0))
    if gmax <= 0:
        return 0.0, f0

    def slope(g):
        return float(np.sum(grad(x + g * direction) * direction))

    if slope(gmax) >= 0:
        gamma = gmax
    else:
        try:
            gamma = brentq(slope, 0.0, gmax, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
        except ValueError:
            gamma = 0.0
    # safeguard monotonicity against round-off
    while gamma > 0:
        fx = value(x + gamma * direction)
        if fx >= f0:
            return gamma, fx
        gamma *= 0.5
        if gamma < 1e-16 * gmax:
            break
    return 0.0, f0


def frank_wolfe(
    P,
    rho,
    layout: Layout,
    value: Callable[[np.ndarray], float],
    grad: Callable[[np.ndarray], np.ndarray],
    opts: SolverOptions,
    init=None,
    ceiling=None,
):
    """Maximise a concave ``value`` over the occupancy polytope.

    Returns the stacked ``(sum S_l, A)`` iterate and its diagnostics.  Non
    convergence is reported through ``diagnostics.fw_gap > opts.gap_tol``.
    ``ceiling`` keeps line-search steps from pushing any cell above it; a warm
    start is blended with the uniform-policy occupancy so it starts below it.
    """
    poly = _Polytope(P, rho, layout)
    if init is None:
        x = poly.uniform()
    else:
        x = np.array(_as_flat(init, layout), dtype=float)
        if ceiling is not None:
            x = (1 - 1e-3) * x + 1e-3 * poly.uniform()
    fx = value(x)
    trace, gaps, residuals = [], [], []
    # active set for pairwise steps: atom 0 is the initial point
    atoms = [x.copy()]
    weights = [1.0]
    index = {}
    gap = np.inf
    k = 0
    for k in range(1, opts.max_iters + 1):
        g = grad(x)
        v, key = poly.vertex(g)
        gap = float(np.sum(g * (v - x)))
        if gap <= opts.gap_tol and k >= opts.min_iters:
            trace.append(fx)
            gaps.append(gap)
            residuals.append(poly.residual(x))
            k -= 1
            break
        if opts.step == "open_loop":
            gamma = 2.0 / (k + 1)
            x = x + gamma * (v - x)
            fx = value(x)
        elif opts.step == "line_search":
            gamma, fx = _line_search(value, grad, x, v - x, 1.0, fx, ceiling)
            x = x + gamma * (v - x)
        else:
            scores = [float(np.sum(g * a)) for a in atoms]
            away = int(np.argmin(scores))
            if key in index:
                fw_i = index[key]
            else:
                fw_i = len(atoms)
                index[key] = fw_i
                atoms.append(v)
                weights.append(0.0)
            if fw_i == away:
                gamma, fx = _line_search(value, grad, x, v - x, 1.0, fx, ceiling)
                x = x + gamma * (v - x)
                weights = [w * (1 - gamma) for w in weights]
                weights[fw_i] += gamma
            else:
                direction = atoms[fw_i] - atoms[away]
                gmax = weights[away]
                gamma, fx = _line_search(value, grad, x, direction, gmax, fx, ceiling)
                x = x + gamma * direction
                weights[fw_i] += gamma
                weights[away] -= gamma
                if weights[away] <= 1e-15 * max(1.0, gmax):
                    weights[away] = 0.0
            # drop dead atoms; rebuild the key index
            if any(w == 0.0 for w in weights):
                keep = [i for i, w in enumerate(weights) if w > 0.0]
                inv = {i: j for j, i in enumerate(keep)}
                atoms = [atoms[i] for i in keep]
                weights = [weights[i] for i in keep]
                index = {kk: inv[i] for kk, i in index.items() if i in inv}
        np.clip(x, 0.0, None, out=x)
        trace.append(fx)
        gaps.append(gap)
        residuals.append(poly.residual(x) if k % 50 == 0 else (residuals[-1] if residuals else 0.0))
    final_res = poly.residual(x)
    if residuals:
        residuals[-1] = final_res
    diag = SolveDiagnostics(
        objective_trace=trace,
        fw_gap=gap,
        iterations=k,
        max_flow_residual=final_res,
        gap_trace=gaps,
        residual_trace=residuals,
    )
    return x, diag


def solve_frank_wolfe(prob: VaporProblem, opts: SolverOptions | None = None, init=None,
                      certify: bool = False):
    """Solve the VAPOR program; returns ``(lam tables, SolveDiagnostics)``."""
    opts = opts or SolverOptions()
    delta = opts.resolve_delta(prob.sigma_max, prob.layout)
    r, s = prob.r_flat, prob.sigma_flat
    x, diag = frank_wolfe(
        prob.P,
        prob.rho,
        prob.layout,
        lambda z: smoothed_objective_flat(z, r, s, delta),
        lambda z: smoothed_gradient_flat(z, r, s, delta),
        opts,
        init=init,
        ceiling=np.where(s > 0, _kink(delta), np.inf),
    )
    diag.objective = vapor_objective(x, prob, opts.lambda_floor)
    lam = [t.copy() for t in prob.layout.split(x)]
    if certify:
        V, tau = dual_certificate(lam, prob)
        diag.dual_value = dual_value(V, tau, prob)
    if diag.fw_gap > opts.gap_tol:
        log.debug("Frank-Wolfe stopped at gap %.3g after %d iterations", diag.fw_gap, diag.iterations)
    return lam, diag


# --- dual ------------------------------------------------------------------


def _advantage(V, tau, prob: VaporProblem):
    """Per-layer ``r + sigma^2/(2 tau) + P V_{l+1} - V_l`` (sentinel tau drops the bonus)."""
    L = prob.layout.L
    out = []
    for l in range(L):
        t = np.asarray(tau[l], dtype=float)
        bonus = np.where(np.isfinite(t), prob.sigma[l] ** 2 / (2 * np.where(np.isfinite(t), t, 1.0)), 0.0)
        k = prob.r[l] + bonus
        if l < L - 1:
            k = k + prob.P[l] @ np.asarray(V[l + 1], dtype=float)
        out.append(k - np.asarray(V[l], dtype=float)[:, None])
    return out


def dual_value(V, tau, prob: VaporProblem, tol: float = 1e-12) -> float:
    """Unconstrained dual ``rho . V_1 + sum tau exp(adv / tau - 1)``.

    Upper-bounds the primal for any ``V`` and positive ``tau``.  Sentinel cells
    are the zero-temperature limit: they add nothing when their advantage is
    non-positive and ``+inf`` otherwise.
    """
    tau = [np.asarray(t, dtype=float) for t in tau]
    if any(np.any(t <= 0) for t in tau):
        raise ValueError("temperatures must be positive")
    adv = _advantage(V, tau, prob)
    total = float(prob.rho @ np.asarray(V[0], dtype=float))
    for t, d in zip(tau, adv):
        finite = np.isfinite(t)
        if np.any(~finite & (d > tol)):
            return np.inf
        st = np.where(finite, t, 1.0)
        total += float(np.sum(np.where(finite, st * np.exp(np.minimum(d / st - 1.0, 700.0)), 0.0)))
    return total


def _solve_state_values(K, tau, mu, newton_iters: int = 100):
    """Per state ``v`` with ``sum_a exp((K_a - v)/tau_a - 1) = mu`` over finite-tau cells,
    raised to ``max K`` over sentinel cells (the zero-temperature limit)."""
    finite = np.isfinite(tau)
    st = np.where(finite, tau, 1.0)
    lin_max = np.max(np.where(finite, -np.inf, K), axis=1)
    has_ent = finite.any(axis=1)
    v = np.full(K.shape[0], -np.inf)
    rows = has_ent & (mu > 0)
    if rows.any():
        Kr, tr, fr, logmu = K[rows], st[rows], finite[rows], np.log(mu[rows])
        u = Kr / tr - 1.0
        # start left of the root: h(v0) >= 0 for the convex decreasing h below
        cand = np.where(fr, tr * (u - logmu[:, None]), np.inf)
        vr = cand.min(axis=1)
        for _ in range(newton_iters):
            z = np.where(fr, u - vr[:, None] / tr, -np.inf)
            zmax = z.max(axis=1)
            w = np.exp(z - zmax[:, None])
            sw = w.sum(axis=1)
            h = zmax + np.log(sw) - logmu
            dh = -(w / tr).sum(axis=1) / sw
            step = h / dh
            vr = vr - step
            if np.all(np.abs(step) <= 1e-13 * (1 + np.abs(vr))):
                break
        v[rows] = vr
    starved = has_ent & ~(mu > 0)
    if starved.any():
        # unreached states: push the entropic mass towards zero
        v[starved] = np.max(np.where(finite[starved], K[starved] + 40 * st[starved], -np.inf), axis=1)
    return np.maximum(v, lin_max)


def _initial_dual(lam, prob: VaporProblem, lam_clip=(1e-30, 1.0 - 1e-9), cold_tau=1e-6):
    """Stationarity construction: closed-form ``tau`` at (clipped) ``lam``; ``V``
    solves ``sum_a exp(adv / tau - 1) = mass(s)`` state by state, last layer first."""
    lam = [np.asarray(x, dtype=float) for x in lam]
    tau = []
    for x, s in zip(lam, prob.sigma):
        t = closed_form_tau(np.clip(x, *lam_clip), s)
        tau.append(np.where(np.isfinite(t), t, TAU_SENTINEL))
    L = prob.layout.L
    V = [None] * L
    for l in range(L - 1, -1, -1):
        t = tau[l]
        bonus = np.where(np.isfinite(t), prob.sigma[l] ** 2 / (2 * np.where(np.isfinite(t), t, 1.0)), 0.0)
        K = prob.r[l] + bonus
        if l < L - 1:
            K = K + prob.P[l] @ V[l + 1]
        V[l] = _solve_state_values(K, t, lam[l].sum(axis=1))
    return V, tau


class _DualFunction:
    """Dual objective in ``(V, log tau)`` with its gradient, for every cell finite."""

    def __init__(self, prob: VaporProblem):
        self.prob = prob
        self.lay = prob.layout
        self.n = self.lay.n_states
        self.sig2 = prob.sigma_flat ** 2

    def unpack(self, z):
        V = z[: self.n]
        tau = np.exp(z[self.n:]).reshape(self.n, self.lay.A)
        return V, tau

    def __call__(self, z):
        with np.errstate(over="ignore", invalid="ignore"):
            return self._evaluate(z)

    def _evaluate(self, z):
        prob, lay = self.prob, self.lay
        V, tau = self.unpack(z)
        Vs = lay.split(V)
        cont = np.zeros((self.n, lay.A))
        cv = lay.split(cont)
        for l in range(lay.L - 1):
            cv[l][:] = prob.P[l] @ Vs[l + 1]
        adv = prob.r_flat + cont - V[:, None]
        expo = np.minimum(adv / tau + self.sig2 / (2 * tau**2) - 1.0, 700.0)
        E = np.exp(expo)
        val = float(prob.rho @ Vs[0] + np.sum(tau * E))
        gV = -E.sum(axis=1)
        gVs = lay.split(gV)
        gVs[0] += prob.rho
        Es = lay.split(E)
        for l in range(lay.L - 1):
            gVs[l + 1] += np.tensordot(Es[l], prob.P[l], axes=([0, 1], [0, 1]))
        gtau = E * (1.0 - adv / tau - self.sig2 / tau**2) * tau
        g = np.concatenate([gV, gtau.ravel()])
        if not (np.isfinite(val) and np.all(np.isfinite(g))):
            return np.inf, np.zeros_like(z)
        return val, g


def dual_certificate(lam, prob: VaporProblem, refine: bool = True, max_iter: int = 2000):
    """Dual pair ``(V, tau)`` built from a primal iterate.

    The starting pair comes from the stationarity condition
    ``lam = exp(adv / tau - 1)`` with the closed-form temperatures.  With
    ``refine`` the convex dual is then decreased further by L-BFGS over
    ``(V, log tau)``; every finite positive ``tau`` keeps it a valid upper bound.
    """
    from scipy.optimize import minimize

    V0, tau0 = _initial_dual(lam, prob)
    if not refine:
        return V0, tau0
    lay = prob.layout
    tau_flat = lay.stack(tau0)
    # sentinel cells start cold: a small finite temperature, same limit
    tau_flat = np.where(np.isfinite(tau_flat), tau_flat, 1e-6)
    V_flat = np.concatenate(V0)
    fn = _DualFunction(prob)
    z0 = np.concatenate([V_flat, np.log(np.maximum(tau_flat, 1e-12)).ravel()])
    start = dual_value(V0, tau0, prob)
    res = minimize(fn, z0, jac=True, method="L-BFGS-B",
                   options={"maxiter": max_iter, "ftol": 1e-15, "gtol": 1e-12, "maxcor": 30})
    V, tau = fn.unpack(res.x)
    V_t, tau_t = [v.copy() for v in lay.split(V)], [t.copy() for t in lay.split(tau)]
    if dual_value(V_t, tau_t, prob) <= start:
        return V_t, tau_t
    return V0, tau0


def certify(lam, prob: VaporProblem):
    """``(dual, primal, dual - primal)`` for a feasible ``lam``."""
    V, tau = dual_certificate(lam, prob)
    d = dual_value(V, tau, prob)
    p = vapor_objective(lam, prob)
    return d, p, d - p


# --- variants ---------------------------------------------------------------


def _lite_parts(x, r, sigma, c, floor):
    A = x.shape[1]
    mu = x.sum(axis=1, keepdims=True)
    pi = np.where(mu > 0, x / np.where(mu > 0, mu, 1.0), 1.0 / A)
    return mu, np.clip(pi, floor, 1.0)


def vapor_lite_objective_flat(x, r, sigma, c, floor=1e-12) -> float:
    mu, pi = _lite_parts(x, r, sigma, c, floor)
    w = c * sigma
    ent = -np.sum(w * pi * np.log(pi), axis=1, keepdims=True)
    return float(np.sum(x * (r + w)) + np.sum(mu * ent))


def vapor_lite_gradient_flat(x, r, sigma, c, floor=1e-12) -> np.ndarray:
    _, pi = _lite_parts(x, r, sigma, c, floor)
    w = c * sigma
    return r + w - w * np.log(pi) - w + np.sum(w * pi, axis=1, keepdims=True)


def vapor_lite_objective(lam, prob: VaporProblem, c: float, floor: float = 1e-12) -> float:
    """``sum lam (r + c sigma) + sum_{l,s} mass(s) * H_{c sigma}(policy row)``."""
    return vapor_lite_objective_flat(_as_flat(lam, prob.layout), prob.r_flat, prob.sigma_flat, c, floor)


def vapor_lite_gradient(lam, prob: VaporProblem, c: float, floor: float = 1e-12) -> np.ndarray:
    return vapor_lite_gradient_flat(_as_flat(lam, prob.layout), prob.r_flat, prob.sigma_flat, c, floor)


def vapor_lite_schedule(n_states: int, L: int, t: int) -> float:
    """``c = sqrt(2) (1 + log(S L t))``."""
    if t < 1:
        raise ValueError("episode index starts at 1")
    return float(np.sqrt(2.0) * (1.0 + np.log(n_states * L * t)))


def solve_vapor_lite_tabular(prob: VaporProblem, c: float, opts: SolverOptions | None = None, init=None):
    """Frank-Wolfe on the policy-entropy relaxation, optimised over occupancies."""
    if c <= 0:
        raise ValueError("c must be positive")
    opts = opts or SolverOptions()
    floor = opts.resolve_delta(c * prob.sigma_max, prob.layout)
    r, s = prob.r_flat, prob.sigma_flat
    x, diag = frank_wolfe(
        prob.P, prob.rho, prob.layout,
        lambda z: vapor_lite_objective_flat(z, r, s, c, floor),
        lambda z: vapor_lite_gradient_flat(z, r, s, c, floor),
        opts, init=init,
    )
    diag.objective = diag.objective_trace[-1] if diag.objective_trace else vapor_lite_objective_flat(x, r, s, c, floor)
    return [t.copy() for t in prob.layout.split(x)], diag


def weighted_entropy_flat(x, w, delta) -> float:
    """``-sum w x log(x + delta)`` with ``0 log 0 = 0``."""
    y = x + delta
    return float(-np.sum(w * np.where(x > 0, x * np.log(np.where(y > 0, y, 1.0)), 0.0)))


def weighted_entropy_gradient_flat(x, w, delta) -> np.ndarray:
    return -w * (np.log(x + delta) + x / (x + delta))


def solve_weighted_max_entropy(weights, P, rho, opts: SolverOptions | None = None, init=None):
    """Maximise ``-sum w lam log lam`` over the occupancy polytope (smoothed by ``delta``)."""
    opts = opts or SolverOptions()
    layout = Layout(tuple(np.asarray(w).shape[0] for w in weights), np.asarray(weights[0]).shape[1])
    w = layout.stack(weights)
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")
    delta = opts.delta if opts.delta is not None else 1e-12
    x, diag = frank_wolfe(
        [np.asarray(p, dtype=float) for p in P], np.asarray(rho, dtype=float), layout,
        lambda z: weighted_entropy_flat(z, w, delta),
        lambda z: weighted_entropy_gradient_flat(z, w, delta),
        opts, init=init,
    )
    diag.objective = weighted_entropy_flat(x, w, 0.0)
    return [t.copy() for t in layout.split(x)], diag
