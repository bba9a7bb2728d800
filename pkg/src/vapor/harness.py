"""Episodic learning loop, exploration metrics, experiment configs and result files.

Seed scheme: every random stream is ``default_rng(SeedSequence([master_seed,
seed, episode, purpose]))``; ``episode = 0`` holds per-seed draws such as the
true environment.  Rerunning one seed therefore reproduces its slice of a
multi-seed run exactly, whatever the worker count.
"""
from __future__ import annotations

import csv
import json
import logging
import time
from fractions import Fraction
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, NamedTuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from . import __version__
from .agents import Agent, AgentKind, AgentSpec
from .bayes import BeliefState, belief_init, belief_update, sample_mdp
from .envs import deepsea_goal, env_step, make_chain_pair, make_deepsea, make_four_room, make_gridworld
from .mdp import (
    expected_return,
    occupancy_from_policy,
    optimal_return,
    policy_from_occupancy,
)
from .oracles import FiniteSupportPrior
from .solver import SolverOptions, solve_weighted_max_entropy

log = logging.getLogger(__name__)

ENV_DRAW, AGENT, STEP = 0, 1, 2


def stream(master_seed: int, seed: int, episode: int, purpose: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([master_seed, seed, episode, purpose]))


class LazyStream:
    """A :func:`stream` built on first use; deterministic consumers never pay for seeding."""

    def __init__(self, *key):
        self._key = key
        self._rng = None

    def __getattr__(self, name):
        if self._rng is None:
            self._rng = stream(*self._key)
        attr = getattr(self._rng, name)
        setattr(self, name, attr)  # later lookups skip this hook
        return attr


class Step(NamedTuple):
    layer: int  # 0-based
    state: int
    action: int
    reward: float
    next_state: int | None


def _draw(row, rng) -> int:
    a = int(row.argmax())
    if row[a] == 1.0:
        return a
    c = row.cumsum()
    return min(int(c.searchsorted(rng.random() * c[-1], side="right")), len(row) - 1)


def run_episode(mdp, policy, rng) -> list:
    """One trajectory of length ``L`` under ``policy`` in the true ``mdp``."""
    s = _draw(mdp.rho, rng)
    traj = []
    for l in range(mdp.L):
        a = _draw(policy[l][s], rng)
        r, s_next = env_step(mdp, l, s, a, rng)
        traj.append(Step(l, s, a, r, s_next))
        s = s_next
    return traj


# --- metrics -------------------------------------------------------------------


def time_to_solve(found, threshold: float = 0.1):
    """First 1-based episode ``t`` with ``mean(found[:t]) >= threshold``; ``None`` if never."""
    f = np.asarray(found, dtype=np.int64)
    if f.size == 0:
        return None
    t = np.arange(1, f.size + 1)
    # exact rational comparison: 1/10 is not representable in binary
    q = Fraction(threshold).limit_denominator(10**6)
    hit = np.flatnonzero(np.cumsum(f) * q.denominator >= q.numerator * t)
    return int(hit[0]) + 1 if hit.size else None


def reachable_cells(mdp) -> list:
    """Cells with positive visit probability under the uniform policy."""
    pol = [np.full((S, mdp.A), 1.0 / mdp.A) for S in mdp.layer_sizes]
    return [x > 0 for x in occupancy_from_policy(mdp.P, mdp.rho, pol)]


def coverage_time(counts_per_episode, reachable):
    """First 1-based episode after which every ``reachable`` cell has a positive count.

    ``counts_per_episode`` is a sequence of cumulative count arrays (any shape
    matching ``reachable``).
    """
    mask = np.asarray(reachable, dtype=bool)
    for t, counts in enumerate(counts_per_episode, start=1):
        if np.all(np.asarray(counts)[mask] >= 1):
            return t
    return None


@dataclass
class RegretSummary:
    mean: np.ndarray
    se: np.ndarray
    n_seeds: int


def aggregate_bayes_regret(curves) -> RegretSummary:
    """Seed-mean cumulative regret with standard errors; ``curves`` is ``(seeds, episodes)``."""
    c = np.asarray(curves, dtype=float)
    if c.ndim != 2 or c.shape[0] < 2:
        raise ValueError("need cumulative regret curves from at least two seeds")
    return RegretSummary(c.mean(axis=0), c.std(axis=0, ddof=1) / np.sqrt(c.shape[0]), c.shape[0])


def loglog_slope(curve, start_fraction: float = 0.5) -> float:
    """Least-squares slope of ``log cum_regret`` against ``log t`` over the tail of the curve."""
    y = np.asarray(curve, dtype=float)
    t = np.arange(1, y.size + 1)
    sel = (t > start_fraction * y.size) & (y > 0)
    return float(np.polyfit(np.log(t[sel]), np.log(y[sel]), 1)[0])


# --- configuration -------------------------------------------------------------------


class EnvConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")
    name: Literal["deepsea", "gridworld", "chain", "fourroom", "random"]
    size: int | None = None  # DeepSea depth, grid side or chain length
    epsilon: float | None = None  # chain step cost; default 0.01 / size
    seed: int = 0  # reward-field seed for gridworld
    layer_sizes: list[int] = Field(default_factory=lambda: [2, 3, 3])  # random family
    actions: int = 2  # random family
    horizon: int | None = None  # grid horizon override
    reward_noise_std: float = 1.0  # random family and gridworld

    @model_validator(mode="after")
    def _check(self):
        if self.name in ("deepsea", "gridworld", "chain", "fourroom") and self.size is None:
            raise ValueError(f"env {self.name} needs a size")
        if self.name == "random" and (not self.layer_sizes or min(self.layer_sizes) < 1 or self.actions < 1):
            raise ValueError("random env needs positive layer sizes and actions")
        return self


class AgentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")
    kind: AgentKind
    params: dict = Field(default_factory=dict)


class PriorConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")
    dirichlet_scale: float | None = None
    reward_mean: float = 0.0
    reward_var: float = 1.0
    nu: float = 1.0

    @field_validator("dirichlet_scale")
    @classmethod
    def _positive(cls, v):
        if v is not None and v <= 0:
            raise ValueError("dirichlet_scale must be positive")
        return v


class SolverConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")
    max_iters: int = 5000
    gap_tol: float = 1e-5
    accuracy: float = 1e-3
    step: Literal["pairwise", "line_search", "open_loop"] = "pairwise"

    def options(self) -> SolverOptions:
        return SolverOptions(max_iters=self.max_iters, gap_tol=self.gap_tol, accuracy=self.accuracy, step=self.step)


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")
    env: EnvConfig
    agents: list[AgentConfig]
    episodes: int = Field(ge=1)
    seeds: list[int] = Field(min_length=1)
    replication: int | None = Field(default=None, ge=1)  # default: 100 on DeepSea, else 1
    sigma_mode: Literal["count_bound", "exact_posterior_std"] = "count_bound"
    value_range: float | None = Field(default=None, gt=0)  # cap on the value-to-go span in the transition term
    solver: SolverConfig = Field(default_factory=SolverConfig)
    prior: PriorConfig = Field(default_factory=PriorConfig)
    master_seed: int = 0
    stop_on_solve: bool = False
    warm_start: bool = True
    workers: int = Field(default=1, ge=1)
    output: str | None = None

    @field_validator("agents")
    @classmethod
    def _some_agent(cls, v):
        if not v:
            raise ValueError("at least one agent is required")
        return v

    @property
    def replication_factor(self) -> int:
        if self.replication is not None:
            return self.replication
        return 100 if self.env.name == "deepsea" else 1

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.model_validate_json(Path(path).read_text())


# --- environments and beliefs per seed --------------------------------------------------


def build_world(cfg: ExperimentConfig, seed: int):
    """``(true_mdp, beliefs, goal)`` for one seed; ``goal`` is a cell or ``None``."""
    env, prior = cfg.env, cfg.prior
    rng = stream(cfg.master_seed, seed, 0, ENV_DRAW)
    reward_prior = (prior.reward_mean, prior.reward_var)
    if env.name == "deepsea":
        mdp = make_deepsea(env.size)
        b = belief_init(mdp.layer_sizes, mdp.A, mdp.rho, prior.dirichlet_scale, reward_prior, prior.nu)
        return mdp, b, deepsea_goal(env.size)
    if env.name == "chain":
        eps = env.epsilon if env.epsilon is not None else 0.01 / env.size
        pair = make_chain_pair(env.size, eps)
        return pair.sample_mdp(rng), pair, (env.size - 1, 0, None)
    if env.name == "gridworld":
        mdp = make_gridworld(env.size, np.random.default_rng(env.seed),
                             {"noise_std": env.reward_noise_std}, env.horizon)
        b = belief_init(mdp.layer_sizes, mdp.A, mdp.rho, None, reward_prior, mdp.reward_noise_std, known_P=mdp.P)
        return mdp, b, None
    if env.name == "fourroom":
        mdp = make_four_room(env.size, env.horizon)
        b = belief_init(mdp.layer_sizes, mdp.A, mdp.rho, None, reward_prior, prior.nu, known_P=mdp.P)
        return mdp, b, None
    # random family: the true MDP is a draw from the very prior the agent starts with
    sizes = env.layer_sizes
    rho = np.full(sizes[0], 1.0 / sizes[0])
    b = belief_init(sizes, env.actions, rho, prior.dirichlet_scale, reward_prior, env.reward_noise_std)
    return sample_mdp(b, rng), b, None


def _hit(goal, step: Step) -> bool:
    l, s, a = goal
    return step.layer == l and step.state == s and (a is None or step.action == a)


def _update(b, step: Step, replication: int):
    if isinstance(b, FiniteSupportPrior):
        return b.condition(step.layer, step.state, step.action, step.reward, step.next_state, replication)
    return belief_update(b, step.layer, step.state, step.action, step.reward, step.next_state, replication)


@dataclass
class SeedResult:
    seed: int
    agent: str
    regret: np.ndarray
    goal_found: np.ndarray
    fw_gap: np.ndarray
    fw_iters: np.ndarray
    wall_time: float
    time_to_solve: int | None = None

    @property
    def cum_regret(self) -> np.ndarray:
        return np.cumsum(self.regret)


def run_seed(cfg: ExperimentConfig, agent_cfg: AgentConfig, seed: int, until_goal: bool = False) -> SeedResult:
    """The learning loop for one seed and one agent.

    ``until_goal`` stops right after the first episode that reaches the goal.
    """
    start = time.perf_counter()
    mdp, beliefs, goal = build_world(cfg, seed)
    if isinstance(beliefs, BeliefState):
        beliefs = beliefs.copy()
    agent = Agent(AgentSpec(agent_cfg.kind, dict(agent_cfg.params)), cfg.solver.options(), cfg.sigma_mode,
                  cfg.warm_start, cfg.value_range)
    v_star = optimal_return(mdp)
    rep = cfg.replication_factor
    regret, found, gaps, iters = [], [], [], []
    # regret of recently seen policy objects; agents often hand back a cached policy
    seen = {}
    for t in range(1, cfg.episodes + 1):
        pi, info = agent.policy(beliefs, t, LazyStream(cfg.master_seed, seed, t, AGENT))
        hit = seen.get(id(pi))
        if hit is None or hit[0] is not pi:
            if len(seen) >= 64:
                seen.clear()
            hit = seen[id(pi)] = (pi, v_star - expected_return(mdp, pi))
        regret.append(hit[1])
        traj = run_episode(mdp, pi, LazyStream(cfg.master_seed, seed, t, STEP))
        found.append(goal is not None and any(_hit(goal, st) for st in traj))
        gaps.append(info["fw_gap"])
        iters.append(info["fw_iters"])
        for st in traj:
            beliefs = _update(beliefs, st, rep)
        if (until_goal and found[-1]) or (cfg.stop_on_solve and time_to_solve(found) is not None):
            break
    res = SeedResult(seed, agent.name, np.array(regret), np.array(found, dtype=bool), np.array(gaps),
                     np.array(iters, dtype=int), time.perf_counter() - start)
    res.time_to_solve = time_to_solve(res.goal_found)
    return res


def _job(args):
    return run_seed(*args)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    seeds: list = field(default_factory=list)  # SeedResult per (agent, seed), config order
    wall_time: float = 0.0

    def rows(self, with_agent: bool = False):
        for r in self.seeds:
            cum = r.cum_regret
            for t in range(len(r.regret)):
                row = [r.seed, t + 1, repr(float(r.regret[t])), repr(float(cum[t])), int(r.goal_found[t]),
                       repr(float(r.fw_gap[t])), int(r.fw_iters[t])]
                yield ([r.agent] + row) if with_agent else row

    def write(self, out_dir, with_agent: bool = False) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        header = ["seed", "episode", "regret", "cum_regret", "goal_found", "fw_gap", "fw_iters"]
        csv_path = out / "results.csv"
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow((["agent"] + header) if with_agent else header)
            w.writerows(self.rows(with_agent))
        manifest = {
            "config": json.loads(self.config.model_dump_json()),
            "library_version": __version__,
            "replication": self.config.replication_factor,
            "protocol": "one posterior sample per episode for sampling agents; regret by exact policy evaluation",
            "wall_time_s": self.wall_time,
            "seeds": [
                {"agent": r.agent, "seed": r.seed, "episodes": int(len(r.regret)),
                 "time_to_solve": r.time_to_solve, "wall_time_s": r.wall_time}
                for r in self.seeds
            ],
        }
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
        return csv_path


def run_learning(cfg: ExperimentConfig, agents=None, workers: int | None = None) -> ExperimentResult:
    """Run every ``(agent, seed)`` pair; seeds may run in a process pool."""
    agents = cfg.agents if agents is None else agents
    jobs = [(cfg, a, s) for a in agents for s in cfg.seeds]
    workers = cfg.workers if workers is None else workers
    start = time.perf_counter()
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_job, jobs))
    else:
        results = [_job(j) for j in jobs]
    return ExperimentResult(cfg, results, time.perf_counter() - start)


# --- reward-free coverage -----------------------------------------------------------------


def coverage_run(mdp, weighted: bool, episodes: int, seed: int, master_seed: int = 0,
                 opts: SolverOptions | None = None):
    """Episodes until every reachable ``(state, action)`` (pooled over layers) is visited.

    The entropy weight of a cell is 1 while it is unvisited and 0 afterwards when
    ``weighted``; it is 1 everywhere otherwise.
    """
    opts = opts or SolverOptions(max_iters=200, gap_tol=1e-3)
    reach = np.any(np.stack([x for x in reachable_cells(mdp)]), axis=0)
    counts = np.zeros((mdp.layer_sizes[0], mdp.A))
    history = []
    cached = None
    for t in range(1, episodes + 1):
        if weighted:
            w = (counts == 0).astype(float)
            lam, _ = solve_weighted_max_entropy([w] * mdp.L, mdp.P, mdp.rho, opts)
            pi = policy_from_occupancy(lam)
        else:
            if cached is None:
                lam, _ = solve_weighted_max_entropy([np.ones_like(counts)] * mdp.L, mdp.P, mdp.rho, opts)
                cached = policy_from_occupancy(lam)
            pi = cached
        for st in run_episode(mdp, pi, stream(master_seed, seed, t, STEP)):
            counts[st.state, st.action] += 1
        history.append(counts.copy())
        if np.all(counts[reach] >= 1):
            break
    return coverage_time(history, reach)
