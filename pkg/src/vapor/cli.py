"""Command-line entry point: ``vapor {solve,run,compare,pgamma}``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from .harness import AgentConfig, EnvConfig, ExperimentConfig, build_world, run_learning
from .oracles import exact_pgamma, ts_monte_carlo_pgamma
from .envs import make_chain_pair
from .mdp import policy_from_occupancy
from .solver import SolverOptions, VaporProblem, solve_frank_wolfe

ENVS = ("deepsea", "gridworld", "chain", "fourroom", "random")
PGAMMA_METHODS = ("exact", "ts-mc", "vapor")


def _fmt(x) -> str:
    return np.array2string(np.asarray(x), precision=4, suppress_small=True, max_line_width=120)


def cmd_solve(args) -> int:
    env = EnvConfig(name=args.env, size=args.size, epsilon=args.eps, seed=args.env_seed)
    cfg = ExperimentConfig(env=env, agents=[AgentConfig(kind="vapor")], episodes=1, seeds=[0],
                           sigma_mode=args.sigma_mode, value_range=args.value_range)
    _, beliefs, _ = build_world(cfg, 0)
    t = beliefs.transformed(args.sigma_mode, args.value_range)
    prob = VaporProblem(t.P_mean, t.rho, t.reward_mu, t.sigma_tilde)
    opts = SolverOptions(max_iters=args.max_iters, gap_tol=args.fw_tol)
    lam, diag = solve_frank_wolfe(prob, opts, certify=True)
    if args.dump_trace:
        diag.dump_trace(args.dump_trace)
    gap = diag.dual_value - diag.objective
    print(f"objective      {diag.objective:.8f}")
    print(f"dual value     {diag.dual_value:.8f}")
    print(f"dual gap       {gap:.3e}")
    print(f"fw gap         {diag.fw_gap:.3e} after {diag.iterations} iterations")
    print(f"flow residual  {diag.max_flow_residual:.3e}")
    pi = policy_from_occupancy(lam)
    for l in range(min(len(pi), args.show_layers)):
        print(f"policy layer {l}:\n{_fmt(pi[l])}")
    return 0 if gap <= args.tol else 1


def _load(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config)
    if getattr(args, "out", None):
        cfg = cfg.model_copy(update={"output": args.out})
    return cfg


def _summarise(result):
    by_agent = {}
    for r in result.seeds:
        by_agent.setdefault(r.agent, []).append(r)
    for agent, rs in by_agent.items():
        solved = [r.time_to_solve for r in rs if r.time_to_solve is not None]
        med = f"{np.median(solved):g}" if len(solved) == len(rs) else f"{len(solved)}/{len(rs)} solved"
        final = np.mean([r.cum_regret[-1] for r in rs])
        print(f"{agent:12s} seeds={len(rs)} time_to_solve(median)={med} mean_final_cum_regret={final:.4f}")


def _execute(args, with_agent: bool) -> int:
    cfg = _load(args)
    result = run_learning(cfg, workers=getattr(args, "workers", None))
    out = cfg.output or "results"
    path = result.write(out, with_agent=with_agent)
    _summarise(result)
    print(f"wrote {path} and {Path(out) / 'manifest.json'}")
    return 0


def cmd_run(args) -> int:
    return _execute(args, with_agent=False)


def cmd_compare(args) -> int:
    return _execute(args, with_agent=True)


def cmd_pgamma(args) -> int:
    eps = args.eps if args.eps is not None else 0.01 / args.L
    prior = make_chain_pair(args.L, eps)
    methods = [args.method] if args.method else list(PGAMMA_METHODS)
    cols = {}
    if "exact" in methods:
        cols["exact"] = exact_pgamma(prior)
    if "ts-mc" in methods:
        cols["ts-mc"] = ts_monte_carlo_pgamma(prior, args.samples, np.random.default_rng(args.seed))
    if "vapor" in methods:
        t = prior.transformed()
        lam, _ = solve_frank_wolfe(VaporProblem(t.P_mean, t.rho, t.reward_mu, t.sigma_tilde),
                                   SolverOptions(gap_tol=1e-8))
        cols["vapor"] = lam
    print("layer state action " + " ".join(f"{m:>10s}" for m in cols))
    for l, S in enumerate(prior.layer_sizes):
        for s in range(S):
            for a in range(prior.A):
                vals = " ".join(f"{cols[m][l][s, a]:10.6f}" for m in cols)
                print(f"{l:5d} {s:5d} {a:6d} {vals}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vapor", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="solve the VAPOR program on an environment's prior beliefs")
    s.add_argument("--env", choices=ENVS, required=True)
    s.add_argument("--size", type=int, default=None, help="depth, grid side or chain length")
    s.add_argument("--eps", type=float, default=None, help="chain step cost")
    s.add_argument("--env-seed", type=int, default=0)
    s.add_argument("--sigma-mode", choices=("count_bound", "exact_posterior_std"), default="count_bound")
    s.add_argument("--value-range", type=float, default=None)
    s.add_argument("--max-iters", type=int, default=5000)
    s.add_argument("--fw-tol", type=float, default=1e-6, help="Frank-Wolfe gap stopping threshold")
    s.add_argument("--tol", type=float, default=1e-3, help="dual gap accepted for exit status 0")
    s.add_argument("--dump-trace", metavar="PATH")
    s.add_argument("--show-layers", type=int, default=1)
    s.set_defaults(func=cmd_solve)

    r = sub.add_parser("run", help="run a learning experiment from a JSON config")
    r.add_argument("--config", required=True)
    r.add_argument("--out")
    r.add_argument("--workers", type=int)
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("compare", help="multi-agent run with an agent column in the CSV")
    c.add_argument("--config", required=True)
    c.add_argument("--out")
    c.add_argument("--workers", type=int)
    c.set_defaults(func=cmd_compare)

    g = sub.add_parser("pgamma", help="exact, Thompson-sampling and VAPOR estimates of P(Gamma) on the chain prior")
    g.add_argument("--env", choices=("chain",), default="chain")
    g.add_argument("--L", type=int, required=True)
    g.add_argument("--eps", type=float, default=None)
    g.add_argument("--method", choices=PGAMMA_METHODS, default=None, help="default: all side by side")
    g.add_argument("--samples", type=int, default=10_000)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_pgamma)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except (ValidationError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
