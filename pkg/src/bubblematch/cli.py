"""Command-line entry point: ``python -m bubblematch <command>``."""

from __future__ import annotations

import argparse
import sys
from collections import Counter
from typing import List, Optional

import numpy as np

from .arbitrage import MeasureSpec, constructed_policy, physical_policy, verify_martingale
from .core import TimeGrid
from .experiment import FIGURE3_TILT, ExperimentConfig, emit_figure_data, preset, run_experiment, run_tilt_experiment
from .population import AgentPopulation, exact_match_distribution, match_step


def _overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    return cfg.replace(seed=args.seed, paths=args.paths, engine=args.engine, out=args.out,
                       workers=args.workers)


def _summary(res, out=sys.stderr):
    rep = res.report
    print(f"# paths={rep.paths} wall={rep.wall_seconds:.2f}s throughput={rep.throughput:.0f} paths/s",
          file=out)


def cmd_run(args, cfg: ExperimentConfig) -> int:
    cfg = _overrides(cfg, args)
    res = run_experiment(cfg)
    if not cfg.out:
        sys.stdout.write(res.report.averages_csv())
    _summary(res)
    return 0


def cmd_simulate(args) -> int:
    return cmd_run(args, ExperimentConfig.load(args.config))


def cmd_figure(args) -> int:
    cfg = preset(args.command)
    if args.config:
        cfg = ExperimentConfig.load(args.config)
    return cmd_run(args, cfg)


def cmd_tilt(args) -> int:
    cfg = ExperimentConfig.load(args.config) if args.config else preset("figure3")
    cfg = _overrides(cfg, args)
    if args.periods:
        cfg = cfg.replace(periods=args.periods)
    tilt = dict(FIGURE3_TILT)
    for item in args.override or []:
        key, _, prob = item.partition("=")
        tilt[key] = float(prob)
    base, tilted = run_tilt_experiment(cfg, tilt)
    print("measure,mean_beta1,stderr_beta1")
    for name, res in (("original", base), ("tilted", tilted)):
        print(f"{name},{res.report.mean_beta[1]:.15g},{res.report.stderr_beta[1]:.15g}")
    if cfg.out:
        emit_figure_data(base, cfg.out + "/original")
        emit_figure_data(tilted, cfg.out + "/tilted")
    return 0


def cmd_verify(args) -> int:
    p0 = np.asarray(args.p0, dtype=float)
    grid = TimeGrid.uniform(args.periods, args.T)
    policy = constructed_policy if args.measure == "constructed" else physical_policy(0.5)
    rep = verify_martingale(MeasureSpec(policy), p0, grid, n_paths=args.paths or 100,
                            resamples=args.resamples, seed=args.seed or 0)
    sys.stdout.write(rep.to_csv())
    print(f"# max |residual| = {rep.max_residual:.3e}; MC mean dS = {rep.mc_mean:.3e} "
          f"+- {rep.mc_stderr:.3e} ({rep.mc_samples} samples)", file=sys.stderr)
    return 0


def cmd_matching(args) -> int:
    types = np.array([int(t) - 1 for t in args.types.split(",")])
    K = int(types.max()) + 1 if args.K is None else args.K
    theta = np.full((K, K), args.theta_level / K)
    pop = AgentPopulation(types, np.full(types.size, -1), K)
    exact = exact_match_distribution(types, theta)
    rng = np.random.default_rng(args.seed or 0)
    runs = args.paths or 100_000
    counts = Counter()
    for _ in range(runs):
        out = match_step(pop, theta, rng)
        counts[_pairs(out.partner)] += 1
    print("pairs,exact_probability,empirical_frequency")
    for key in sorted(set(exact) | set(counts)):
        label = " ".join(f"{a}-{b}" for a, b in key) or "none"
        print(f"{label},{exact.get(key, 0.0):.15g},{counts[key] / runs:.15g}")
    return 0


def _pairs(partner) -> tuple:
    return tuple((int(i), int(j)) for i, j in enumerate(partner) if j > i)


def cmd_validate(args) -> int:
    try:
        cfg = ExperimentConfig.load(args.config)
    except (ValueError, TypeError) as e:
        print(f"invalid: {e}")
        return 1
    errs = cfg.validate()
    if errs:
        for e in errs:
            print(f"invalid: {e}")
        return 1
    print("ok")
    return 0


def _common(p: argparse.ArgumentParser, config_required: bool = False):
    p.add_argument("--config", required=config_required, help="YAML experiment file")
    p.add_argument("--seed", type=int)
    p.add_argument("--paths", type=int)
    p.add_argument("--engine", choices=["distribution", "population"])
    p.add_argument("--out")
    p.add_argument("--workers", type=int)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bubblematch", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run an experiment from a config file")
    _common(p, config_required=True)
    p.set_defaults(func=cmd_simulate)

    for name in ("figure1", "figure2", "figure3"):
        p = sub.add_parser(name, help=f"run the {name} preset")
        _common(p)
        p.set_defaults(func=cmd_figure)

    p = sub.add_parser("tilt", help="compare the first-period bubble under a tilted driver law")
    _common(p)
    p.add_argument("--periods", type=int, default=1, help="periods to simulate (1 suffices for beta^1)")
    p.add_argument("--override", action="append", help="extra tilt entry driver@period=prob")
    p.set_defaults(func=cmd_tilt)

    p = sub.add_parser("verify-martingale", help="check the constructed martingale measure")
    p.add_argument("--p0", type=float, nargs=3, default=[0.5, 0.2, 0.3])
    p.add_argument("--periods", type=int, default=10)
    p.add_argument("--T", type=float, default=1.0)
    p.add_argument("--measure", choices=["constructed", "physical"], default="constructed")
    p.add_argument("--resamples", type=int, default=10)
    p.add_argument("--seed", type=int)
    p.add_argument("--paths", type=int)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("matching-demo", help="matching frequencies versus exact enumeration")
    p.add_argument("--types", default="1,1,2,2", help="comma-separated agent types (1-based)")
    p.add_argument("--K", type=int)
    p.add_argument("--theta-level", type=float, default=0.9)
    p.add_argument("--seed", type=int)
    p.add_argument("--paths", type=int)
    p.set_defaults(func=cmd_matching)

    p = sub.add_parser("validate-config", help="check a config file")
    p.add_argument("config")
    p.set_defaults(func=cmd_validate)
    return ap


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
