"""Command line entry point: ``migdyn run`` and ``migdyn check-conditions``.

Exit status: 0 all checks pass, 1 a check fails, 2 invalid usage or
configuration, 3 numerical failure (integration or oracle).
"""

import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor

from .experiments.config import ConfigError, load_config
from .experiments.registry import get, registry
from .experiments.runner import EXIT_USAGE, StageError, conditions, run


def _configs(args):
    if args.all:
        cfgs = registry()
    elif args.experiment:
        try:
            cfgs = [get(args.experiment)]
        except KeyError as exc:
            raise ConfigError(exc.args[0]) from exc
    else:
        cfgs = [load_config(args.config)]
    return [c.with_overrides(horizon=args.horizon, alpha=args.alpha, seed=args.seed) for c in cfgs]


def _run_one(cfg, out_dir):
    """Run ``cfg`` and return ``(exit code, output lines)``; safe in a worker process."""
    try:
        summary = run(cfg, out_dir=out_dir)
    except StageError as exc:
        return exc.code, [f"experiment = {cfg.name}", f"error = {exc}"]
    return summary.exit_code, summary.lines()


def _out_dir(args, cfg, many):
    base = args.out or cfg.output.get("dir")
    if base is None:
        return None
    return os.path.join(base, cfg.name) if many else base


def cmd_run(args):
    cfgs = _configs(args)
    many = len(cfgs) > 1
    jobs = [(cfg, _out_dir(args, cfg, many)) for cfg in cfgs]
    if many:
        with ProcessPoolExecutor(max_workers=len(jobs)) as pool:
            results = list(pool.map(_run_one, *zip(*jobs)))
    else:
        results = [_run_one(*jobs[0])]
    for i, (_code, lines) in enumerate(results):
        if i:
            print()
        print("\n".join(lines))
    return max(code for code, _ in results)


def cmd_check_conditions(args):
    cfg = load_config(args.config).with_overrides(horizon=args.horizon, alpha=args.alpha)
    try:
        summary = conditions(cfg)
    except StageError as exc:
        print(f"error = {exc}")
        return exc.code
    print("\n".join(summary.lines()))
    return summary.exit_code


def build_parser():
    parser = argparse.ArgumentParser(
        prog="migdyn", description="Damped inertial dynamics with vanishing hierarchical penalty.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run experiments and print their summaries")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--experiment", metavar="NAME", help="a built-in experiment")
    src.add_argument("--config", metavar="PATH", help="an INI experiment file")
    src.add_argument("--all", action="store_true", help="every built-in experiment, in parallel")
    p.add_argument("--out", metavar="DIR", help="artifact directory (one subdirectory per run with --all)")
    p.add_argument("--horizon", type=float, metavar="T", help="override the horizon")
    p.add_argument("--alpha", type=float, metavar="A", help="override a power-law exponent")
    p.add_argument("--seed", type=int, metavar="N", help="override the seed")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("check-conditions", help="evaluate the schedule conditions of a config")
    p.add_argument("--config", metavar="PATH", required=True)
    p.add_argument("--horizon", type=float, metavar="T")
    p.add_argument("--alpha", type=float, metavar="A")
    p.set_defaults(func=cmd_check_conditions)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
