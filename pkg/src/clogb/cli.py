"""Command-line entry point: ``clogb run | check-oracles | sweep``."""

import argparse
import os
import sys
from dataclasses import replace

from clogb.harness import ConfigError, format_summary, load_config, run_experiment, sweep


def _config_path(text):
    if not os.path.isfile(text):
        raise argparse.ArgumentTypeError(f"config file not found: {text}")
    return text


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def build_parser():
    parser = argparse.ArgumentParser(
        prog="clogb",
        description="Simulate combinatorial logistic bandit algorithms and baselines.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment from a config file")
    run.add_argument("--config", required=True, type=_config_path, help="experiment config (INI)")
    run.add_argument("--out", help="output directory (overrides out_dir)")
    run.add_argument("--seeds", type=_positive_int, help="number of seeds (overrides the config)")
    run.add_argument("--master-seed", type=int, help="master seed (overrides the config)")
    run.add_argument("--workers", type=_positive_int, help="parallel trial workers")

    sub.add_parser("check-oracles", help="cross-check every oracle against exhaustive search")

    sw = sub.add_parser("sweep", help="run one experiment per value of a parameter")
    sw.add_argument("--config", required=True, type=_config_path, help="experiment config (INI)")
    sw.add_argument("--param", required=True, help="instance, experiment, or algorithm field")
    sw.add_argument("--values", required=True, help="comma-separated values")
    sw.add_argument("--out", help="output directory prefix (overrides out_dir)")
    return parser


def _apply_overrides(config, args):
    changes = {}
    if getattr(args, "out", None):
        changes["out_dir"] = args.out
    if getattr(args, "seeds", None):
        changes["seeds"] = args.seeds
    if getattr(args, "master_seed", None) is not None:
        changes["master_seed"] = args.master_seed
    if getattr(args, "workers", None):
        changes["workers"] = args.workers
    return replace(config, **changes) if changes else config


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code
    try:
        if args.command == "check-oracles":
            from clogb.oracle_checks import run_all

            ok = True
            for name, passed, detail in run_all():
                print(f"{'PASS' if passed else 'FAIL'} {name}: {detail}")
                ok &= passed
            return 0 if ok else 1
        config = _apply_overrides(load_config(args.config), args)
        if args.command == "run":
            result = run_experiment(config)
            print(format_summary(result))
            print(f"wrote {os.path.join(config.out_dir, 'regret.csv')}")
            return 0
        values = [v.strip() for v in args.values.split(",") if v.strip()]
        if not values:
            parser.print_usage(sys.stderr)
            print("error: --values needs at least one value", file=sys.stderr)
            return 2
        for value, result in sweep(config, args.param, values).items():
            print(f"== {args.param}={value}")
            print(format_summary(result))
        return 0
    except (ConfigError, OSError, ValueError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
