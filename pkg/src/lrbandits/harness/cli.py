"""``lab`` command line entry point."""
import argparse
import sys

from ..exceptions import ConfigError
from .config import DESCRIPTIONS, EXPERIMENTS, parse_config
from .experiments import run_experiment


def build_parser():
    parser = argparse.ArgumentParser(prog="lab", description="Run contextual low-rank bandit experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run the experiment described by a config file")
    run.add_argument("config", help="path to a key = value config file")
    run.add_argument("--seeds", type=int, default=None, help="override the number of replicates")
    run.add_argument("--out", default=None, help="output directory (overrides output_path)")
    run.add_argument("--jobs", type=int, default=1, help="worker processes")
    sub.add_parser("list-experiments", help="list experiment identifiers")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "list-experiments":
        for eid in EXPERIMENTS:
            print(f"{eid}\t{DESCRIPTIONS[eid]}")
        return 0
    try:
        cfg = parse_config(args.config)
        if args.seeds is not None:
            cfg = cfg.replace(seeds=args.seeds)
        if args.jobs < 1:
            raise ConfigError("--jobs must be at least 1")
        res = run_experiment(cfg, jobs=args.jobs, out_dir=args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    for kind, path in res.paths.items():
        print(f"{kind}: {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
