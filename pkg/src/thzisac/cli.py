"""Command-line front end for the experiment runners.

Exit codes: 0 success, 2 configuration error, 3 selftest failure.
"""

from __future__ import annotations

import argparse
import sys

from . import experiments
from .config import ConfigError, load_config

_RUNNERS = {
    "tradeoff": experiments.run_tradeoff,
    "se-sweep": experiments.run_se_sweep,
    "beam-scan": experiments.run_beam_scan,
    "mc-rmse": experiments.run_mc_rmse,
    "isi-demo": experiments.run_isi_demo,
    "ici-demo": experiments.run_ici_demo,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="thzisac",
        description="Terahertz joint sensing/communication transmit-design and "
                    "receiver-processing experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in list(_RUNNERS) + ["selftest"]:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="YAML experiment config")
        p.add_argument("--seed", type=int, default=None, help="root seed override")
        p.add_argument("--trials", type=int, default=None, help="trial count override")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--threads", type=int, default=1, help="concurrent trials")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, {"seed": args.seed, "trials": args.trials})
    except (ConfigError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if args.command == "selftest":
        return 0 if experiments.selftest(cfg) else 3
    summary = _RUNNERS[args.command](cfg, args.out, threads=args.threads)
    print(f"{args.command}: wrote results under {args.out}/")
    for key in sorted(summary)[:8]:
        print(f"  {key}: {summary[key]}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
