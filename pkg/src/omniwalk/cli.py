"""Command-line entry point: ``omniwalk {train,eval,ablate,export-plotdata}``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import RunConfig, load_config
from .env import ENVIRONMENTS
from .mathkit import ConfigurationError
from .net import CheckpointError
from . import runner


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg.run.seed = args.seed
    if getattr(args, "env", None):
        cfg.run.env = args.env
    if getattr(args, "out", None):
        cfg.run.out_dir = args.out
    return cfg


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="omniwalk", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="run configuration (TOML or JSON, or a run manifest)")
        sp.add_argument("--seed", type=int, help="override run.seed")
        sp.add_argument("--env", choices=sorted(ENVIRONMENTS), help="override run.env")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--no-randomization", action="store_true",
                        help="disable every sim-to-real randomization")

    t = sub.add_parser("train", help="train a policy")
    common(t)
    t.add_argument("--resume", help="checkpoint to resume from")

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    common(e)
    e.add_argument("checkpoint")
    e.add_argument("--velocity-script", help="CSV of time_s,vx,vy,wz command changes")
    e.add_argument("--duration", type=float, default=60.0, help="seconds per trial")
    e.add_argument("--trials", type=int, default=10)

    a = sub.add_parser("ablate", help="train a variant next to the baseline")
    common(a)
    a.add_argument("variant", choices=runner.ABLATIONS)

    x = sub.add_parser("export-plotdata", help="write plot-ready CSVs for a run directory")
    x.add_argument("run_dir")
    x.add_argument("--out", help="destination (default: <run_dir>/plotdata)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "train":
            cfg = _config(args)
            res = runner.train(cfg, resume=args.resume,
                               disable_randomization=args.no_randomization)
            return res.status
        if args.command == "eval":
            cfg = _config(args)
            out = args.out or str(Path(args.checkpoint).resolve().parent.parent / "eval")
            report = runner.evaluate(args.checkpoint, cfg, out, args.velocity_script,
                                     args.duration, args.trials, args.no_randomization)
            print(f"falls {report['total_falls']}, success rate {report['success_rate']:.2f}, "
                  f"mean K {report['mean_k_vel']:.3f}; written to {out}")
            return 0
        if args.command == "ablate":
            cfg = _config(args)
            report = runner.ablate(cfg, args.variant)
            return 0 if all(v == 0 for v in report["status"].values()) else 2
        if args.command == "export-plotdata":
            out = runner.export_plotdata(args.run_dir, args.out)
            print(f"plot data written to {out}")
            return 0
    except (ConfigurationError, CheckpointError, FileNotFoundError, ValueError) as exc:
        print(f"omniwalk: error: {exc}", file=sys.stderr)
        return 1
    return 1


if __name__ == "__main__":
    sys.exit(main())
