"""Command-line entry point.

Subcommands run either a single stage against a run directory (localize,
tables, train, sample, evaluate), the whole pipeline, or plot-data
emission.  Every stage subcommand takes ``--config`` plus optional
``--seed`` and ``--out`` overrides; failures exit nonzero after printing
the failing stage's name.
"""

from __future__ import annotations

import argparse
import sys

from . import pipeline, plotdata
from .errors import StageFailure

STAGE_COMMANDS = {
    "localize": "localize",
    "tables": "tables",
    "train": "train",
    "sample": "sample",
    "evaluate": "evaluate",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scoresbi",
        description=(
            "Simulation-based posterior sampling: localized proposals, "
            "score-network training, and Langevin Monte Carlo."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="experiment config JSON")
        p.add_argument("--seed", type=int, default=None, help="master seed override")
        p.add_argument("--out", default=None, help="run directory override")

    common(sub.add_parser("pipeline", help="run every stage in order"))
    common(sub.add_parser("localize", help="fit the localized proposal"))
    common(sub.add_parser("tables", help="simulate the reference tables"))
    common(sub.add_parser("train", help="fit the score network(s)"))
    common(sub.add_parser("sample", help="run Langevin Monte Carlo"))
    common(sub.add_parser("evaluate", help="write posterior metrics"))

    plot = sub.add_parser("plot-data", help="emit plot-ready CSV grids")
    plot.add_argument("--out", required=True, help="completed run directory")
    plot.add_argument(
        "--kind",
        required=True,
        choices=plotdata.PLOT_KINDS,
        help="which plot data to emit",
    )
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "pipeline":
            config = pipeline.load_config(args.config)
            result = pipeline.run_pipeline(config, out_dir=args.out, seed=args.seed)
            rows = result.samples.samples.shape[0]
            print(f"run complete: {rows} posterior draws in {result.out_dir}")
            for row in result.report.coords:
                print(
                    f"theta_{row['coord']}: mean {row['mean']:.4g} "
                    f"ci95 [{row['ci_lo']:.4g}, {row['ci_hi']:.4g}]"
                )
        elif args.command in STAGE_COMMANDS:
            config = pipeline.load_config(args.config)
            stage = STAGE_COMMANDS[args.command]
            run = pipeline.run_stage(
                config, stage, out_dir=args.out, seed=args.seed
            )
            if stage == "localize" and not config.localization.enabled:
                print("localization disabled in config; nothing to do")
            else:
                print(f"stage {stage} complete in {run.out_dir}")
        else:
            written = plotdata.emit_plot_data(args.out, args.kind)
            for path in written:
                print(path)
    except StageFailure as exc:
        print(f"error in stage {exc.stage}: {exc.cause}", file=sys.stderr)
        return 1
    except Exception as exc:  # config parsing, missing artifacts, bad flags
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
