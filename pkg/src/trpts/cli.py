"""trpts command line: one subcommand per pipeline stage.

Exit codes: 0 success, 2 configuration error (also argparse usage errors),
3 numeric error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import load_config
from .errors import ConfigurationError, NumericError
from . import pipeline


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="YAML run configuration")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the configuration seed")
    parser.add_argument("--out", required=True, help="experiment output directory")
    parser.add_argument("--force", action="store_true",
                        help="overwrite existing stage outputs")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trpts",
        description="Task-relevant parameter and token selection experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    commands = {
        "gen-data": "render the synthetic task datasets",
        "pretrain": "train the backbone on task A from scratch",
        "score": "estimate Fisher scores on task B",
        "select": "build the trainable-parameter mask",
        "plan": "place the token-refining layers",
        "finetune": "masked fine-tuning on task B",
        "eval": "test-set accuracy of the fine-tuned model",
        "report": "assemble the experiment report",
        "ablate": "run the component or placement ablation",
    }
    parsers = {}
    for name, help_text in commands.items():
        p = sub.add_parser(name, help=help_text)
        _common(p)
        parsers[name] = p

    parsers["select"].add_argument("--top-m", type=float, default=None,
                                   help="override top-M percent")
    parsers["select"].add_argument("--c-min", type=int, default=None,
                                   help="override the minimum per-neuron budget")
    parsers["plan"].add_argument("--rho", type=float, default=None,
                                 help="override the select rate")
    parsers["plan"].add_argument("--mode", choices=["sparse", "dense", "random", "explicit"],
                                 default=None, help="override the placement mode")
    parsers["plan"].add_argument("--layers", type=str, default=None,
                                 help="comma-separated layer list for explicit mode")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, seed_override=args.seed)
        out = Path(args.out)
        if args.command == "gen-data":
            pipeline.stage_gen_data(cfg, out, args.force)
        elif args.command == "pretrain":
            pipeline.stage_pretrain(cfg, out, args.force)
        elif args.command == "score":
            pipeline.stage_score(cfg, out, args.force)
        elif args.command == "select":
            pipeline.stage_select(cfg, out, args.force, top_m=args.top_m, c_min=args.c_min)
        elif args.command == "plan":
            layers = None
            if args.layers is not None:
                layers = [int(tok) for tok in args.layers.split(",") if tok.strip()]
            pipeline.stage_plan(cfg, out, args.force, rho=args.rho, mode=args.mode,
                                layers=layers)
        elif args.command == "finetune":
            pipeline.stage_finetune(cfg, out, args.force)
        elif args.command == "eval":
            accuracy = pipeline.stage_eval(cfg, out, args.force)
            print(f"accuracy: {accuracy:.4f}")
        elif args.command == "report":
            report = pipeline.stage_report(cfg, out, args.force)
            print(f"report written: accuracy={report.accuracy:.4f} "
                  f"trainable={report.trainable_fraction:.4%}")
        elif args.command == "ablate":
            rows = pipeline.stage_ablate(cfg, out, args.force)
            for row in rows:
                print(row)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
