"""Command-line entry point: dhaseg <command> --config PATH [overrides]."""
from __future__ import annotations

import argparse
import dataclasses
import sys

from . import pipeline
from .config import ConfigError, RunConfig, load_config


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="path to a key=value config file")
    p.add_argument("--seed", type=int, help="override master_seed")
    p.add_argument("--k", help="override K ('auto' or an integer)")
    p.add_argument("--mode", help="override adapt_mode")
    p.add_argument("--out", help="override output directory")


def _resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    overrides = {}
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    if getattr(args, "k", None) is not None:
        overrides["k"] = args.k
    if getattr(args, "mode", None) is not None:
        overrides["adapt_mode"] = args.mode
    if args.out is not None:
        overrides["out_dir"] = args.out
    return dataclasses.replace(cfg, **overrides) if overrides else cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dhaseg",
        description="Discover-Hallucinate-Adapt pipeline on the synthetic "
                    "compound-domain segmentation benchmark")
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "generate-data": "generate the synthetic benchmark",
        "discover": "cluster the compound target into latent domains",
        "hallucinate": "train the translator and translate the source set",
        "adapt": "train the segmentation network with adversarial alignment",
        "evaluate": "compute metrics, curves, and feature exports",
        "run-all": "run every stage in order",
        "ablate": "run an ablation preset and emit a comparison table",
    }
    for name, help_text in commands.items():
        p = sub.add_parser(name, help=help_text)
        _add_common(p)
        if name == "ablate":
            p.add_argument("--preset", required=True,
                           choices=pipeline.ABLATION_PRESETS)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _resolve_config(args)
        if args.command == "generate-data":
            pipeline.run_generate(cfg)
        elif args.command == "discover":
            pipeline.run_discover(cfg)
        elif args.command == "hallucinate":
            pipeline.run_hallucinate(cfg)
        elif args.command == "adapt":
            pipeline.run_adapt(cfg)
        elif args.command == "evaluate":
            pipeline.run_evaluate(cfg)
        elif args.command == "run-all":
            pipeline.run_all(cfg)
        elif args.command == "ablate":
            pipeline.run_ablate(cfg, args.preset)
    except (ConfigError, pipeline.PipelineError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
