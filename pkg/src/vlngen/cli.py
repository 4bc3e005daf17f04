"""Operator CLI: pipeline stages as subcommands over one declarative config."""

from __future__ import annotations

import argparse
import json
import sys

from .config import load_config
from .errors import ConfigError, PipelineError, VlngenError
from . import pipeline

_COMMANDS = {
    "sample": pipeline.run_sample,
    "generate": pipeline.run_generate,
    "verify": pipeline.run_verify,
    "pretext": pipeline.run_pretext,
    "export": pipeline.run_export,
    "stats": pipeline.run_stats,
    "e2e": pipeline.run_e2e,
}

_STAGE_PLANS = {
    "sample": ["sample"],
    "generate": ["generate"],
    "verify": ["verify"],
    "pretext": ["pretext"],
    "export": ["export"],
    "stats": ["stats"],
    "e2e": ["sample", "generate", "pretext", "export"],
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vlngen",
        description="Generate verified path-instruction pairs from indoor tour videos.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name, help=f"run the {name} stage")
        p.add_argument("--config", required=True, help="pipeline config file (YAML)")
        p.add_argument("--seed", type=int, default=None, help="override every stage seed")
        p.add_argument("--backend", default=None, help="override the gateway backend")
        p.add_argument("--jobs", type=int, default=None, help="worker count override")
        p.add_argument(
            "--dry-run", action="store_true", help="print the planned work and exit"
        )
    return parser


def _plan(command: str, cfg) -> dict:
    paths = pipeline.stage_paths(cfg)
    return {
        "command": command,
        "stages": _STAGE_PLANS[command],
        "videos": cfg.split.all_videos,
        "granularities": [g.value for g in cfg.generation.granularities],
        "gateway_backend": cfg.gateway.backend,
        "output_dir": str(paths.out),
    }


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.override_seed(args.seed)
        if args.backend is not None:
            cfg.gateway.backend = args.backend
        if args.jobs is not None:
            if args.jobs < 1:
                raise ConfigError("jobs must be positive")
            cfg.jobs = args.jobs
        if args.dry_run:
            print(json.dumps(_plan(args.command, cfg), indent=2, sort_keys=True))
            return 0
        summary = _COMMANDS[args.command](cfg)
        print(json.dumps(summary, indent=2, sort_keys=True))
        return 0
    except ConfigError as exc:
        _print_error("ConfigError", args.command, exc)
        return 2
    except PipelineError as exc:
        _print_error("PipelineError", getattr(exc, "stage", args.command) or args.command, exc)
        return 3
    except VlngenError as exc:
        _print_error(type(exc).__name__, args.command, exc)
        return 1


def _print_error(kind: str, stage: str, exc: Exception) -> None:
    print(
        json.dumps({"error": kind, "stage": stage, "message": str(exc)}, sort_keys=True),
        file=sys.stderr,
    )


if __name__ == "__main__":
    raise SystemExit(main())
