"""Command-line pipeline driver.

Stage subcommands (ingest .. evaluate) run the pipeline up to and including
that stage, persisting artifacts under the workdir and resuming from the last
completed stage unless --force. `evaluate` (alias `pipeline`) is the full run;
`ablate` runs the variant grid; `report` emits the interpretability bundle.

Exit codes: 0 ok, 1 runtime failure, 2 validation or usage error.
"""

from __future__ import annotations

import argparse
import sys
import traceback

import torch

from .config import RunConfig, default_config_yaml, dump_config, load_config
from .errors import ConfigError, DataError, SubtypeclError
from .pipeline import PipelineRunner, build_report, run_ablation

STAGE_COMMANDS = ("ingest", "structures", "views", "fuse", "subtype",
                  "prototype", "train", "evaluate")


def _load_run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.workdir:
        cfg.paths.workdir = args.workdir
    if args.seed is not None:
        cfg.seed = args.seed
    if args.single_thread:
        torch.set_num_threads(1)
        cfg.structure.threads = 1
    cfg.validate()
    return cfg


def _cmd_stage(args) -> int:
    cfg = _load_run_config(args)
    runner = PipelineRunner(cfg, force=args.force)
    target = "evaluate" if args.command == "pipeline" else args.command
    runner.run_until(target)
    if target == "evaluate":
        print(f"metrics written to {runner.workdir / 'metrics.csv'}")
    else:
        print(f"completed stage '{target}' in {runner.workdir}")
    return 0


def _cmd_synth(args) -> int:
    cfg = _load_run_config(args)
    runner = PipelineRunner(cfg, force=args.force)
    runner.workdir.mkdir(parents=True, exist_ok=True)
    manifest = runner.ensure_synth()
    print(f"synthetic cohort manifest: {manifest}")
    return 0


def _cmd_ablate(args) -> int:
    cfg = _load_run_config(args)
    summary = run_ablation(cfg, force=args.force)
    print(f"ablation summary: {summary}")
    return 0


def _cmd_report(args) -> int:
    cfg = _load_run_config(args)
    out = build_report(cfg, top_n=args.top_n)
    print(f"report bundle: {out}")
    return 0


def _cmd_config(args) -> int:
    if args.print_defaults:
        print(default_config_yaml(), end="")
        return 0
    cfg = _load_run_config(args)
    print(dump_config(cfg), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--workdir", help="override paths.workdir")
    common.add_argument("--seed", type=int, help="override the global seed")
    common.add_argument("--force", action="store_true",
                        help="recompute stages even when a matching manifest exists")
    common.add_argument("--single-thread", action="store_true",
                        help="pin torch to one thread for bitwise determinism")

    parser = argparse.ArgumentParser(
        prog="subtypecl",
        description="Multi-view subtype discovery + subtype-guided contrastive "
                    "training for brain-connectivity cohorts")
    sub = parser.add_subparsers(dest="command", required=True)

    for stage in STAGE_COMMANDS:
        p = sub.add_parser(stage, parents=[common],
                           help=f"run the pipeline through the '{stage}' stage")
        p.set_defaults(func=_cmd_stage)
    p = sub.add_parser("pipeline", parents=[common],
                       help="alias for 'evaluate' (full per-fold run)")
    p.set_defaults(func=_cmd_stage)

    p = sub.add_parser("synth", parents=[common],
                       help="generate the synthetic cohort configured in [synth]")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("ablate", parents=[common],
                       help="run the variant grid (s, cl, m, t, g, full x K sweep)")
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("report", parents=[common],
                       help="emit top-region rankings, 2-D embeddings, loss traces")
    p.add_argument("--top-n", type=int, default=None,
                   help="regions per prototype ranking (default from config)")
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("config", parents=[common], help="inspect configuration")
    p.add_argument("--print-defaults", action="store_true",
                   help="dump the full default configuration as YAML")
    p.set_defaults(func=_cmd_config)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SubtypeclError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception:
        traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
