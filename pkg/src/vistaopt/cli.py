"""Operator entry point: run optimization, export traces, emit reports.

Exit codes, flag grammar, and artifact layouts are documented in
``docs/cli.md``.
"""

from __future__ import annotations

import argparse
import sys
from collections import Counter
from pathlib import Path

from .backends.http import HttpBackend
from .backends.synthetic import SyntheticBackend, SyntheticWorldConfig, make_synthetic_dataset
from .domain import (
    RunConfig,
    default_taxonomy,
    load_config_file,
    load_dataset,
    load_seed_prompt,
    load_taxonomy_path,
    validate_config,
)
from .errors import (
    InvalidConfigError,
    IoFailureError,
    MissingArtifactsError,
    MissingTraceError,
    TransportFailureError,
    VistaError,
)
from .optimizer import run
from .reports import build_report, load_trace, write_report
from .trace import export_tree

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_INVALID_CONFIG = 2
EXIT_IO_FAILURE = 3
EXIT_TRANSPORT_FAILURE = 4
EXIT_MISSING_ARTIFACTS = 5


def _build_dataset(section: dict | None):
    if not section or "synthetic" in (section or {}):
        params = (section or {}).get("synthetic", {})
        return make_synthetic_dataset(
            train_size=params.get("train_size", 50),
            val_size=params.get("val_size", 50),
        ), True
    return load_dataset(section["train_path"], section["val_path"]), False


def cmd_optimize(config_path: str, seed_prompt_path: str, out_dir: str,
                 backend_kind: str = "synthetic", mode: str | None = None,
                 seed: int | None = None) -> int:
    try:
        file_config = load_config_file(config_path)
        if mode is not None:
            file_config["mode"] = mode
        if seed is not None:
            file_config["rng_seed"] = seed
        config = RunConfig.from_dict(file_config)
        dataset, synthetic_data = _build_dataset(file_config.get("dataset"))
        validate_config(config, dataset)
        taxonomy_path = file_config.get("taxonomy_path")
        taxonomy = load_taxonomy_path(taxonomy_path) if taxonomy_path else default_taxonomy()
        seed_prompt = load_seed_prompt(seed_prompt_path)
        world = SyntheticWorldConfig.from_dict(file_config.get("synthetic_world", {}))
        if backend_kind == "synthetic":
            backend = SyntheticBackend(world, dataset, taxonomy, config.rng_seed)
        elif backend_kind == "http":
            backend = HttpBackend.from_config(file_config.get("http", {}))
        else:
            raise InvalidConfigError([f"unknown backend {backend_kind!r}"])
        resolved = dict(file_config)
        resolved.update(config.to_dict())
        resolved["backend"] = backend_kind
        if backend_kind == "synthetic":
            resolved["synthetic_world"] = world.to_dict()
        result = run(
            config=config,
            dataset=dataset,
            taxonomy=taxonomy,
            backend=backend,
            seed_prompt=seed_prompt,
            out_dir=out_dir,
            resolved_config=resolved,
            template_paths=file_config.get("templates"),
        )
    except InvalidConfigError as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_INVALID_CONFIG
    except IoFailureError as exc:
        print(f"io failure: {exc}", file=sys.stderr)
        return EXIT_IO_FAILURE
    except TransportFailureError as exc:
        print(f"transport failure: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT_FAILURE
    except (ValueError, VistaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    print(f"run complete: best val accuracy "
          f"{result.best.val_accuracy:.4f} after {len(result.outcomes)} rounds "
          f"({result.evaluator.metric_calls} metric calls)")
    branches = Counter(o.branch for o in result.outcomes)
    if branches:
        print("rounds by branch: " + ", ".join(
            f"{name}={count}" for name, count in sorted(branches.items())))
    if branches.get("skipped"):
        print(f"warning: {branches['skipped']} round(s) skipped "
              f"(see rounds/*.json logs)", file=sys.stderr)
    print(f"artifacts in {out_dir}")
    return EXIT_OK


def cmd_export_trace(run_dir: str, fmt: str = "dot") -> int:
    try:
        tree = load_trace(run_dir)
        text = export_tree(tree, fmt)
    except MissingTraceError as exc:
        print(f"missing trace: {exc}", file=sys.stderr)
        return EXIT_MISSING_ARTIFACTS
    except (ValueError, VistaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    out_path = Path(run_dir) / f"trace.{fmt}"
    out_path.write_text(text, encoding="utf-8")
    print(f"wrote {out_path}")
    return EXIT_OK


def cmd_report(run_dir: str) -> int:
    try:
        taxonomy = default_taxonomy()
        bundle = build_report(run_dir, taxonomy)
        write_report(run_dir, bundle)
    except (MissingTraceError, MissingArtifactsError) as exc:
        print(f"missing artifacts: {exc}", file=sys.stderr)
        return EXIT_MISSING_ARTIFACTS
    except (ValueError, VistaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    print(f"wrote report.csv, attribution.csv, oscillations.json in {run_dir}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vistaopt",
        description="Prompt optimization with verified, labeled hypotheses.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_opt = sub.add_parser("optimize", help="run an optimization")
    p_opt.add_argument("config", help="path to the run config JSON file")
    p_opt.add_argument("seed_prompt",
                       help="seed prompt: a file path or a shipped name "
                            "(defective, repaired, minimal)")
    p_opt.add_argument("out_dir", help="run directory to create")
    p_opt.add_argument("--backend", choices=("synthetic", "http"),
                       default="synthetic")
    p_opt.add_argument("--mode", choices=("vista", "baseline"), default=None)
    p_opt.add_argument("--seed", type=int, default=None,
                       help="override the config rng_seed")

    p_exp = sub.add_parser("export-trace", help="export a run's trace")
    p_exp.add_argument("run_dir")
    p_exp.add_argument("--format", choices=("dot", "json"), default="dot")

    p_rep = sub.add_parser("report", help="emit plot-ready report files")
    p_rep.add_argument("run_dir")

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "optimize":
        return cmd_optimize(args.config, args.seed_prompt, args.out_dir,
                            backend_kind=args.backend, mode=args.mode,
                            seed=args.seed)
    if args.command == "export-trace":
        return cmd_export_trace(args.run_dir, fmt=args.format)
    return cmd_report(args.run_dir)


if __name__ == "__main__":
    sys.exit(main())
