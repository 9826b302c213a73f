"""Command-line interface.

Subcommands::

    salbench gen-data  --config plan.cfg --out runs     write the synthetic dataset as PPM folders
    salbench train     --config plan.cfg --out runs     train natural + adversarial regimes
    salbench prune     --config plan.cfg --out runs     run the pruning workflows
    salbench explain   --config plan.cfg --out runs     export saliency maps
    salbench evaluate  --config plan.cfg --out runs     accuracy, sparsity, ROAD metrics
    salbench run       --config plan.cfg --out runs     full matrix end to end
    salbench report    --config plan.cfg --out runs     render CSV/SVG/markdown reports

Exit codes: 0 success, 1 validation error, 2 cell failures recorded in the
manifest.  ``SALBENCH_LOG`` (debug/info/warning/error) sets log verbosity.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .data import generate_synthetic
from .errors import SalbenchError
from .harness import load_datasets, read_manifest, run_matrix
from .imgio import write_ppm
from .plan import ExperimentPlan, parse_plan
from .reports import render_reports

log = logging.getLogger("salbench")

_STAGE_FOR_COMMAND = {
    "train": ("train",),
    "prune": ("train", "prune"),
    "explain": ("train", "prune", "explain"),
    "evaluate": ("train", "prune", "evaluate"),
    "run": ("train", "prune", "explain", "evaluate"),
}


def _configure_logging() -> None:
    level = os.environ.get("SALBENCH_LOG", "warning").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
    )


def _load_plan(args) -> ExperimentPlan:
    if not args.config:
        raise SalbenchError("--config <path> is required")
    plan = parse_plan(args.config)
    if args.seed is not None:
        plan = replace(plan, seeds=(args.seed,))
    if args.workers is not None:
        plan = replace(plan, workers=args.workers)
    return plan


def _cmd_gen_data(args) -> int:
    plan = _load_plan(args)
    out = Path(args.out) / plan.run_id / "data"
    for split, per_class in (("train", plan.train_per_class), ("test", plan.test_per_class)):
        ds = generate_synthetic(plan.classes, per_class, plan.data_seed, split)
        split_dir = out / split
        split_dir.mkdir(parents=True, exist_ok=True)
        lines = []
        for i in range(len(ds)):
            name = f"img{i:05d}.ppm"
            arr = np.floor(ds.images[i].transpose(1, 2, 0) * 255.0 + 0.5).astype(np.uint8)
            write_ppm(split_dir / name, arr)
            lines.append(f"{name},{int(ds.labels[i])}")
        (split_dir / "labels.txt").write_text("\n".join(lines) + "\n")
        print(f"wrote {len(ds)} images to {split_dir}")
    return 0


def _cmd_matrix(args, stages) -> int:
    plan = _load_plan(args)
    manifest = run_matrix(plan, args.out, stages=stages)
    failures = manifest.failures
    done = len(manifest.cells) - len(failures)
    print(f"{done}/{len(manifest.cells)} cells completed; manifest at "
          f"{Path(args.out) / plan.run_id / 'manifest.json'}")
    for cell in failures:
        print(f"  FAILED ({cell['seed']}, {cell['regime']}): {cell['error']}", file=sys.stderr)
    return 2 if failures else 0


def _cmd_report(args) -> int:
    plan = _load_plan(args)
    run_dir = Path(args.out) / plan.run_id
    manifest = read_manifest(run_dir)
    reports = render_reports(manifest, run_dir)
    print(f"reports written to {reports}")
    return 0


def main(argv=None) -> int:
    _configure_logging()
    parser = argparse.ArgumentParser(
        prog="salbench",
        description="saliency-map quality benchmarks under training and pruning regimes",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("gen-data", "train", "prune", "explain", "evaluate", "run", "report"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="plan file path")
        p.add_argument("--out", default="runs", help="output directory (default: runs)")
        p.add_argument("--seed", type=int, default=None, help="restrict to one seed")
        p.add_argument("--workers", type=int, default=None, help="parallel workers across seeds")

    args = parser.parse_args(argv)
    try:
        if args.command == "gen-data":
            return _cmd_gen_data(args)
        if args.command == "report":
            return _cmd_report(args)
        rc = _cmd_matrix(args, _STAGE_FOR_COMMAND[args.command])
        if args.command == "run":
            plan = _load_plan(args)
            render_reports(read_manifest(Path(args.out) / plan.run_id),
                           Path(args.out) / plan.run_id)
        return rc
    except SalbenchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
