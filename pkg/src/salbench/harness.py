"""Experiment orchestration: run the regime matrix and record a manifest.

Every matrix cell is one (seed, regime) pair.  A cell trains (or loads) a
checkpoint, then evaluates accuracy, attributions, and explanation metrics
against the checkpointed 32-bit weights, so staged and end-to-end runs
produce identical numbers.  Cell failures are recorded in the manifest
without aborting the other cells; the manifest is written atomically last.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .attribution import (
    IgConfig,
    SgConfig,
    integrated_gradients,
    saliency_to_u8,
    smoothgrad,
    to_saliency,
    vanilla_gradient,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .data import Dataset, generate_synthetic, load_image_folder
from .errors import PlanError, SalbenchError
from .imgio import write_pgm
from .metrics import (
    RoadConfig,
    gradient_norm_stats,
    mean_gini,
    road_auc,
    road_curve,
)
from .model import init_model, reference_cnn
from .plan import ExperimentPlan, RegimeSpec
from .pruning import SparsityReport, run_prune_workflow
from .training import (
    PgdConfig,
    TrainConfig,
    attacked_accuracy,
    evaluate_accuracy,
    train_adversarial,
    train_natural,
)

log = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
STAGES = ("train", "prune", "explain", "evaluate")


def load_datasets(plan: ExperimentPlan) -> tuple[Dataset, Dataset]:
    if plan.dataset_kind == "synthetic":
        train = generate_synthetic(plan.classes, plan.train_per_class, plan.data_seed, "train")
        test = generate_synthetic(plan.classes, plan.test_per_class, plan.data_seed, "test")
        return train, test
    train = load_image_folder(plan.folder_path, plan.folder_labels)
    if not plan.folder_test_path:
        raise PlanError("folder dataset needs test_path and test_labels for evaluation")
    test = load_image_folder(plan.folder_test_path, plan.folder_test_labels)
    return train, test


def config_hash(plan: ExperimentPlan) -> str:
    blob = json.dumps(plan.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _train_cfg(plan: ExperimentPlan, seed: int) -> TrainConfig:
    return TrainConfig(
        epochs=plan.epochs,
        batch_size=plan.batch_size,
        learning_rate=plan.learning_rate,
        momentum=plan.momentum,
        weight_decay=plan.weight_decay,
        seed=seed,
    )


def _checkpoint_path(run_dir: Path, seed: int, regime: str) -> Path:
    return run_dir / "checkpoints" / f"seed{seed}_{regime}.ckpt"


def _ensure_model(plan: ExperimentPlan, run_dir: Path, seed: int, regime: RegimeSpec,
                  train_set: Dataset):
    """Load the regime's checkpoint, training and saving it first if absent.

    Returns the model loaded back from the checkpoint so that every
    evaluation sees the same 32-bit quantized weights.
    """
    path = _checkpoint_path(run_dir, seed, regime.name)
    if not path.exists():
        cfg = _train_cfg(plan, seed)
        if regime.kind == "natural":
            model = train_natural(init_model(reference_cnn(train_set.num_classes), seed),
                                  train_set, cfg)
        elif regime.kind == "adversarial":
            pgd = PgdConfig(epsilon=regime.epsilon, iterations=plan.pgd_iterations,
                            random_start=plan.pgd_random_start)
            model = train_adversarial(init_model(reference_cnn(train_set.num_classes), seed),
                                      train_set, cfg, pgd)
        else:
            base = None
            if regime.prune.phase == "post_train":
                base = _ensure_model(
                    plan, run_dir, seed, RegimeSpec("natural", "natural"), train_set
                )
            model = run_prune_workflow(regime.prune, train_set, cfg, seed, base_model=base,
                                       fine_tune_epochs=plan.fine_tune_epochs)
        path.parent.mkdir(parents=True, exist_ok=True)
        save_checkpoint(model, path)
        log.info("trained %s seed %d -> %s", regime.name, seed, path)
    return load_checkpoint(path)


def _attribute_fn(plan: ExperimentPlan, method: str, seed: int):
    if method == "vanilla_gradient":
        return lambda model, image: vanilla_gradient(model, image)
    if method == "integrated_gradients":
        cfg = IgConfig(steps=plan.ig_steps)
        return lambda model, image: integrated_gradients(model, image, cfg=cfg)
    cfg = SgConfig(samples=plan.sg_samples, sigma=plan.sg_sigma)
    return lambda model, image: smoothgrad(model, image, cfg=cfg, seed=seed)


@dataclass
class CellResult:
    seed: int
    regime: str
    checkpoint: str = ""
    clean_accuracy: float | None = None
    pgd_accuracy: float | None = None
    sparsity_masked: int = 0
    sparsity_total: int = 0
    mean_gini: dict = field(default_factory=dict)  # method -> value
    gini_skipped: dict = field(default_factory=dict)
    road_csv: dict = field(default_factory=dict)  # method -> path
    road_auc: dict = field(default_factory=dict)  # method -> value
    gradient_norm_mean: float | None = None
    gradient_norm_std: float | None = None
    saliency_dir: dict = field(default_factory=dict)  # method -> dir
    seconds: float = 0.0
    error: str = ""

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items()}


def _road_csv_path(run_dir: Path, seed: int, regime: str, method: str) -> Path:
    return run_dir / "metrics" / f"road_seed{seed}_{regime}_{method}.csv"


def _write_road_csv(path: Path, fractions, accuracies) -> None:
    lines = ["fraction_removed,accuracy"]
    lines += [f"{float(f)!r},{float(a)!r}" for f, a in zip(fractions, accuracies)]
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")


def run_cell(plan: ExperimentPlan, run_dir: Path, seed: int, regime: RegimeSpec,
             train_set: Dataset, test_set: Dataset,
             stages: tuple[str, ...] = STAGES) -> CellResult:
    """Execute one (seed, regime) cell through the requested stages."""
    result = CellResult(seed=seed, regime=regime.name)
    started = time.perf_counter()
    try:
        model = _ensure_model(plan, run_dir, seed, regime, train_set)
        result.checkpoint = str(_checkpoint_path(run_dir, seed, regime.name))
        report = SparsityReport.from_model(model)
        result.sparsity_masked = report.masked
        result.sparsity_total = report.total

        eval_set = test_set.subset(min(plan.explain_samples, len(test_set)))

        if "evaluate" in stages:
            result.clean_accuracy = evaluate_accuracy(model, test_set)
            if plan.attack_eval and plan.adversarial and regime.kind in ("natural", "adversarial"):
                eps = regime.epsilon if regime.kind == "adversarial" else plan.pgd_epsilon[0]
                pgd = PgdConfig(epsilon=eps, iterations=plan.pgd_iterations,
                                random_start=plan.pgd_random_start)
                result.pgd_accuracy = attacked_accuracy(model, test_set, pgd, seed=seed)
            stats = gradient_norm_stats(model, eval_set)
            result.gradient_norm_mean = stats.mean
            result.gradient_norm_std = stats.std

        if "evaluate" in stages or "explain" in stages:
            road_cfg = RoadConfig(step=plan.road_step, noise=plan.road_noise)
            for method in plan.attribution_methods:
                attribute = _attribute_fn(plan, method, seed)
                attributions = [attribute(model, img) for img in eval_set.images]

                if "explain" in stages and seed == plan.seeds[0] and plan.saliency_samples:
                    out_dir = run_dir / regime.name / method
                    out_dir.mkdir(parents=True, exist_ok=True)
                    for i in range(min(plan.saliency_samples, len(attributions))):
                        write_pgm(out_dir / f"{i}.pgm", saliency_to_u8(to_saliency(attributions[i])))
                    result.saliency_dir[method] = str(out_dir)

                if "evaluate" in stages:
                    mg, skipped = mean_gini(attributions)
                    result.mean_gini[method] = mg
                    result.gini_skipped[method] = skipped
                    curve = road_curve(model, eval_set, attributions, road_cfg, seed=seed)
                    csv_path = _road_csv_path(run_dir, seed, regime.name, method)
                    _write_road_csv(csv_path, curve.fractions, curve.accuracies)
                    result.road_csv[method] = str(csv_path)
                    result.road_auc[method] = road_auc(curve)
    except SalbenchError as exc:
        log.error("cell (%d, %s) failed: %s", seed, regime.name, exc)
        result.error = f"{type(exc).__name__}: {exc}"
    result.seconds = time.perf_counter() - started
    return result


def _run_seed(plan: ExperimentPlan, run_dir_str: str, seed: int,
              stages: tuple[str, ...]) -> list[dict]:
    """Worker entry: all regimes for one seed, natural first."""
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        from contextlib import nullcontext

        def threadpool_limits(*a, **k):
            return nullcontext()

    run_dir = Path(run_dir_str)
    train_set, test_set = load_datasets(plan)
    results = []
    # one BLAS thread: small-kernel GEMMs waste CPU on thread sync otherwise
    with threadpool_limits(limits=1, user_api="blas"):
        for regime in plan.regimes():
            results.append(
                run_cell(plan, run_dir, seed, regime, train_set, test_set, stages).to_dict()
            )
    return results


@dataclass
class RunManifest:
    plan: dict
    cells: list[dict]
    version: str
    config_hash: str
    seconds: float

    def to_dict(self) -> dict:
        return {
            "plan": self.plan,
            "cells": self.cells,
            "version": self.version,
            "config_hash": self.config_hash,
            "seconds": self.seconds,
        }

    @property
    def failures(self) -> list[dict]:
        return [c for c in self.cells if c.get("error")]

    def cell(self, seed: int, regime: str) -> dict | None:
        for c in self.cells:
            if c["seed"] == seed and c["regime"] == regime:
                return c
        return None


def write_manifest(manifest: RunManifest, run_dir: Path) -> Path:
    """Atomic write: the manifest never names artifacts that do not exist."""
    path = run_dir / MANIFEST_NAME
    tmp = path.with_suffix(".json.tmp")
    tmp.write_text(json.dumps(manifest.to_dict(), indent=1, sort_keys=True) + "\n")
    os.replace(tmp, path)
    return path


def read_manifest(run_dir: Path) -> RunManifest:
    path = Path(run_dir) / MANIFEST_NAME
    if not path.exists():
        raise PlanError(f"no manifest at {path}; run the matrix first")
    raw = json.loads(path.read_text())
    return RunManifest(raw["plan"], raw["cells"], raw["version"], raw["config_hash"],
                       raw["seconds"])


def run_matrix(plan: ExperimentPlan, out_dir, stages: tuple[str, ...] = STAGES,
               workers: int | None = None) -> RunManifest:
    """Run every (seed, regime) cell and write the manifest.

    ``workers`` parallelizes across seeds (each seed's cells stay ordered so
    post-train pruning can reuse the seed's natural checkpoint).  Results are
    independent of the worker count.
    """
    run_dir = Path(out_dir) / plan.run_id
    run_dir.mkdir(parents=True, exist_ok=True)
    digest = config_hash(plan)
    existing = Path(run_dir / MANIFEST_NAME)
    if existing.exists():
        prior = json.loads(existing.read_text())
        if prior.get("config_hash") not in ("", digest):
            raise PlanError(
                f"run_id {plan.run_id!r} already used with a different config in {out_dir}; "
                f"pick a unique run_id"
            )

    workers = plan.workers if workers is None else workers
    started = time.perf_counter()
    seed_results: dict[int, list[dict]] = {}
    if workers > 1 and len(plan.seeds) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(plan.seeds))) as pool:
            futures = {
                seed: pool.submit(_run_seed, plan, str(run_dir), seed, stages)
                for seed in plan.seeds
            }
            for seed, fut in futures.items():
                seed_results[seed] = fut.result()
    else:
        for seed in plan.seeds:
            seed_results[seed] = _run_seed(plan, str(run_dir), seed, stages)

    cells = [cell for seed in plan.seeds for cell in seed_results[seed]]
    manifest = RunManifest(plan.to_dict(), cells, __version__, digest,
                           time.perf_counter() - started)
    write_manifest(manifest, run_dir)
    return manifest
