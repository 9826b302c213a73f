"""Experiment plans: the declarative regime x method x metric matrix.

Plans load from a line-oriented config file with ``[section]`` headers and
``key = value`` pairs.  Unknown keys are rejected with their line number.
Omitted keys take the documented defaults below; only the dataset section
is mandatory.

Example::

    [dataset]
    kind = synthetic
    classes = 8
    train_per_class = 50
    test_per_class = 25

    [run]
    seeds = 0, 1, 2
    run_id = demo
"""

from __future__ import annotations

from dataclasses import dataclass, asdict
from pathlib import Path

from .errors import PlanError
from .pruning import PruneSpec

ATTRIBUTION_METHODS = ("vanilla_gradient", "integrated_gradients", "smoothgrad")
PRUNE_PHASES = ("pre_train", "post_train", "post_train_ft")


@dataclass(frozen=True)
class RegimeSpec:
    """One training regime in the matrix."""

    name: str
    kind: str  # natural | adversarial | pruned
    epsilon: float = 0.0
    prune: PruneSpec | None = None


@dataclass
class ExperimentPlan:
    # dataset
    dataset_kind: str = "synthetic"
    classes: int = 8
    train_per_class: int = 50
    test_per_class: int = 25
    data_seed: int = 0
    folder_path: str = ""
    folder_labels: str = ""
    folder_test_path: str = ""
    folder_test_labels: str = ""
    # training
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-4
    # adversarial
    adversarial: bool = True
    pgd_epsilon: tuple[float, ...] = (0.01,)
    pgd_iterations: int = 40
    pgd_random_start: bool = True
    # pruning
    prune_methods: tuple[str, ...] = ("l1_unstructured", "global", "layered_structured")
    prune_phases: tuple[str, ...] = PRUNE_PHASES
    l1_conv_rate: float = 0.2
    l1_output_rate: float = 0.1
    global_rate: float = 0.2
    structured_rate: float = 0.1
    fine_tune_epochs: int = 50
    # attribution
    attribution_methods: tuple[str, ...] = ATTRIBUTION_METHODS
    ig_steps: int = 64
    sg_samples: int = 25
    sg_sigma: float = 0.10
    # metrics
    explain_samples: int = 96
    saliency_samples: int = 8
    road_step: float = 0.05
    road_noise: float = 0.01
    attack_eval: bool = True
    # run
    seeds: tuple[int, ...] = (0, 1, 2)
    run_id: str = "run"
    workers: int = 1

    def regimes(self) -> list[RegimeSpec]:
        """All matrix cells in canonical order; natural always first."""
        out = [RegimeSpec("natural", "natural")]
        if self.adversarial:
            for eps in self.pgd_epsilon:
                out.append(RegimeSpec(f"adv_eps{eps:g}", "adversarial", epsilon=eps))
        for method in self.prune_methods:
            short = {
                "l1_unstructured": "l1",
                "global": "global",
                "layered_structured": "layered",
            }[method]
            for phase in self.prune_phases:
                spec = PruneSpec(
                    method=method,
                    phase="pre_train" if phase == "pre_train" else "post_train",
                    fine_tune=phase == "post_train_ft",
                    conv_rate=self.l1_conv_rate,
                    output_rate=self.l1_output_rate,
                    rate=self.global_rate if method == "global" else (
                        self.structured_rate if method == "layered_structured" else None
                    ),
                )
                tag = {"pre_train": "pre", "post_train": "post", "post_train_ft": "post_ft"}[phase]
                out.append(RegimeSpec(f"{short}_{tag}", "pruned", prune=spec))
        return out

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pruning"] = [r.name for r in self.regimes()]
        return d


_SCHEMA: dict[str, dict[str, tuple[str, type]]] = {
    "dataset": {
        "kind": ("dataset_kind", str),
        "classes": ("classes", int),
        "train_per_class": ("train_per_class", int),
        "test_per_class": ("test_per_class", int),
        "data_seed": ("data_seed", int),
        "path": ("folder_path", str),
        "labels": ("folder_labels", str),
        "test_path": ("folder_test_path", str),
        "test_labels": ("folder_test_labels", str),
    },
    "train": {
        "epochs": ("epochs", int),
        "batch_size": ("batch_size", int),
        "learning_rate": ("learning_rate", float),
        "momentum": ("momentum", float),
        "weight_decay": ("weight_decay", float),
    },
    "adversarial": {
        "enabled": ("adversarial", bool),
        "pgd_epsilon": ("pgd_epsilon", tuple),
        "pgd_iterations": ("pgd_iterations", int),
        "random_start": ("pgd_random_start", bool),
    },
    "pruning": {
        "methods": ("prune_methods", tuple),
        "phases": ("prune_phases", tuple),
        "l1_conv_rate": ("l1_conv_rate", float),
        "l1_output_rate": ("l1_output_rate", float),
        "global_rate": ("global_rate", float),
        "structured_rate": ("structured_rate", float),
        "fine_tune_epochs": ("fine_tune_epochs", int),
    },
    "attribution": {
        "methods": ("attribution_methods", tuple),
        "ig_steps": ("ig_steps", int),
        "sg_samples": ("sg_samples", int),
        "sg_sigma": ("sg_sigma", float),
    },
    "metrics": {
        "explain_samples": ("explain_samples", int),
        "saliency_samples": ("saliency_samples", int),
        "road_step": ("road_step", float),
        "road_noise": ("road_noise", float),
        "attack_eval": ("attack_eval", bool),
    },
    "run": {
        "seeds": ("seeds", tuple),
        "run_id": ("run_id", str),
        "workers": ("workers", int),
    },
}

_TUPLE_ELEM = {
    "pgd_epsilon": float,
    "prune_methods": str,
    "prune_phases": str,
    "attribution_methods": str,
    "seeds": int,
}


def _convert(raw: str, kind: type, attr: str, where: str):
    raw = raw.strip()
    try:
        if kind is bool:
            if raw.lower() in ("true", "yes", "1", "on"):
                return True
            if raw.lower() in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if kind is tuple:
            elem = _TUPLE_ELEM[attr]
            parts = [p.strip() for p in raw.split(",") if p.strip()]
            return tuple(elem(p) for p in parts)
        return kind(raw)
    except ValueError:
        raise PlanError(f"{where}: cannot parse {raw!r} as {kind.__name__}") from None


def _validate(plan: ExperimentPlan, where: dict[str, str], path) -> None:
    def fail(attr: str, message: str):
        raise PlanError(f"{where.get(attr, str(path))}: {message}")

    if plan.dataset_kind not in ("synthetic", "folder"):
        fail("dataset_kind", f"dataset kind must be synthetic or folder, got {plan.dataset_kind!r}")
    if plan.dataset_kind == "folder" and not plan.folder_path:
        fail("dataset_kind", "folder dataset needs a path key")
    if not 2 <= plan.classes <= 8:
        fail("classes", f"classes must be in [2, 8], got {plan.classes}")
    for attr in ("train_per_class", "test_per_class"):
        if getattr(plan, attr) < 1:
            fail(attr, f"{attr} must be >= 1")
    if plan.epochs < 0:
        fail("epochs", "epochs must be >= 0")
    if plan.batch_size < 1:
        fail("batch_size", "batch_size must be >= 1")
    if plan.learning_rate <= 0:
        fail("learning_rate", "learning_rate must be > 0")
    if not 0 <= plan.momentum < 1:
        fail("momentum", "momentum must be in [0, 1)")
    if plan.weight_decay < 0:
        fail("weight_decay", "weight_decay must be >= 0")
    for eps in plan.pgd_epsilon:
        if eps < 0:
            fail("pgd_epsilon", f"pgd_epsilon must be >= 0, got {eps:g}")
    if plan.pgd_iterations < 0:
        fail("pgd_iterations", "pgd_iterations must be >= 0")
    for attr in ("l1_conv_rate", "l1_output_rate", "global_rate", "structured_rate"):
        value = getattr(plan, attr)
        if not 0 <= value < 1:
            fail(attr, f"{attr} must be in [0, 1), got {value:g}")
    if plan.fine_tune_epochs < 0:
        fail("fine_tune_epochs", "fine_tune_epochs must be >= 0")
    for m in plan.prune_methods:
        if m not in ("l1_unstructured", "global", "layered_structured"):
            fail("prune_methods", f"unknown pruning method {m!r}")
    for p in plan.prune_phases:
        if p not in PRUNE_PHASES:
            fail("prune_phases", f"unknown pruning phase {p!r}")
    for m in plan.attribution_methods:
        if m not in ATTRIBUTION_METHODS:
            fail("attribution_methods", f"unknown attribution method {m!r}")
    if plan.ig_steps < 1:
        fail("ig_steps", "ig_steps must be >= 1")
    if plan.sg_samples < 1:
        fail("sg_samples", "sg_samples must be >= 1")
    if plan.sg_sigma < 0:
        fail("sg_sigma", "sg_sigma must be >= 0")
    if plan.explain_samples < 1:
        fail("explain_samples", "explain_samples must be >= 1")
    if plan.saliency_samples < 0:
        fail("saliency_samples", "saliency_samples must be >= 0")
    if not 0 < plan.road_step <= 1:
        fail("road_step", "road_step must be in (0, 1]")
    if plan.road_noise < 0:
        fail("road_noise", "road_noise must be >= 0")
    if not plan.seeds:
        fail("seeds", "at least one seed is required")
    if len(set(plan.seeds)) != len(plan.seeds):
        fail("seeds", "seeds must be unique")
    if plan.workers < 1:
        fail("workers", "workers must be >= 1")
    if not plan.run_id or "/" in plan.run_id:
        fail("run_id", f"run_id must be a nonempty name without '/', got {plan.run_id!r}")


def parse_plan(path) -> ExperimentPlan:
    """Parse and validate a plan file; errors carry file:line positions."""
    path = Path(path)
    if not path.exists():
        raise PlanError(f"plan file not found: {path}")

    values: dict[str, object] = {}
    where: dict[str, str] = {}
    section = None
    saw_dataset = False
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#") or stripped.startswith(";"):
            continue
        if stripped.startswith("[") and stripped.endswith("]"):
            section = stripped[1:-1].strip()
            if section not in _SCHEMA:
                raise PlanError(f"{path}:{lineno}: unknown section [{section}]")
            if section == "dataset":
                saw_dataset = True
            continue
        key, sep, raw = stripped.partition("=")
        if not sep:
            raise PlanError(f"{path}:{lineno}: expected 'key = value', got {stripped!r}")
        key = key.strip()
        if section is None:
            raise PlanError(f"{path}:{lineno}: key {key!r} appears before any [section]")
        if key not in _SCHEMA[section]:
            raise PlanError(f"{path}:{lineno}: unknown key {key!r} in section [{section}]")
        attr, kind = _SCHEMA[section][key]
        values[attr] = _convert(raw, kind, attr, f"{path}:{lineno}")
        where[attr] = f"{path}:{lineno}"

    if not saw_dataset:
        raise PlanError(f"{path}: dataset required (add a [dataset] section)")

    plan = ExperimentPlan(**values)
    _validate(plan, where, path)
    return plan
