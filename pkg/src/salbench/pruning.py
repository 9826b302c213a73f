"""One-shot magnitude pruning: per-layer, global, and structured criteria.

All criteria score weight tensors only (biases never enter a scoring pool,
though structured pruning removes the bias of a pruned filter or unit along
with its weights).  Fractional prune counts round half-up.  Ties in
magnitude break toward the lower flat index within a layer, and toward the
earlier layer for the global pool; both fall out of stable sorting.
"""

from __future__ import annotations

from dataclasses import dataclass, replace as dc_replace

import numpy as np

from .data import Dataset
from .errors import PlanError
from .model import ModelState, init_model, reference_cnn
from .training import FINE_TUNE_EPOCHS, TrainConfig, fine_tune, train_natural

METHODS = ("l1_unstructured", "global", "layered_structured")
PHASES = ("pre_train", "post_train")


@dataclass(frozen=True)
class PruneSpec:
    """What to prune, when, and whether to fine-tune afterwards."""

    method: str
    phase: str = "post_train"
    fine_tune: bool = False
    conv_rate: float = 0.2  # l1_unstructured, conv weight tensors
    output_rate: float = 0.1  # l1_unstructured, dense weight tensors
    rate: float | None = None  # global (default 0.2) / layered_structured (default 0.1)

    def __post_init__(self):
        if self.method not in METHODS:
            raise PlanError(f"unknown pruning method {self.method!r}")
        if self.phase not in PHASES:
            raise PlanError(f"unknown pruning phase {self.phase!r}")
        for r in (self.conv_rate, self.output_rate, self.resolved_rate):
            if not 0 <= r < 1:
                raise PlanError(f"prune rates must be in [0, 1), got {r}")

    @property
    def resolved_rate(self) -> float:
        if self.rate is not None:
            return self.rate
        return 0.1 if self.method == "layered_structured" else 0.2

    @property
    def tag(self) -> str:
        suffix = {"pre_train": "pre", "post_train": "post"}[self.phase]
        if self.fine_tune:
            suffix += "+ft"
        return f"{self.method}:{suffix}"


@dataclass(frozen=True)
class GroupSparsity:
    name: str
    masked: int
    total: int

    @property
    def fraction(self) -> float:
        return self.masked / self.total


@dataclass(frozen=True)
class SparsityReport:
    """Masked-entry accounting; counts are exact integers."""

    groups: tuple[GroupSparsity, ...]
    masked: int
    total: int

    @property
    def overall(self) -> float:
        return self.masked / self.total

    @classmethod
    def from_model(cls, model: ModelState) -> "SparsityReport":
        groups = tuple(
            GroupSparsity(name, int((m == 0).sum()), int(m.size))
            for name, m in model.masks.items()
        )
        return cls(groups, sum(g.masked for g in groups), sum(g.total for g in groups))


def round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def _fresh_masks(model: ModelState) -> dict[str, np.ndarray]:
    return {name: np.ones_like(m) for name, m in model.masks.items()}


def mask_l1_unstructured(
    model: ModelState, conv_rate: float = 0.2, output_rate: float = 0.1
) -> dict[str, np.ndarray]:
    """Mask the smallest-magnitude weights within each layer.

    Convolutional weight tensors prune at ``conv_rate``, dense weight
    tensors at ``output_rate``; biases are untouched.
    """
    masks = _fresh_masks(model)
    conv = {n + ".weight" for n in model.descriptor.conv_layer_names()}
    dense = {n + ".weight" for n in model.descriptor.dense_layer_names()}
    for name in model.weight_names():
        rate = conv_rate if name in conv else output_rate if name in dense else None
        if rate is None:
            continue
        w = model.parameters[name].ravel()
        k = round_half_up(rate * w.size)
        if k > 0:
            order = np.argsort(np.abs(w), kind="stable")
            flat = masks[name].ravel()
            flat[order[:k]] = 0
    return masks


def mask_global(model: ModelState, rate: float = 0.2) -> dict[str, np.ndarray]:
    """Mask the smallest-magnitude weights pooled across all layers."""
    masks = _fresh_masks(model)
    names = model.weight_names()
    pooled = np.concatenate([np.abs(model.parameters[n].ravel()) for n in names])
    k = round_half_up(rate * pooled.size)
    if k > 0:
        order = np.argsort(pooled, kind="stable")[:k]
        offsets = np.cumsum([0] + [model.parameters[n].size for n in names])
        for i, name in enumerate(names):
            local = order[(order >= offsets[i]) & (order < offsets[i + 1])] - offsets[i]
            masks[name].ravel()[local] = 0
    return masks


def mask_layered_structured(model: ModelState, rate: float = 0.1) -> dict[str, np.ndarray]:
    """Mask whole low-norm structures, layer by layer.

    Conv layers drop entire filters, dense layers (except the final
    classifier) drop output units; the structure's bias goes with it.
    Ranking is by L2 norm of the structure's weight slice.
    """
    masks = _fresh_masks(model)
    layers = model.descriptor.conv_layer_names() + model.descriptor.dense_layer_names()[:-1]
    for name in layers:
        w = model.parameters[name + ".weight"]
        scores = np.sqrt((w.reshape(w.shape[0], -1) ** 2).sum(axis=1))
        k = round_half_up(rate * w.shape[0])
        if k > 0:
            drop = np.argsort(scores, kind="stable")[:k]
            masks[name + ".weight"][drop] = 0
            masks[name + ".bias"][drop] = 0
    return masks


def compute_masks(model: ModelState, spec: PruneSpec) -> dict[str, np.ndarray]:
    if spec.method == "l1_unstructured":
        return mask_l1_unstructured(model, spec.conv_rate, spec.output_rate)
    if spec.method == "global":
        return mask_global(model, spec.resolved_rate)
    return mask_layered_structured(model, spec.resolved_rate)


def run_prune_workflow(
    spec: PruneSpec,
    dataset: Dataset,
    train_cfg: TrainConfig,
    seed: int,
    base_model: ModelState | None = None,
    fine_tune_epochs: int = FINE_TUNE_EPOCHS,
) -> ModelState:
    """Execute one pruning regime end to end.

    pre_train: mask the random initialization, then train with masks fixed.
    post_train: train dense (or accept ``base_model`` as the dense result),
    mask the trained weights, optionally fine-tune with masks fixed.
    """
    descriptor = reference_cnn(dataset.num_classes)
    if spec.phase == "pre_train":
        seeded = init_model(descriptor, seed)
        masked = seeded.with_masks(compute_masks(seeded, spec))
        out = train_natural(masked, dataset, train_cfg)
    else:
        dense = base_model if base_model is not None else train_natural(
            init_model(descriptor, seed), dataset, train_cfg
        )
        out = dense.with_masks(compute_masks(dense, spec))
        out.provenance = dict(dense.provenance)
        if spec.fine_tune:
            out = fine_tune(out, dataset, dc_replace(train_cfg, epochs=fine_tune_epochs))
    out.provenance["pruning"] = spec.tag
    return out
