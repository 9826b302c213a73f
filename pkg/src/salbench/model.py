"""Reference architecture, parameter initialization, and mask bookkeeping.

The shipped classifier is a small fixed CNN:

    input 3x32x32 -> conv 8 filters 3x3 -> ReLU -> max-pool 2
                  -> conv 16 filters 3x3 -> ReLU -> max-pool 2
                  -> flatten (1024) -> dense 128 -> ReLU -> dense K

Weights initialize from a fan-in scaled uniform distribution, bounds
+-sqrt(6/fan_in), biases zero.  Draws come from SplitMix64 streams (see
:mod:`salbench.rng`): for each parameter tensor, in layer order, the stream
is ``derive(seed, "init", "<layer>.weight")`` and entries fill in row-major
order as ``(2u - 1) * bound``.  Biases draw nothing.

Every parameter tensor carries a parallel binary mask; a zero mask entry
pins that weight to exactly zero through all training and pruning steps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .errors import ShapeError


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # conv | relu | pool | flatten | dense
    name: str
    filters: int = 0
    kernel: int = 0
    units: int = 0


@dataclass(frozen=True)
class ArchitectureDescriptor:
    """Layer chain plus input geometry; validates that shapes compose."""

    input_shape: tuple[int, int, int]
    layers: tuple[LayerSpec, ...]
    num_classes: int

    def __post_init__(self):
        shape = self.output_shapes()[-1]
        if shape != (self.num_classes,):
            raise ShapeError(
                f"descriptor produces output {shape}, expected ({self.num_classes},)"
            )

    def output_shapes(self) -> list[tuple[int, ...]]:
        """Shape after each layer, starting from the input."""
        shape: tuple[int, ...] = tuple(self.input_shape)
        out = []
        for layer in self.layers:
            if layer.kind == "conv":
                if len(shape) != 3:
                    raise ShapeError(f"layer {layer.name}: conv needs (C,H,W), got {shape}")
                shape = (layer.filters, shape[1], shape[2])
            elif layer.kind == "pool":
                if len(shape) != 3 or shape[1] % 2 or shape[2] % 2:
                    raise ShapeError(f"layer {layer.name}: cannot pool shape {shape}")
                shape = (shape[0], shape[1] // 2, shape[2] // 2)
            elif layer.kind == "flatten":
                shape = (int(np.prod(shape)),)
            elif layer.kind == "dense":
                if len(shape) != 1:
                    raise ShapeError(f"layer {layer.name}: dense needs flat input, got {shape}")
                shape = (layer.units,)
            elif layer.kind != "relu":
                raise ShapeError(f"unknown layer kind {layer.kind!r}")
            out.append(shape)
        return out

    def parameter_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes: dict[str, tuple[int, ...]] = {}
        cur: tuple[int, ...] = tuple(self.input_shape)
        for layer, after in zip(self.layers, self.output_shapes()):
            if layer.kind == "conv":
                shapes[layer.name + ".weight"] = (layer.filters, cur[0], layer.kernel, layer.kernel)
                shapes[layer.name + ".bias"] = (layer.filters,)
            elif layer.kind == "dense":
                shapes[layer.name + ".weight"] = (layer.units, cur[0])
                shapes[layer.name + ".bias"] = (layer.units,)
            cur = after
        return shapes

    def conv_layer_names(self) -> list[str]:
        return [l.name for l in self.layers if l.kind == "conv"]

    def dense_layer_names(self) -> list[str]:
        return [l.name for l in self.layers if l.kind == "dense"]


def cnn_descriptor(
    input_shape: tuple[int, int, int] = (3, 32, 32),
    conv_filters: tuple[int, ...] = (8, 16),
    dense_units: tuple[int, ...] = (128,),
    num_classes: int = 8,
    kernel: int = 3,
) -> ArchitectureDescriptor:
    """Conv/pool stack followed by dense layers; widths are configurable."""
    layers: list[LayerSpec] = []
    relu_i = 0
    for i, f in enumerate(conv_filters, start=1):
        relu_i += 1
        layers.append(LayerSpec("conv", f"conv{i}", filters=f, kernel=kernel))
        layers.append(LayerSpec("relu", f"relu{relu_i}"))
        layers.append(LayerSpec("pool", f"pool{i}"))
    layers.append(LayerSpec("flatten", "flatten"))
    for i, u in enumerate(dense_units, start=1):
        relu_i += 1
        layers.append(LayerSpec("dense", f"fc{i}", units=u))
        layers.append(LayerSpec("relu", f"relu{relu_i}"))
    layers.append(LayerSpec("dense", f"fc{len(dense_units) + 1}", units=num_classes))
    return ArchitectureDescriptor(tuple(input_shape), tuple(layers), num_classes)


def reference_cnn(num_classes: int = 8) -> ArchitectureDescriptor:
    """The single supported production descriptor."""
    return cnn_descriptor(num_classes=num_classes)


@dataclass
class ModelState:
    """Named parameters, parallel binary masks, and training provenance.

    ``history`` holds per-epoch mean training losses of the most recent
    training run; it is informational and not persisted in checkpoints.
    """

    descriptor: ArchitectureDescriptor
    parameters: dict[str, np.ndarray]
    masks: dict[str, np.ndarray]
    provenance: dict[str, str] = field(default_factory=dict)
    history: list[float] = field(default_factory=list)

    def copy(self) -> "ModelState":
        return ModelState(
            self.descriptor,
            {k: v.copy() for k, v in self.parameters.items()},
            {k: v.copy() for k, v in self.masks.items()},
            dict(self.provenance),
            list(self.history),
        )

    def apply_masks(self) -> None:
        """Zero every masked entry in place; idempotent."""
        for name, p in self.parameters.items():
            p *= self.masks[name]

    def with_masks(self, masks: dict[str, np.ndarray]) -> "ModelState":
        """Copy with new masks folded into the weights."""
        out = self.copy()
        for name, m in masks.items():
            out.masks[name] = m.astype(np.uint8)
        out.apply_masks()
        return out

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters.values())

    def sparsity_counts(self) -> tuple[int, int]:
        """(masked entries, total entries) over all parameters, exactly."""
        masked = sum(int((m == 0).sum()) for m in self.masks.values())
        total = sum(m.size for m in self.masks.values())
        return masked, total

    def weight_names(self) -> list[str]:
        """Weight tensors (biases excluded) in layer order."""
        return [n for n in self.parameters if n.endswith(".weight")]


def _fan_in(name: str, shape: tuple[int, ...]) -> int:
    if len(shape) == 4:  # conv: (out, in, k, k)
        return shape[1] * shape[2] * shape[3]
    if len(shape) == 2:  # dense: (units, features)
        return shape[1]
    raise ShapeError(f"no fan-in rule for parameter {name} of shape {shape}")


def init_model(descriptor: ArchitectureDescriptor, seed: int) -> ModelState:
    """Fresh model: fan-in uniform weights, zero biases, all-ones masks."""
    params: dict[str, np.ndarray] = {}
    masks: dict[str, np.ndarray] = {}
    for name, shape in descriptor.parameter_shapes().items():
        if name.endswith(".bias"):
            params[name] = np.zeros(shape, dtype=np.float64)
        else:
            bound = math.sqrt(6.0 / _fan_in(name, shape))
            stream = rng.derive(seed, "init", name)
            params[name] = (2.0 * stream.uniform_array(shape) - 1.0) * bound
        masks[name] = np.ones(shape, dtype=np.uint8)
    provenance = {"seed": str(seed), "regime": "init", "pruning": "none", "epochs": "0"}
    return ModelState(descriptor, params, masks, provenance)
