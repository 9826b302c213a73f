"""Gradient-based feature attributions and saliency-map aggregation.

All three methods differentiate the pre-softmax logit of the explained
class (post-softmax gradients saturate).  ``target="predicted"`` resolves
to the argmax logit of the clean input once, before any perturbation, and
stays fixed across SmoothGrad samples and integration steps.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import rng
from .autodiff import forward
from .errors import SelectorError, ShapeError
from .model import ModelState

_CHUNK = 256  # cap on internal batch size; accumulation order stays fixed


@dataclass
class Attribution:
    """Signed per-element relevance scores for one prediction."""

    raw: np.ndarray  # same shape as the input image (C, H, W)
    target_class: int
    method: str
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class IgConfig:
    """Integrated-gradients settings: straight-path baseline and step count."""

    baseline: np.ndarray | None = None  # None means the all-zeros (black) image
    steps: int = 64

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError(f"step count must be >= 1, got {self.steps}")


@dataclass(frozen=True)
class SgConfig:
    """SmoothGrad settings: sample count and noise level.

    ``sigma`` is a fraction of ``value_range``, the width of the input
    domain (1.0 for [0, 1] images), so the noise stddev is sigma * range.
    """

    samples: int = 25
    sigma: float = 0.10
    value_range: float = 1.0

    def __post_init__(self):
        if self.samples < 1:
            raise ValueError(f"sample count must be >= 1, got {self.samples}")
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")


def _check_image(model: ModelState, image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.shape != tuple(model.descriptor.input_shape):
        raise ShapeError(
            f"image shape {image.shape} does not match model input "
            f"{tuple(model.descriptor.input_shape)}"
        )
    return image


def _resolve_target(model: ModelState, image: np.ndarray, target) -> int:
    if isinstance(target, str):
        if target != "predicted":
            raise SelectorError(f"target must be a class index or 'predicted', got {target!r}")
        logits, _ = forward(model, image[None])
        return int(np.argmax(logits[0]))
    k = int(target)
    if not 0 <= k < model.descriptor.num_classes:
        raise SelectorError(f"class index {k} outside [0, {model.descriptor.num_classes})")
    return k


def batch_input_gradients(model: ModelState, images: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Per-sample gradient of each row's target logit w.r.t. that row's input."""
    out = np.empty_like(images, dtype=np.float64)
    for start in range(0, len(images), _CHUNK):
        xb = images[start : start + _CHUNK]
        tb = targets[start : start + _CHUNK]
        logits, tape = forward(model, xb)
        seed = np.zeros_like(logits)
        seed[np.arange(len(tb)), tb] = 1.0
        grads = tape.gradients(tape.logits_val, seed, [tape.input_val.uid])
        out[start : start + _CHUNK] = grads.get(tape.input_val.uid, np.zeros_like(xb))
    return out


def vanilla_gradient(model: ModelState, image: np.ndarray, target="predicted") -> Attribution:
    """Gradient of the target class logit with respect to the input pixels."""
    image = _check_image(model, image)
    k = _resolve_target(model, image, target)
    raw = batch_input_gradients(model, image[None], np.array([k]))[0]
    return Attribution(raw, k, "vanilla_gradient")


def integrated_gradients(
    model: ModelState, image: np.ndarray, target="predicted", cfg: IgConfig = IgConfig()
) -> Attribution:
    """Midpoint-rule path integral of gradients from the baseline to the input."""
    image = _check_image(model, image)
    k = _resolve_target(model, image, target)
    if cfg.baseline is None:
        baseline = np.zeros_like(image)
    else:
        baseline = np.asarray(cfg.baseline, dtype=np.float64)
        if baseline.shape != image.shape:
            raise ShapeError(
                f"baseline shape {baseline.shape} does not match image {image.shape}"
            )
    m = cfg.steps
    alphas = (np.arange(1, m + 1) - 0.5) / m
    points = baseline[None] + alphas[:, None, None, None] * (image - baseline)[None]
    grads = batch_input_gradients(model, points, np.full(m, k))
    avg = grads.sum(axis=0) / m
    return Attribution((image - baseline) * avg, k, "integrated_gradients", {"steps": m})


def smoothgrad(
    model: ModelState,
    image: np.ndarray,
    target="predicted",
    cfg: SgConfig = SgConfig(),
    seed: int = 0,
) -> Attribution:
    """Average of vanilla gradients over Gaussian-perturbed copies of the input.

    Sample ``i`` draws its noise from ``derive(seed, "sg", i)``, so results
    are independent of evaluation order.  The explained class is resolved on
    the clean image and pinned.
    """
    image = _check_image(model, image)
    k = _resolve_target(model, image, target)
    stddev = cfg.sigma * cfg.value_range
    n = cfg.samples
    noisy = np.empty((n,) + image.shape, dtype=np.float64)
    for i in range(n):
        noise = rng.derive(seed, "sg", i).normal_array(image.shape) * stddev
        noisy[i] = image + noise
    grads = batch_input_gradients(model, noisy, np.full(n, k))
    raw = grads.sum(axis=0) / n
    return Attribution(raw, k, "smoothgrad", {"samples": n, "sigma": cfg.sigma, "seed": seed})


def to_saliency(attr: Attribution) -> np.ndarray:
    """Per-pixel importance: sum of absolute relevance over channels."""
    return np.abs(attr.raw).sum(axis=0)


def saliency_to_u8(saliency: np.ndarray) -> np.ndarray:
    """Min-max normalize a saliency map to uint8 for image export."""
    lo = float(saliency.min())
    hi = float(saliency.max())
    if hi <= lo:
        return np.zeros(saliency.shape, dtype=np.uint8)
    scaled = (saliency - lo) / (hi - lo) * 255.0
    return np.floor(scaled + 0.5).astype(np.uint8)
