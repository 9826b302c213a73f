"""Datasets: deterministic synthetic traffic-sign renders and folder ingestion.

The synthetic generator draws one SplitMix64 stream per image, derived from
``(seed, "synth", split, class_id, index)``.  Each stream is consumed in a
fixed order: center jitter x, center jitter y, scale, rotation, brightness
(five uniforms), then the background noise field (normals).  Images are
32x32 RGB in [0, 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import rng
from .errors import DatasetError
from .imgio import read_image

IMAGE_SIZE = 32

COLORS = {
    "red": (0.85, 0.12, 0.12),
    "yellow": (0.90, 0.80, 0.10),
    "blue": (0.15, 0.25, 0.85),
    "green": (0.10, 0.70, 0.20),
}


@dataclass(frozen=True)
class SignSpec:
    """Rendering recipe for one class: outline shape, fill color, inner glyph."""

    class_id: int
    shape: str  # circle | triangle | square | octagon
    color: str
    glyph: str  # bar | dot | cross | none

    @property
    def name(self) -> str:
        return f"{self.color}_{self.shape}_{self.glyph}"


SIGN_SPECS = (
    SignSpec(0, "circle", "red", "bar"),
    SignSpec(1, "triangle", "yellow", "none"),
    SignSpec(2, "square", "blue", "dot"),
    SignSpec(3, "octagon", "red", "none"),
    SignSpec(4, "circle", "blue", "cross"),
    SignSpec(5, "triangle", "red", "dot"),
    SignSpec(6, "square", "green", "bar"),
    SignSpec(7, "octagon", "yellow", "cross"),
)


@dataclass
class Dataset:
    """Images (N, 3, 32, 32) in [0, 1] with integer labels."""

    images: np.ndarray
    labels: np.ndarray
    class_names: list[str]
    split: str
    seed: int

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, count: int) -> "Dataset":
        """First ``count`` samples (order preserved)."""
        return Dataset(
            self.images[:count], self.labels[:count], self.class_names, self.split, self.seed
        )

    @property
    def num_classes(self) -> int:
        return len(self.class_names)


def _shape_mask(nu: np.ndarray, nv: np.ndarray, shape: str) -> np.ndarray:
    if shape == "circle":
        return nu * nu + nv * nv <= 1.0
    if shape == "square":
        return np.maximum(np.abs(nu), np.abs(nv)) <= 0.86
    if shape == "triangle":
        return (nv <= 0.75) & (np.abs(nu) <= 0.95 * (nv + 1.0) / 1.75)
    if shape == "octagon":
        return (np.maximum(np.abs(nu), np.abs(nv)) <= 0.92) & (np.abs(nu) + np.abs(nv) <= 1.30)
    raise DatasetError(f"unknown sign shape {shape!r}")


def _glyph_mask(nu: np.ndarray, nv: np.ndarray, glyph: str) -> np.ndarray:
    if glyph == "bar":
        return (np.abs(nv) <= 0.22) & (np.abs(nu) <= 0.70)
    if glyph == "dot":
        return nu * nu + nv * nv <= 0.35 * 0.35
    if glyph == "cross":
        return ((np.abs(nu) <= 0.18) & (np.abs(nv) <= 0.70)) | (
            (np.abs(nv) <= 0.18) & (np.abs(nu) <= 0.70)
        )
    if glyph == "none":
        return np.zeros_like(nu, dtype=bool)
    raise DatasetError(f"unknown glyph {glyph!r}")


def _render_sign(spec: SignSpec, stream: rng.SplitMix64) -> np.ndarray:
    jitter_x = (2.0 * stream.uniform() - 1.0) * 3.0
    jitter_y = (2.0 * stream.uniform() - 1.0) * 3.0
    scale = 0.8 + 0.4 * stream.uniform()
    angle = math.radians((2.0 * stream.uniform() - 1.0) * 10.0)
    brightness = 0.8 + 0.4 * stream.uniform()

    img = 0.45 + 0.05 * stream.normal_array((3, IMAGE_SIZE, IMAGE_SIZE))

    cy = (IMAGE_SIZE - 1) / 2.0 + jitter_y
    cx = (IMAGE_SIZE - 1) / 2.0 + jitter_x
    ys, xs = np.mgrid[0:IMAGE_SIZE, 0:IMAGE_SIZE].astype(np.float64)
    radius = 10.0 * scale
    cos_a, sin_a = math.cos(angle), math.sin(angle)
    du = xs - cx
    dv = ys - cy
    nu = (cos_a * du + sin_a * dv) / radius
    nv = (-sin_a * du + cos_a * dv) / radius

    inside = _shape_mask(nu, nv, spec.shape)
    glyph = inside & _glyph_mask(nu, nv, spec.glyph)
    fill = COLORS[spec.color]
    for c in range(3):
        channel = img[c]
        channel[inside] = fill[c]
        channel[glyph] = 0.95
    img *= brightness
    np.clip(img, 0.0, 1.0, out=img)
    return img


def generate_synthetic(classes: int, per_class: int, seed: int, split: str = "train") -> Dataset:
    """Render ``classes * per_class`` sign images, class-major order."""
    if not 2 <= classes <= len(SIGN_SPECS):
        raise DatasetError(f"class count must be in [2, {len(SIGN_SPECS)}], got {classes}")
    if per_class < 1:
        raise DatasetError(f"per_class must be >= 1, got {per_class}")
    images = np.empty((classes * per_class, 3, IMAGE_SIZE, IMAGE_SIZE), dtype=np.float64)
    labels = np.empty(classes * per_class, dtype=np.int64)
    for c in range(classes):
        spec = SIGN_SPECS[c]
        for i in range(per_class):
            stream = rng.derive(seed, "synth", split, c, i)
            images[c * per_class + i] = _render_sign(spec, stream)
            labels[c * per_class + i] = c
    names = [SIGN_SPECS[c].name for c in range(classes)]
    return Dataset(images, labels, names, split, seed)


def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize (H, W, C) float64 via bilinear interpolation (half-pixel centers)."""
    h, w = img.shape[:2]
    if (h, w) == (out_h, out_w):
        return img.copy()
    ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    y0 = np.clip(np.floor(ys), 0, h - 1).astype(np.int64)
    x0 = np.clip(np.floor(xs), 0, w - 1).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = np.clip(ys - y0, 0.0, 1.0)[:, None, None]
    wx = np.clip(xs - x0, 0.0, 1.0)[None, :, None]
    top = img[y0][:, x0] * (1 - wx) + img[y0][:, x1] * wx
    bot = img[y1][:, x0] * (1 - wx) + img[y1][:, x1] * wx
    return top * (1 - wy) + bot * wy


def load_image_folder(root, labels_file) -> Dataset:
    """Load `relative_path,class_index` lines into a 32x32 RGB dataset.

    Grayscale inputs replicate to three channels; anything not already
    32x32 is bilinearly resized.  Pixel values scale to [0, 1] as v/255.
    """
    root = Path(root)
    labels_path = Path(labels_file)
    if not labels_path.exists():
        raise DatasetError(f"labels file not found: {labels_path}")

    entries: list[tuple[str, int]] = []
    for lineno, line in enumerate(labels_path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        rel, sep, idx_text = line.partition(",")
        if not sep or not rel.strip():
            raise DatasetError(f"{labels_path}:{lineno}: malformed line {line!r}")
        try:
            cls = int(idx_text.strip())
        except ValueError:
            raise DatasetError(
                f"{labels_path}:{lineno}: class index {idx_text.strip()!r} is not an integer"
            ) from None
        if cls < 0:
            raise DatasetError(f"{labels_path}:{lineno}: negative class index {cls}")
        entries.append((rel.strip(), cls))

    if not entries:
        raise DatasetError(f"{labels_path}: empty dataset (no labeled samples)")

    images = np.empty((len(entries), 3, IMAGE_SIZE, IMAGE_SIZE), dtype=np.float64)
    labels = np.empty(len(entries), dtype=np.int64)
    for i, (rel, cls) in enumerate(entries):
        arr = read_image(root / rel)
        if arr.ndim == 2:
            arr = np.repeat(arr[:, :, None], 3, axis=2)
        resized = bilinear_resize(arr.astype(np.float64), IMAGE_SIZE, IMAGE_SIZE)
        images[i] = resized.transpose(2, 0, 1) / 255.0
        labels[i] = cls
    names = [f"class_{c}" for c in range(int(labels.max()) + 1)]
    return Dataset(images, labels, names, "folder", 0)
