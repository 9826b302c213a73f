"""Explanation-quality metrics: Gini sparsity, ROAD faithfulness, gradient norms.

ROAD removes pixels in most-relevant-first order (per-pixel saliency,
ties to the lower flat index), fills them by noisy linear imputation, and
tracks accuracy as the removed fraction grows from 0 to 1.  The imputation
solves the neighbor-mean system u_p = mean of p's in-image 4-neighbors,
with known pixels entering as constants: exactly (sparse direct solve) for
up to 1000 unknowns, otherwise by red-black Gauss-Seidel sweeps to the
configured residual tolerance.  Gaussian noise is added to imputed pixels
only, and imputed values are clipped to [0, 1].
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from . import rng
from .attribution import Attribution, batch_input_gradients, to_saliency
from .data import Dataset
from .errors import ConvergenceError, DegenerateAttributionError, ShapeError
from .model import ModelState
from .pruning import round_half_up
from .training import predict

log = logging.getLogger(__name__)

_EXACT_SOLVE_LIMIT = 1000


def gini(attr) -> float:
    """Concentration of attribution mass, in [0, 1 - 1/d].

    Accepts an :class:`Attribution` or a plain array; scores are taken in
    absolute value, sorted non-decreasing, and weighted by rank:
    1 - 2 * sum_k (phi_(k) / ||phi||_1) * ((d - k + 0.5) / d).
    """
    values = attr.raw if isinstance(attr, Attribution) else np.asarray(attr, dtype=np.float64)
    phi = np.sort(np.abs(values).ravel())
    total = phi.sum()
    if total == 0.0:
        raise DegenerateAttributionError("all-zero attribution has no defined sparsity")
    d = phi.size
    ranks = np.arange(1, d + 1, dtype=np.float64)
    return float(1.0 - 2.0 * np.sum((phi / total) * ((d - ranks + 0.5) / d)))


def mean_gini(attributions) -> tuple[float, int]:
    """Mean Gini over a set, skipping degenerate members; returns (mean, skipped)."""
    scores = []
    skipped = 0
    for attr in attributions:
        try:
            scores.append(gini(attr))
        except DegenerateAttributionError:
            skipped += 1
    if not scores:
        raise DegenerateAttributionError("every attribution in the set was all-zero")
    if skipped:
        log.info("mean_gini: skipped %d degenerate attribution(s)", skipped)
    return float(np.mean(scores)), skipped


@dataclass(frozen=True)
class SparsityScore:
    mean_gini: float
    delta: float
    skipped: int = 0


def sparsity_delta(attribute, model: ModelState, natural_model: ModelState, eval_set: Dataset) -> SparsityScore:
    """Mean Gini of ``model``'s attributions minus the natural model's.

    ``attribute(model, image)`` must return an :class:`Attribution`.
    """
    if model.descriptor != natural_model.descriptor:
        raise ShapeError("models must share an architecture descriptor")
    if len(eval_set) == 0:
        raise ValueError("evaluation set is empty")
    ours, skipped = mean_gini(attribute(model, img) for img in eval_set.images)
    theirs, _ = mean_gini(attribute(natural_model, img) for img in eval_set.images)
    return SparsityScore(ours, ours - theirs, skipped)


@dataclass(frozen=True)
class RoadConfig:
    """Removal step (fraction of pixels per iteration) and imputer settings."""

    step: float = 0.05
    noise: float = 0.01  # stddev of imputation noise, [0, 1] pixel units
    tolerance: float = 1e-6
    max_iterations: int = 50000

    def __post_init__(self):
        if not 0 < self.step <= 1:
            raise ValueError(f"removal step must be in (0, 1], got {self.step}")
        if self.noise < 0:
            raise ValueError(f"imputation noise must be >= 0, got {self.noise}")


@dataclass
class RoadCurve:
    """Accuracy at each removed fraction, starting at (0, base accuracy)."""

    fractions: np.ndarray
    accuracies: np.ndarray
    regime: str = ""
    method: str = ""

    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.fractions.tolist(), self.accuracies.tolist()))


_NEIGHBOR_CACHE: dict[tuple[int, int], np.ndarray] = {}


def _neighbor_table(h: int, w: int) -> np.ndarray:
    """(4, h*w) flat indices of up/down/left/right neighbors, -1 off-grid."""
    key = (h, w)
    if key not in _NEIGHBOR_CACHE:
        idx = np.arange(h * w).reshape(h, w)
        pad = np.full((h + 2, w + 2), -1, dtype=np.int64)
        pad[1:-1, 1:-1] = idx
        table = np.stack(
            [
                pad[0:-2, 1:-1].ravel(),  # up
                pad[2:, 1:-1].ravel(),  # down
                pad[1:-1, 0:-2].ravel(),  # left
                pad[1:-1, 2:].ravel(),  # right
            ]
        )
        _NEIGHBOR_CACHE[key] = table
    return _NEIGHBOR_CACHE[key]


def _solve_exact(image: np.ndarray, removed: np.ndarray) -> np.ndarray:
    """Direct sparse solve of the neighbor-mean system; returns (C, U) values."""
    c, h, w = image.shape
    flat_removed = removed.ravel()
    unknown = np.flatnonzero(flat_removed)
    u = unknown.size
    pos = np.full(h * w, -1, dtype=np.int64)
    pos[unknown] = np.arange(u)

    table = _neighbor_table(h, w)
    pixels = image.reshape(c, h * w)
    rows = [np.arange(u)]
    cols = [np.arange(u)]
    diag = np.zeros(u)
    vals: list[np.ndarray] = []
    rhs = np.zeros((u, c))
    for d in range(4):
        nb = table[d][unknown]
        valid = nb >= 0
        diag += valid.astype(np.float64)
        into_unknown = valid & flat_removed[np.where(valid, nb, 0)]
        into_known = valid & ~into_unknown
        rows.append(np.flatnonzero(into_unknown))
        cols.append(pos[nb[into_unknown]])
        vals.append(-np.ones(int(into_unknown.sum())))
        kn = np.flatnonzero(into_known)
        rhs[kn] += pixels[:, nb[into_known]].T
    vals.insert(0, diag)
    matrix = sparse.csc_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(u, u)
    )
    return splu(matrix).solve(rhs).T


def _solve_gauss_seidel(
    image: np.ndarray, removed: np.ndarray, tolerance: float, max_iterations: int
) -> np.ndarray:
    """Red-black Gauss-Seidel sweeps from a 0.5 initial guess; returns (C, U)."""
    c, h, w = image.shape
    work = image.copy()
    work[:, removed] = 0.5
    ys, xs = np.mgrid[0:h, 0:w]
    parity = (ys + xs) % 2 == 0
    degree = np.full((h, w), 4.0)
    degree[0, :] -= 1
    degree[-1, :] -= 1
    degree[:, 0] -= 1
    degree[:, -1] -= 1

    def neighbor_sum(buf: np.ndarray) -> np.ndarray:
        s = np.zeros_like(buf)
        s[:, 1:, :] += buf[:, :-1, :]
        s[:, :-1, :] += buf[:, 1:, :]
        s[:, :, 1:] += buf[:, :, :-1]
        s[:, :, :-1] += buf[:, :, 1:]
        return s

    residual = np.inf
    for _ in range(max_iterations):
        for color in (parity, ~parity):
            cells = removed & color
            work[:, cells] = (neighbor_sum(work) / degree)[:, cells]
        residual = float(np.abs(work[:, removed] - (neighbor_sum(work) / degree)[:, removed]).max())
        if residual <= tolerance:
            return work[:, removed]
    raise ConvergenceError(
        f"imputation did not reach tolerance {tolerance} within "
        f"{max_iterations} sweeps (residual {residual:g})",
        residual,
    )


def imputation_residual(image: np.ndarray, removed: np.ndarray, values: np.ndarray) -> float:
    """Max violation of the neighbor-mean equations by the imputed values."""
    work = image.copy()
    work[:, removed] = values
    c, h, w = image.shape
    s = np.zeros_like(work)
    s[:, 1:, :] += work[:, :-1, :]
    s[:, :-1, :] += work[:, 1:, :]
    s[:, :, 1:] += work[:, :, :-1]
    s[:, :, :-1] += work[:, :, 1:]
    degree = np.full((h, w), 4.0)
    degree[0, :] -= 1
    degree[-1, :] -= 1
    degree[:, 0] -= 1
    degree[:, -1] -= 1
    return float(np.abs(values - (s / degree)[:, removed]).max())


def noisy_linear_imputation(
    image: np.ndarray,
    removal_mask: np.ndarray,
    cfg: RoadConfig = RoadConfig(),
    stream: rng.SplitMix64 | None = None,
) -> np.ndarray:
    """Fill removed pixels by the neighbor-mean solve, then add noise.

    ``removal_mask`` is a per-pixel boolean (H, W) applying to all channels.
    Noise draws come from ``stream`` as (channels, unknowns) normals; with
    ``stream=None`` or zero ``cfg.noise`` the fill is deterministic.
    """
    image = np.asarray(image, dtype=np.float64)
    removed = np.asarray(removal_mask, dtype=bool)
    if removed.shape != image.shape[1:]:
        raise ShapeError(f"removal mask {removed.shape} does not match image {image.shape[1:]}")
    if not removed.any():
        return image.copy()

    count = int(removed.sum())
    if count <= _EXACT_SOLVE_LIMIT:
        values = _solve_exact(image, removed)
    else:
        values = _solve_gauss_seidel(image, removed, cfg.tolerance, cfg.max_iterations)

    if cfg.noise > 0 and stream is not None:
        values = values + stream.normal_array(values.shape) * cfg.noise
    out = image.copy()
    out[:, removed] = np.clip(values, 0.0, 1.0)
    return out


def morf_order(saliency: np.ndarray) -> np.ndarray:
    """Flat pixel indices by decreasing saliency; ties to the lower index."""
    return np.argsort(-saliency.ravel(), kind="stable")


def road_curve(
    model,
    eval_set: Dataset,
    attributions,
    cfg: RoadConfig = RoadConfig(),
    seed: int = 0,
) -> RoadCurve:
    """Accuracy versus fraction of most-relevant pixels removed.

    ``model`` is a :class:`ModelState` or any ``callable(images) -> labels``.
    One attribution per evaluation sample defines its removal order.  The
    imputation stream for sample ``i`` at step ``t`` is
    ``derive(seed, "road", i, t)``.
    """
    attributions = list(attributions)
    if len(attributions) != len(eval_set):
        raise ShapeError(
            f"need one attribution per sample: {len(attributions)} vs {len(eval_set)}"
        )
    predict_fn = model if callable(model) else (lambda imgs: predict(model, imgs))
    h, w = eval_set.images.shape[2:]
    pixels = h * w
    orders = [morf_order(to_saliency(a)) for a in attributions]

    steps = int(np.ceil(1.0 / cfg.step))
    fractions = [min(t * cfg.step, 1.0) for t in range(steps + 1)]
    accuracies = [float(np.mean(predict_fn(eval_set.images) == eval_set.labels))]
    for t in range(1, steps + 1):
        n_remove = round_half_up(fractions[t] * pixels)
        batch = np.empty_like(eval_set.images)
        for i in range(len(eval_set)):
            mask = np.zeros(pixels, dtype=bool)
            mask[orders[i][:n_remove]] = True
            batch[i] = noisy_linear_imputation(
                eval_set.images[i], mask.reshape(h, w), cfg, rng.derive(seed, "road", i, t)
            )
        accuracies.append(float(np.mean(predict_fn(batch) == eval_set.labels)))
    return RoadCurve(np.array(fractions), np.array(accuracies))


def road_auc(curve: RoadCurve) -> float:
    """Trapezoidal area under accuracy vs fraction removed; lower is more faithful."""
    df = np.diff(curve.fractions)
    mid = (curve.accuracies[1:] + curve.accuracies[:-1]) / 2.0
    return float(np.sum(df * mid))


@dataclass(frozen=True)
class GradientNormStats:
    mean: float
    std: float


def gradient_norm_stats(model: ModelState, eval_set: Dataset) -> GradientNormStats:
    """Mean and stddev of the L2 norm of the input gradient at the predicted logit."""
    if len(eval_set) == 0:
        raise ValueError("evaluation set is empty")
    targets = predict(model, eval_set.images)
    grads = batch_input_gradients(model, eval_set.images, targets)
    norms = np.sqrt((grads.reshape(len(eval_set), -1) ** 2).sum(axis=1))
    return GradientNormStats(float(norms.mean()), float(norms.std()))
