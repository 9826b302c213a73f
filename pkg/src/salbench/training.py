"""Training regimes: natural, PGD-adversarial, and mask-respecting fine-tuning.

All regimes run plain SGD with classic momentum and weight decay applied as
gradient augmentation (g + lambda*w).  Batch order is a deterministic
Fisher-Yates permutation drawn from ``derive(seed, "shuffle", epoch)``; the
PGD attack inside adversarial training draws its restart noise from
``derive(seed, "pgd", epoch, batch_index)``.  Masked parameter entries stay
exactly zero through every update.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng
from .autodiff import LossSelector, backward, cross_entropy_loss, forward, input_gradient
from .data import Dataset
from .errors import DatasetError
from .model import ModelState

FINE_TUNE_EPOCHS = 50


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-4
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning rate must be > 0, got {self.learning_rate}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ValueError(f"weight decay must be >= 0, got {self.weight_decay}")
        if self.batch_size < 1:
            raise ValueError(f"batch size must be >= 1, got {self.batch_size}")


@dataclass(frozen=True)
class PgdConfig:
    """L-infinity PGD: signed-gradient ascent steps projected into the ball."""

    epsilon: float = 0.01
    step_size: float | None = None  # defaults to epsilon / 10
    iterations: int = 40
    random_start: bool = True

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.step_size is not None and self.step_size <= 0:
            raise ValueError(f"step size must be > 0, got {self.step_size}")
        if self.iterations < 0:
            raise ValueError(f"iteration count must be >= 0, got {self.iterations}")

    @property
    def step(self) -> float:
        return self.epsilon / 10.0 if self.step_size is None else self.step_size


@dataclass
class OptimizerState:
    """Per-parameter momentum buffers; masked indices are pinned to zero."""

    velocities: dict[str, np.ndarray]

    @classmethod
    def for_model(cls, model: ModelState) -> "OptimizerState":
        return cls({k: np.zeros_like(v) for k, v in model.parameters.items()})


def sgd_step(model: ModelState, grads, opt: OptimizerState, cfg: TrainConfig) -> None:
    """One in-place update: g' = g + wd*w; v <- mu*v + g'; w <- w - lr*v."""
    for name, p in model.parameters.items():
        g = grads.parameter_gradients[name] + cfg.weight_decay * p
        v = opt.velocities[name]
        v *= cfg.momentum
        v += g
        mask = model.masks[name]
        v *= mask
        p -= cfg.learning_rate * v
        p *= mask


def _permutation(stream: rng.SplitMix64, n: int) -> np.ndarray:
    idx = np.arange(n)
    for i in range(n - 1, 0, -1):
        j = stream.next_u64() % (i + 1)
        idx[i], idx[j] = idx[j], idx[i]
    return idx


def pgd_attack(
    model: ModelState,
    batch: np.ndarray,
    labels: np.ndarray,
    cfg: PgdConfig,
    stream: rng.SplitMix64 | None = None,
) -> np.ndarray:
    """Worst-case perturbation of the batch within the epsilon ball.

    The result always satisfies max|x' - x| <= epsilon and x' in [0, 1].
    With epsilon = 0 the batch is returned unchanged.
    """
    if cfg.epsilon == 0.0:
        return batch.copy()
    labels = np.asarray(labels, dtype=np.int64)
    lo = np.clip(batch - cfg.epsilon, 0.0, 1.0)
    hi = np.clip(batch + cfg.epsilon, 0.0, 1.0)
    if cfg.random_start:
        if stream is None:
            stream = rng.derive(0, "pgd")
        noise = (2.0 * stream.uniform_array(batch.shape) - 1.0) * cfg.epsilon
        x = np.clip(batch + noise, lo, hi)
    else:
        x = batch.copy()
    for _ in range(cfg.iterations):
        _, tape = forward(model, x)
        g = input_gradient(tape, LossSelector(labels))
        x = np.clip(x + cfg.step * np.sign(g), lo, hi)
    return x


def _train_loop(
    model: ModelState,
    dataset: Dataset,
    cfg: TrainConfig,
    adversary: PgdConfig | None = None,
) -> ModelState:
    if len(dataset) == 0:
        raise DatasetError("cannot train on an empty dataset")
    out = model.copy()
    out.apply_masks()
    opt = OptimizerState.for_model(out)
    losses: list[float] = []
    n = len(dataset)
    for epoch in range(cfg.epochs):
        perm = _permutation(rng.derive(cfg.seed, "shuffle", epoch), n)
        total = 0.0
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = perm[start : start + cfg.batch_size]
            xb = dataset.images[idx]
            yb = dataset.labels[idx]
            if adversary is not None:
                xb = pgd_attack(out, xb, yb, adversary, rng.derive(cfg.seed, "pgd", epoch, b))
            logits, tape = forward(out, xb)
            total += cross_entropy_loss(logits, yb) * len(idx)
            sgd_step(out, backward(tape, LossSelector(yb)), opt, cfg)
        losses.append(total / n)
    out.history = losses
    return out


def train_natural(model: ModelState, dataset: Dataset, cfg: TrainConfig) -> ModelState:
    """Empirical-risk minimization over shuffled mini-batches."""
    out = _train_loop(model, dataset, cfg)
    out.provenance = dict(model.provenance)
    out.provenance.update(regime="natural", epochs=str(cfg.epochs))
    return out


def train_adversarial(
    model: ModelState, dataset: Dataset, cfg: TrainConfig, pgd: PgdConfig
) -> ModelState:
    """Min-max training: every batch is replaced by its PGD perturbation."""
    out = _train_loop(model, dataset, cfg, adversary=pgd)
    out.provenance = dict(model.provenance)
    out.provenance.update(
        regime="adversarial", epochs=str(cfg.epochs), epsilon=f"{pgd.epsilon:g}"
    )
    return out


def fine_tune(model: ModelState, dataset: Dataset, cfg: TrainConfig | None = None) -> ModelState:
    """Retrain with the existing masks held fixed (masked weights never move)."""
    if cfg is None:
        cfg = TrainConfig(epochs=FINE_TUNE_EPOCHS)
    out = _train_loop(model, dataset, cfg)
    out.provenance = dict(model.provenance)
    prior = out.provenance.get("regime", "natural")
    out.provenance["regime"] = prior + "+FT"
    out.provenance["epochs"] = str(int(model.provenance.get("epochs", "0")) + cfg.epochs)
    return out


def predict(model: ModelState, images: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """Argmax class per image (lowest index wins ties)."""
    preds = np.empty(len(images), dtype=np.int64)
    for start in range(0, len(images), batch_size):
        logits, _ = forward(model, images[start : start + batch_size])
        preds[start : start + batch_size] = np.argmax(logits, axis=1)
    return preds


def evaluate_accuracy(model: ModelState, dataset: Dataset, batch_size: int = 64) -> float:
    if len(dataset) == 0:
        raise DatasetError("cannot evaluate on an empty dataset")
    return float(np.mean(predict(model, dataset.images, batch_size) == dataset.labels))


def attacked_accuracy(
    model: ModelState,
    dataset: Dataset,
    pgd: PgdConfig,
    seed: int = 0,
    batch_size: int = 64,
) -> float:
    """Accuracy on PGD-perturbed inputs, deterministic in the seed."""
    if len(dataset) == 0:
        raise DatasetError("cannot evaluate on an empty dataset")
    correct = 0
    for b, start in enumerate(range(0, len(dataset), batch_size)):
        xb = dataset.images[start : start + batch_size]
        yb = dataset.labels[start : start + batch_size]
        adv = pgd_attack(model, xb, yb, pgd, rng.derive(seed, "pgd-eval", b))
        logits, _ = forward(model, adv)
        correct += int((np.argmax(logits, axis=1) == yb).sum())
    return correct / len(dataset)
