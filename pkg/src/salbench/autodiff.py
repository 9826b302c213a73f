"""Reverse-mode differentiation engine for the fixed reference operator set.

The engine covers exactly what the reference classifier needs: 2-D
convolution (stride 1, zero padding preserving spatial size), ReLU, 2x2
max-pooling with stride 2, flatten, dense affine layers, and the
softmax-cross-entropy loss.  All arithmetic is 64-bit.  A forward pass
records primitive applications onto a :class:`Tape`; the tape supports
exactly one backward pass.

Conventions fixed by design:

* max-pool ties resolve to the lowest flat index of the window, and the
  whole gradient routes to that element;
* the ReLU derivative at exactly zero is zero;
* gradients of masked parameter entries are forced to exactly zero.

Custom primitives can be added through :meth:`Tape.record`, which is how
the shipped layers are built.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import _kernels as kernels
from .errors import SelectorError, ShapeError, TapeConsumedError


@dataclass(frozen=True)
class Val:
    """A tensor tracked on a tape."""

    uid: int
    data: np.ndarray


@dataclass
class GradientBundle:
    """Gradients of one scalar with respect to the input and all parameters."""

    input_gradient: np.ndarray
    parameter_gradients: dict[str, np.ndarray]


@dataclass(frozen=True)
class LossSelector:
    """Selects the mean softmax-cross-entropy over the batch as the scalar."""

    labels: np.ndarray


class Tape:
    """Ordered record of primitive applications from one forward pass.

    Replaying the records in reverse applies the chain rule.  A tape is
    valid for exactly one backward pass.
    """

    def __init__(self):
        self._records: list[tuple[int, tuple[int, ...], Callable]] = []
        self._next_uid = 0
        self._consumed = False
        # populated by forward() for the model-level API
        self.input_val: Optional[Val] = None
        self.param_vals: dict[str, Val] = {}
        self.masks: dict[str, np.ndarray] = {}
        self.logits_val: Optional[Val] = None

    def source(self, data: np.ndarray) -> Val:
        """Track a leaf tensor (input or parameter)."""
        self._next_uid += 1
        return Val(self._next_uid, data)

    def record(
        self,
        out_data: np.ndarray,
        inputs: Sequence[Val],
        backward_fn: Callable[[np.ndarray, Sequence[bool]], Sequence[Optional[np.ndarray]]],
    ) -> Val:
        """Register one primitive application.

        ``backward_fn(grad_out, want)`` must return one gradient per input,
        in order; entries where ``want`` is False may be ``None``.
        """
        out = self.source(out_data)
        self._records.append((out.uid, tuple(v.uid for v in inputs), backward_fn))
        return out

    def gradients(self, output: Val, seed: np.ndarray, wanted: Sequence[int]) -> dict[int, np.ndarray]:
        """Backpropagate ``seed`` from ``output`` to the ``wanted`` uids.

        Consumes the tape.  Uids in ``wanted`` that the output does not
        depend on come back absent (treat as zero).
        """
        if self._consumed:
            raise TapeConsumedError("tape already consumed by a previous backward pass")
        self._consumed = True

        # Forward closure of the wanted leaves: gradient is only needed at
        # vals lying on a path from a wanted leaf to the output.
        live = set(wanted)
        for out_uid, in_uids, _ in self._records:
            if any(u in live for u in in_uids):
                live.add(out_uid)

        grads: dict[int, np.ndarray] = {output.uid: seed}
        for out_uid, in_uids, backward_fn in reversed(self._records):
            g = grads.pop(out_uid, None)
            if g is None:
                continue
            want = tuple(u in live for u in in_uids)
            if not any(want):
                continue
            in_grads = backward_fn(g, want)
            for uid, ig in zip(in_uids, in_grads):
                if ig is None:
                    continue
                if uid in grads:
                    grads[uid] = grads[uid] + ig
                else:
                    grads[uid] = ig
        return {u: g for u, g in grads.items() if u in set(wanted)}


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------

def conv2d(tape: Tape, x: Val, w: Val, b: Val) -> Val:
    """Convolution, stride 1, zero padding of k//2 (odd k keeps H and W)."""
    batch, cin, height, width = x.data.shape
    cout, cin_w, k, k2 = w.data.shape
    if cin_w != cin or k != k2:
        raise ShapeError(
            f"conv weight {w.data.shape} incompatible with input channels {cin}"
        )
    pad = k // 2
    # im2col in (C*k*k, B*H*W) layout so forward and both backward products
    # are single GEMM calls
    xpad = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    taps = cin * k * k
    cols = np.empty((taps, batch * height * width), dtype=np.float64)
    kernels.im2col(xpad, k, height, width, cols.reshape(cin, k * k, batch, height, width))
    wmat = w.data.reshape(cout, taps)
    out = np.ascontiguousarray(
        (wmat @ cols).reshape(cout, batch, height, width).transpose(1, 0, 2, 3)
    )
    out += b.data[None, :, None, None]

    def backward(grad_out, want):
        g2 = np.ascontiguousarray(grad_out.transpose(1, 0, 2, 3)).reshape(
            cout, batch * height * width
        )
        gx = gw = gb = None
        if want[0]:
            dcols = (wmat.T @ g2).reshape(cin, k * k, batch, height, width)
            dxpad = np.zeros(
                (batch, cin, height + 2 * pad, width + 2 * pad), dtype=np.float64
            )
            kernels.col2im(dcols, k, height, width, dxpad)
            gx = dxpad[:, :, pad : pad + height, pad : pad + width]
        if want[1]:
            gw = (g2 @ cols.T).reshape(w.data.shape)
        if want[2]:
            gb = grad_out.sum(axis=(0, 2, 3))
        return gx, gw, gb

    return tape.record(out, (x, w, b), backward)


def relu(tape: Tape, x: Val) -> Val:
    out = np.maximum(x.data, 0.0)
    positive = x.data > 0.0  # derivative at exactly 0 is 0

    def backward(grad_out, want):
        return (grad_out * positive,) if want[0] else (None,)

    return tape.record(out, (x,), backward)


def maxpool2(tape: Tape, x: Val) -> Val:
    """2x2 max-pool, stride 2; ties go to the lowest flat index."""
    batch, ch, height, width = x.data.shape
    if height % 2 or width % 2:
        raise ShapeError(f"max-pool needs even spatial dims, got {height}x{width}")
    # window corners in ascending flat-index order
    nw = x.data[:, :, 0::2, 0::2]
    ne = x.data[:, :, 0::2, 1::2]
    sw = x.data[:, :, 1::2, 0::2]
    se = x.data[:, :, 1::2, 1::2]
    out = np.maximum(np.maximum(nw, ne), np.maximum(sw, se))

    def backward(grad_out, want):
        if not want[0]:
            return (None,)
        gx = np.zeros_like(x.data)
        kernels.maxpool_bwd(x.data, np.ascontiguousarray(grad_out), gx)
        return (gx,)

    return tape.record(out, (x,), backward)


def flatten(tape: Tape, x: Val) -> Val:
    shape = x.data.shape
    out = x.data.reshape(shape[0], -1)

    def backward(grad_out, want):
        return (grad_out.reshape(shape),) if want[0] else (None,)

    return tape.record(out, (x,), backward)


def dense(tape: Tape, x: Val, w: Val, b: Val) -> Val:
    """Affine layer: y = x @ w.T + b with w shaped (units, features)."""
    if x.data.shape[1] != w.data.shape[1]:
        raise ShapeError(
            f"dense weight {w.data.shape} incompatible with input width {x.data.shape[1]}"
        )
    out = x.data @ w.data.T + b.data

    def backward(grad_out, want):
        gx = grad_out @ w.data if want[0] else None
        gw = grad_out.T @ x.data if want[1] else None
        gb = grad_out.sum(axis=0) if want[2] else None
        return gx, gw, gb

    return tape.record(out, (x, w, b), backward)


# ---------------------------------------------------------------------------
# Model-level forward / backward
# ---------------------------------------------------------------------------

def forward(model, batch: np.ndarray) -> tuple[np.ndarray, Tape]:
    """Evaluate the model on a batch, recording a tape for one backward pass.

    ``batch`` must be (B, C, H, W) matching the model's input descriptor.
    Masks are expected to be folded into the stored weights already (the
    model keeps that invariant on every mutation); the tape carries them so
    backward can zero masked gradients exactly.
    """
    batch = np.ascontiguousarray(batch, dtype=np.float64)
    desc = model.descriptor
    if batch.ndim != 4 or batch.shape[1:] != tuple(desc.input_shape):
        raise ShapeError(
            f"model input: expected (B, {', '.join(map(str, desc.input_shape))}), "
            f"got {batch.shape}"
        )

    tape = Tape()
    x = tape.source(batch)
    tape.input_val = x
    tape.masks = model.masks

    cur = x
    shape = tuple(desc.input_shape)
    for layer in desc.layers:
        if layer.kind == "conv":
            w = tape.source(model.parameters[layer.name + ".weight"])
            b = tape.source(model.parameters[layer.name + ".bias"])
            tape.param_vals[layer.name + ".weight"] = w
            tape.param_vals[layer.name + ".bias"] = b
            if shape[0] != w.data.shape[1]:
                raise ShapeError(
                    f"layer {layer.name}: expected {w.data.shape[1]} input channels, got {shape[0]}"
                )
            cur = conv2d(tape, cur, w, b)
            shape = (layer.filters, shape[1], shape[2])
        elif layer.kind == "relu":
            cur = relu(tape, cur)
        elif layer.kind == "pool":
            if shape[1] % 2 or shape[2] % 2:
                raise ShapeError(
                    f"layer {layer.name}: pool needs even dims, got {shape[1]}x{shape[2]}"
                )
            cur = maxpool2(tape, cur)
            shape = (shape[0], shape[1] // 2, shape[2] // 2)
        elif layer.kind == "flatten":
            cur = flatten(tape, cur)
            shape = (shape[0] * shape[1] * shape[2],)
        elif layer.kind == "dense":
            w = tape.source(model.parameters[layer.name + ".weight"])
            b = tape.source(model.parameters[layer.name + ".bias"])
            tape.param_vals[layer.name + ".weight"] = w
            tape.param_vals[layer.name + ".bias"] = b
            if shape[0] != w.data.shape[1]:
                raise ShapeError(
                    f"layer {layer.name}: expected input width {w.data.shape[1]}, got {shape[0]}"
                )
            cur = dense(tape, cur, w, b)
            shape = (layer.units,)
        else:
            raise ShapeError(f"unknown layer kind {layer.kind!r}")

    logits = cur.data
    if not np.isfinite(logits).all():
        raise FloatingPointError("forward produced non-finite logits")
    tape.logits_val = cur
    return logits, tape


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _seed_for(tape: Tape, selector) -> np.ndarray:
    logits = tape.logits_val.data
    batch, num_classes = logits.shape
    if isinstance(selector, LossSelector):
        labels = np.asarray(selector.labels, dtype=np.int64)
        if labels.shape != (batch,):
            raise ShapeError(f"labels shape {labels.shape} does not match batch {batch}")
        if labels.min() < 0 or labels.max() >= num_classes:
            raise SelectorError(f"label outside [0, {num_classes})")
        seed = _softmax(logits)
        seed[np.arange(batch), labels] -= 1.0
        seed /= batch
        return seed
    k = int(selector)
    if not 0 <= k < num_classes:
        raise SelectorError(f"class index {k} outside [0, {num_classes})")
    seed = np.zeros_like(logits)
    seed[:, k] = 1.0
    return seed


def backward(tape: Tape, selector) -> GradientBundle:
    """Gradients of the selected scalar for the input and every parameter.

    ``selector`` is either a class index (the scalar is the summed logit of
    that class over the batch, i.e. the per-sample logit for B=1) or a
    :class:`LossSelector` for the mean cross-entropy.  Masked parameter
    entries come back exactly zero.
    """
    seed = _seed_for(tape, selector)
    wanted = [tape.input_val.uid] + [v.uid for v in tape.param_vals.values()]
    grads = tape.gradients(tape.logits_val, seed, wanted)

    input_grad = grads.get(tape.input_val.uid)
    if input_grad is None:
        input_grad = np.zeros_like(tape.input_val.data)
    param_grads = {}
    for name, val in tape.param_vals.items():
        g = grads.get(val.uid)
        if g is None:
            g = np.zeros_like(val.data)
        mask = tape.masks.get(name)
        if mask is not None:
            g = g * mask
        param_grads[name] = g
    bundle = GradientBundle(input_grad, param_grads)
    if not np.isfinite(input_grad).all():
        raise FloatingPointError("backward produced non-finite input gradient")
    return bundle


def input_gradient(tape: Tape, selector) -> np.ndarray:
    """Gradient with respect to the input only (skips parameter work)."""
    seed = _seed_for(tape, selector)
    grads = tape.gradients(tape.logits_val, seed, [tape.input_val.uid])
    g = grads.get(tape.input_val.uid)
    if g is None:
        g = np.zeros_like(tape.input_val.data)
    return g


def cross_entropy_loss(logits: np.ndarray, labels) -> float:
    """Mean-reduction cross-entropy, max-shift stabilized."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or logits.shape[0] == 0:
        raise ValueError("cross_entropy_loss needs a nonempty (B, K) logit batch")
    if labels.shape != (logits.shape[0],):
        raise ShapeError(f"labels shape {labels.shape} does not match batch {logits.shape[0]}")
    if labels.min() < 0 or labels.max() >= logits.shape[1]:
        raise ValueError(f"label outside [0, {logits.shape[1]})")
    m = logits.max(axis=1, keepdims=True)
    logsumexp = m[:, 0] + np.log(np.exp(logits - m).sum(axis=1))
    return float(np.mean(logsumexp - logits[np.arange(len(labels)), labels]))
