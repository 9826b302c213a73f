"""Hot inner kernels for the convolution and pooling primitives.

The JIT versions (numba) and the numpy fallbacks compute bit-identical
results: pure data movement plus fixed-order accumulation, no fast-math.
``HAVE_JIT`` reports which path is active; tests cross-check the two.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit

    HAVE_JIT = True
except ImportError:  # pragma: no cover - environment dependent
    HAVE_JIT = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        return wrap


@njit(cache=True)
def _im2col_jit(xpad, k, height, width, cols):
    # batch-major loops keep the (Hp, Wp) source plane hot in cache
    batch, cin = xpad.shape[0], xpad.shape[1]
    for b in range(batch):
        for c in range(cin):
            for i in range(k):
                for j in range(k):
                    t = i * k + j
                    for h in range(height):
                        for w in range(width):
                            cols[c, t, b, h, w] = xpad[b, c, i + h, j + w]


@njit(cache=True)
def _col2im_jit(dcols, k, height, width, dxpad):
    batch, cin = dxpad.shape[0], dxpad.shape[1]
    for b in range(batch):
        for c in range(cin):
            for i in range(k):
                for j in range(k):
                    t = i * k + j
                    for h in range(height):
                        for w in range(width):
                            dxpad[b, c, i + h, j + w] += dcols[c, t, b, h, w]


@njit(cache=True)
def _maxpool_bwd_jit(x, grad_out, gx):
    batch, ch = x.shape[0], x.shape[1]
    ho, wo = grad_out.shape[2], grad_out.shape[3]
    for b in range(batch):
        for c in range(ch):
            for h in range(ho):
                for w in range(wo):
                    y, z = 2 * h, 2 * w
                    v00 = x[b, c, y, z]
                    v01 = x[b, c, y, z + 1]
                    v10 = x[b, c, y + 1, z]
                    v11 = x[b, c, y + 1, z + 1]
                    m = v00
                    if v01 > m:
                        m = v01
                    if v10 > m:
                        m = v10
                    if v11 > m:
                        m = v11
                    g = grad_out[b, c, h, w]
                    # first corner in flat-index order wins ties
                    if v00 == m:
                        gx[b, c, y, z] += g
                    elif v01 == m:
                        gx[b, c, y, z + 1] += g
                    elif v10 == m:
                        gx[b, c, y + 1, z] += g
                    else:
                        gx[b, c, y + 1, z + 1] += g


def _im2col_np(xpad, k, height, width, cols):
    src = xpad.transpose(1, 0, 2, 3)
    for i in range(k):
        for j in range(k):
            cols[:, i * k + j] = src[:, :, i : i + height, j : j + width]


def _col2im_np(dcols, k, height, width, dxpad):
    dst = dxpad.transpose(1, 0, 2, 3)
    for i in range(k):
        for j in range(k):
            dst[:, :, i : i + height, j : j + width] += dcols[:, i * k + j]


def _maxpool_bwd_np(x, grad_out, gx):
    corners = (
        ((0, 0), x[:, :, 0::2, 0::2]),
        ((0, 1), x[:, :, 0::2, 1::2]),
        ((1, 0), x[:, :, 1::2, 0::2]),
        ((1, 1), x[:, :, 1::2, 1::2]),
    )
    out = np.maximum(
        np.maximum(corners[0][1], corners[1][1]), np.maximum(corners[2][1], corners[3][1])
    )
    remaining = np.ones(out.shape, dtype=bool)
    for (dy, dx), corner in corners:
        won = remaining & (corner == out)
        gx[:, :, dy::2, dx::2] += grad_out * won
        remaining &= ~won


if HAVE_JIT:
    im2col = _im2col_jit
    col2im = _col2im_jit
    maxpool_bwd = _maxpool_bwd_jit
else:  # pragma: no cover - environment dependent
    im2col = _im2col_np
    col2im = _col2im_np
    maxpool_bwd = _maxpool_bwd_np
