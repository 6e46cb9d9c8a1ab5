"""Differentiable ops on (N, C, D, H, W) float32 arrays.

Every forward returns (output, cache); the paired backward consumes the cache
and returns input gradients. Convolutions run channels-last internally so the
inner loops are plain GEMMs.
"""

from __future__ import annotations

from itertools import product

import numpy as np

from ..errors import ShapeError


def _check5(x, op):
    if x.ndim != 5:
        raise ShapeError(f"{op}: expected 5D tensor, got shape {x.shape}")


# ---------------------------------------------------------------------------
# 3x3x3 convolution, stride 1, same padding
# ---------------------------------------------------------------------------

def conv3d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """x: (N,Cin,D,H,W), w: (Cout,Cin,3,3,3), b: (Cout,)."""
    _check5(x, "conv3d")
    n, cin, d, h, wd = x.shape
    cout = w.shape[0]
    if w.shape != (cout, cin, 3, 3, 3):
        raise ShapeError(f"conv3d: weight shape {w.shape} does not match "
                         f"input channels {cin}")
    xl = np.moveaxis(x, 1, -1)                      # (N,D,H,W,Cin) view
    xp = np.zeros((n, d + 2, h + 2, wd + 2, cin), dtype=x.dtype)
    xp[:, 1:-1, 1:-1, 1:-1, :] = xl
    acc = np.zeros((n * d * h * wd, cout), dtype=x.dtype)
    wmats = np.ascontiguousarray(w.transpose(2, 3, 4, 1, 0))   # (3,3,3,Cin,Cout)
    for kd, kh, kw in product(range(3), repeat=3):
        xs = xp[:, kd:kd + d, kh:kh + h, kw:kw + wd, :].reshape(-1, cin)
        acc += xs @ wmats[kd, kh, kw]
    acc += b[None, :]
    y = np.moveaxis(acc.reshape(n, d, h, wd, cout), -1, 1)
    return np.ascontiguousarray(y), (x, w)


def conv3d_backward(gy: np.ndarray, cache):
    x, w = cache
    n, cin, d, h, wd = x.shape
    cout = w.shape[0]
    if gy.shape != (n, cout, d, h, wd):
        raise ShapeError(f"conv3d backward: grad shape {gy.shape}")
    gyl = np.ascontiguousarray(np.moveaxis(gy, 1, -1)).reshape(-1, cout)
    xl = np.moveaxis(x, 1, -1)
    xp = np.zeros((n, d + 2, h + 2, wd + 2, cin), dtype=x.dtype)
    xp[:, 1:-1, 1:-1, 1:-1, :] = xl

    gw = np.zeros_like(w)
    gxp = np.zeros_like(xp)
    wmats = np.ascontiguousarray(w.transpose(2, 3, 4, 0, 1))   # (3,3,3,Cout,Cin)
    for kd, kh, kw in product(range(3), repeat=3):
        xs = xp[:, kd:kd + d, kh:kh + h, kw:kw + wd, :].reshape(-1, cin)
        gw[:, :, kd, kh, kw] = (gyl.T @ xs)
        gxs = gyl @ wmats[kd, kh, kw]               # (N*DHW, Cin)
        gxp[:, kd:kd + d, kh:kh + h, kw:kw + wd, :] += \
            gxs.reshape(n, d, h, wd, cin)
    gb = gyl.sum(axis=0)
    gx = np.ascontiguousarray(
        np.moveaxis(gxp[:, 1:-1, 1:-1, 1:-1, :], -1, 1))
    return gx, gw, gb


# ---------------------------------------------------------------------------
# 1x1x1 convolution (channel mixing)
# ---------------------------------------------------------------------------

def conv1x1_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """w: (Cout, Cin)."""
    _check5(x, "conv1x1")
    if w.shape[1] != x.shape[1]:
        raise ShapeError(f"conv1x1: weight {w.shape} vs input channels {x.shape[1]}")
    y = np.einsum("oc,ncdhw->nodhw", w, x, optimize=True) \
        + b[None, :, None, None, None]
    return y.astype(x.dtype), (x, w)


def conv1x1_backward(gy: np.ndarray, cache):
    x, w = cache
    gw = np.einsum("nodhw,ncdhw->oc", gy, x, optimize=True)
    gb = gy.sum(axis=(0, 2, 3, 4))
    gx = np.einsum("oc,nodhw->ncdhw", w, gy, optimize=True).astype(gy.dtype)
    return gx, gw.astype(w.dtype), gb.astype(gy.dtype)


# ---------------------------------------------------------------------------
# Max pooling with per-axis factors
# ---------------------------------------------------------------------------

def maxpool3d_forward(x: np.ndarray, pool: tuple[int, int, int]):
    _check5(x, "maxpool3d")
    n, c, d, h, w = x.shape
    pd, ph, pw = pool
    if d % pd or h % ph or w % pw:
        raise ShapeError(f"maxpool3d: dims {(d, h, w)} not divisible by {pool}")
    r = np.ascontiguousarray(x).reshape(n, c, d // pd, pd, h // ph, ph, w // pw, pw)
    r = r.transpose(0, 1, 2, 4, 6, 3, 5, 7).reshape(
        n, c, d // pd, h // ph, w // pw, pd * ph * pw)
    idx = r.argmax(axis=-1)
    y = np.take_along_axis(r, idx[..., None], axis=-1)[..., 0]
    return np.ascontiguousarray(y), (x.shape, pool, idx)


def maxpool3d_backward(gy: np.ndarray, cache):
    shape, pool, idx = cache
    n, c, d, h, w = shape
    pd, ph, pw = pool
    g = np.zeros((n, c, d // pd, h // ph, w // pw, pd * ph * pw), dtype=gy.dtype)
    np.put_along_axis(g, idx[..., None], gy[..., None], axis=-1)
    g = g.reshape(n, c, d // pd, h // ph, w // pw, pd, ph, pw)
    g = g.transpose(0, 1, 2, 5, 3, 6, 4, 7).reshape(n, c, d, h, w)
    return np.ascontiguousarray(g)


# ---------------------------------------------------------------------------
# Trilinear upsampling by integer factors (corner-aligned)
# ---------------------------------------------------------------------------

def _upsample_matrix(n_src: int, factor: int, dtype=np.float32) -> np.ndarray:
    n_dst = n_src * factor
    if factor == 1 or n_src == 1:
        return np.eye(n_dst, n_src, dtype=dtype) if factor == 1 else \
            np.ones((n_dst, 1), dtype=dtype)
    pos = np.arange(n_dst) * (n_src - 1) / (n_dst - 1)
    i0 = np.clip(np.floor(pos).astype(np.intp), 0, n_src - 1)
    i1 = np.minimum(i0 + 1, n_src - 1)
    f = (pos - i0).astype(dtype)
    m = np.zeros((n_dst, n_src), dtype=dtype)
    m[np.arange(n_dst), i0] += 1.0 - f
    m[np.arange(n_dst), i1] += f
    return m


def _apply_axis_matrix(x: np.ndarray, m: np.ndarray, axis: int) -> np.ndarray:
    out = np.tensordot(x, m, axes=([axis], [1]))    # result axis moves to the end
    return np.ascontiguousarray(np.moveaxis(out, -1, axis))


def upsample3d_forward(x: np.ndarray, factors: tuple[int, int, int]):
    _check5(x, "upsample3d")
    mats = [_upsample_matrix(x.shape[2 + i], factors[i], x.dtype)
            for i in range(3)]
    y = x
    for i, m in enumerate(mats):
        y = _apply_axis_matrix(y, m, 2 + i)
    return y.astype(x.dtype), mats


def upsample3d_backward(gy: np.ndarray, cache):
    mats = cache
    gx = gy
    for i, m in enumerate(mats):
        gx = _apply_axis_matrix(gx, m.T, 2 + i)
    return gx.astype(gy.dtype)


# ---------------------------------------------------------------------------
# Pointwise nonlinearities and channel concat
# ---------------------------------------------------------------------------

def relu_forward(x: np.ndarray):
    y = np.maximum(x, 0.0)
    return y, (x > 0)


def relu_backward(gy: np.ndarray, cache):
    return gy * cache


def sigmoid_forward(x: np.ndarray):
    # Stable two-sided form: never exponentiates a positive argument.
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)
    return y, y


def sigmoid_backward(gy: np.ndarray, cache):
    y = cache
    return gy * y * (1.0 - y)


def concat_skip_forward(a: np.ndarray, b: np.ndarray):
    """Channel concatenation of the decoder path with the encoder skip."""
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeError(f"concat_skip: shapes {a.shape} and {b.shape} differ "
                         f"outside the channel axis")
    return np.concatenate([a, b], axis=1), a.shape[1]


def concat_skip_backward(gy: np.ndarray, cache):
    c = cache
    return np.ascontiguousarray(gy[:, :c]), np.ascontiguousarray(gy[:, c:])
