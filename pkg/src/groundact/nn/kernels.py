"""Hot compute kernels: compiled extension when built, numpy fallback otherwise.

The numpy implementations are the reference semantics; the compiled versions
(`groundact.nn._fastkern`, Cython + BLAS) must agree bit-for-bit on the same
inputs up to summation order. Set GROUNDACT_FORCE_NUMPY=1 to skip the
extension even when it is importable.
"""

from __future__ import annotations

import os

import numpy as np

try:
    if os.environ.get("GROUNDACT_FORCE_NUMPY"):
        _fast = None
    else:
        from . import _fastkern as _fast
except ImportError:
    _fast = None

BACKEND = "compiled" if _fast is not None else "numpy"

# The compiled conv kernels build an im2col buffer (a kh*kw-fold copy of the
# input); past this many spatial positions the buffer stops fitting in cache
# and the in-place numpy path wins, so dispatch crosses over.
IM2COL_SPATIAL_MAX = 4800


def _pad2d(x: np.ndarray, ph: int, pw: int) -> np.ndarray:
    c, h, w = x.shape
    xp = np.zeros((c, h + 2 * ph, w + 2 * pw), dtype=np.float64)
    xp[:, ph : ph + h, pw : pw + w] = x
    return xp


def conv2d_forward_numpy(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Same-padded stride-1 correlation. x (Cin,H,W), w (Cout,Cin,kh,kw)."""
    cout, cin, kh, kw = w.shape
    _, h, ww = x.shape
    xp = _pad2d(x, kh // 2, kw // 2)
    y = np.broadcast_to(b[:, None, None], (cout, h, ww)).copy()
    for i in range(kh):
        for j in range(kw):
            y += np.tensordot(w[:, :, i, j], xp[:, i : i + h, j : j + ww], axes=([1], [0]))
    return y


def conv2d_backward_numpy(x, w, dy):
    cout, cin, kh, kw = w.shape
    _, h, ww = x.shape
    ph, pw = kh // 2, kw // 2
    xp = _pad2d(x, ph, pw)
    dxp = np.zeros_like(xp)
    dw = np.zeros_like(w)
    for i in range(kh):
        for j in range(kw):
            dxp[:, i : i + h, j : j + ww] += np.tensordot(w[:, :, i, j], dy, axes=([0], [0]))
            dw[:, :, i, j] = np.tensordot(dy, xp[:, i : i + h, j : j + ww], axes=([1, 2], [1, 2]))
    db = dy.sum(axis=(1, 2))
    dx = dxp[:, ph : ph + h, pw : pw + ww]
    return dx, dw, db


def maxpool2_forward_numpy(x: np.ndarray):
    """2x2 max pool, stride 2; returns (pooled, argmax index in 0..3).

    Ties resolve to the lowest window index (row-major within the window),
    matching the compiled kernel.
    """
    c, h, w = x.shape
    xr = x.reshape(c, h // 2, 2, w // 2, 2).transpose(0, 1, 3, 2, 4).reshape(c, h // 2, w // 2, 4)
    idx = xr.argmax(axis=3).astype(np.int8)
    y = np.take_along_axis(xr, idx[..., None].astype(np.intp), axis=3)[..., 0]
    return y, idx


def maxpool2_backward_numpy(dy: np.ndarray, idx: np.ndarray) -> np.ndarray:
    c, h2, w2 = dy.shape
    dxr = np.zeros((c, h2, w2, 4), dtype=np.float64)
    np.put_along_axis(dxr, idx[..., None].astype(np.intp), dy[..., None], axis=3)
    return dxr.reshape(c, h2, w2, 2, 2).transpose(0, 1, 3, 2, 4).reshape(c, h2 * 2, w2 * 2)


def conv2d_forward(x, w, b):
    if _fast is not None and x.shape[1] * x.shape[2] <= IM2COL_SPATIAL_MAX:
        return _fast.conv2d_forward(x, w, b)
    return conv2d_forward_numpy(x, w, b)


def conv2d_backward(x, w, dy):
    if _fast is not None and x.shape[1] * x.shape[2] <= IM2COL_SPATIAL_MAX:
        return _fast.conv2d_backward(x, w, dy)
    return conv2d_backward_numpy(x, w, dy)


def maxpool2_forward(x):
    if _fast is not None:
        return _fast.maxpool2_forward(x)
    return maxpool2_forward_numpy(x)


def maxpool2_backward(dy, idx):
    if _fast is not None:
        return _fast.maxpool2_backward(dy, idx)
    return maxpool2_backward_numpy(dy, idx)


def compiled_kernels():
    """The raw compiled module, or None when running on the numpy fallback."""
    return _fast
