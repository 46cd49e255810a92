"""Patch packing kernels used by the convolution ops.

``im2col`` gathers sliding windows into a column matrix and ``col2im``
scatter-adds columns back onto an image grid. Both exist twice: a numba
``@njit`` version and a pure-numpy version. The numba path is used unless
numba is missing or ``LAUD_DISABLE_NUMBA`` is set to a truthy value before
import. Both paths produce bit-identical results.
"""

import os

import numpy as np

_DISABLED = os.environ.get("LAUD_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes", "on")

try:
    if _DISABLED:
        raise ImportError("numba disabled by LAUD_DISABLE_NUMBA")
    from numba import njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False


def _im2col_numpy(xp, kh, kw, stride, ho, wo):
    b, c = xp.shape[:2]
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]
    # (b, c, ho, wo, kh, kw) -> (b, c, kh, kw, ho, wo)
    return np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3)).reshape(b, c * kh * kw, ho * wo)


def _col2im_numpy(cols, c, hp, wp, kh, kw, stride, ho, wo):
    b = cols.shape[0]
    out = np.zeros((b, c, hp, wp), dtype=cols.dtype)
    cols = cols.reshape(b, c, kh, kw, ho, wo)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride] += cols[:, :, i, j]
    return out


if HAVE_NUMBA:

    @njit(cache=True)
    def _im2col_nb(xp, kh, kw, stride, ho, wo):
        b, c = xp.shape[0], xp.shape[1]
        out = np.empty((b, c * kh * kw, ho * wo), dtype=xp.dtype)
        for n in range(b):
            for ch in range(c):
                for i in range(kh):
                    for j in range(kw):
                        row = (ch * kh + i) * kw + j
                        for y in range(ho):
                            src = y * stride + i
                            base = y * wo
                            for x in range(wo):
                                out[n, row, base + x] = xp[n, ch, src, x * stride + j]
        return out

    @njit(cache=True)
    def _col2im_nb(cols, c, hp, wp, kh, kw, stride, ho, wo):
        b = cols.shape[0]
        out = np.zeros((b, c, hp, wp), dtype=cols.dtype)
        # loop order matches the numpy path so sums associate identically
        for n in range(b):
            for ch in range(c):
                for i in range(kh):
                    for j in range(kw):
                        row = (ch * kh + i) * kw + j
                        for y in range(ho):
                            dst = y * stride + i
                            base = y * wo
                            for x in range(wo):
                                out[n, ch, dst, x * stride + j] += cols[n, row, base + x]
        return out

    def im2col(xp, kh, kw, stride, ho, wo):
        return _im2col_nb(np.ascontiguousarray(xp), kh, kw, stride, ho, wo)

    def col2im(cols, c, hp, wp, kh, kw, stride, ho, wo):
        return _col2im_nb(np.ascontiguousarray(cols), c, hp, wp, kh, kw, stride, ho, wo)

else:
    im2col = _im2col_numpy
    col2im = _col2im_numpy


def backend():
    return "numba" if HAVE_NUMBA else "numpy"
