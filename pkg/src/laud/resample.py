"""Separable resampling as dense matrices.

Every resize here is linear and separable, so it is expressed as a pair of
matrices applied as ``R_h @ img @ R_w.T`` over the last two axes. Boundary
samples are folded back with whole-sample reflection (``d c b | a b c d`` maps
index -1 to 1), which keeps rows summing to one.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import GeometryError


def reflect_index(idx, n):
    """Whole-sample symmetric extension of integer indices onto ``[0, n)``."""
    idx = np.asarray(idx)
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * (n - 1)
    idx = np.mod(idx, period)
    return np.where(idx >= n, period - idx, idx)


def cubic(x, a=-0.5):
    x = np.abs(x)
    x2, x3 = x * x, x * x * x
    near = (a + 2) * x3 - (a + 3) * x2 + 1
    far = a * x3 - 5 * a * x2 + 8 * a * x - 4 * a
    return np.where(x <= 1, near, np.where(x < 2, far, 0.0))


@lru_cache(maxsize=256)
def _bicubic_matrix(n_in, n_out, a, antialias):
    scale = n_out / n_in
    kscale = scale if (antialias and scale < 1) else 1.0
    width = 4.0 / kscale
    centers = (np.arange(n_out) + 0.5) / scale - 0.5
    left = np.floor(centers - width / 2).astype(np.int64)
    taps = int(np.ceil(width)) + 2
    idx = left[:, None] + np.arange(taps)[None, :]
    w = cubic((centers[:, None] - idx) * kscale, a) * kscale
    w /= w.sum(axis=1, keepdims=True)
    m = np.zeros((n_out, n_in))
    np.add.at(m, (np.repeat(np.arange(n_out), taps), reflect_index(idx, n_in).ravel()), w.ravel())
    m.setflags(write=False)
    return m


def bicubic_matrix(n_in, n_out, a=-0.5, antialias=True):
    """Row-stochastic ``(n_out, n_in)`` bicubic interpolation matrix.

    Sample centres follow the half-pixel convention. When shrinking with
    ``antialias`` the kernel is stretched by the inverse scale ratio.
    """
    if n_in < 1 or n_out < 1:
        raise GeometryError(f"resize dimensions must be positive, got {n_in} -> {n_out}")
    return _bicubic_matrix(int(n_in), int(n_out), float(a), bool(antialias))


def apply_separable(img, mh, mw):
    # contiguous input keeps the BLAS path, and so the rounding, layout independent
    img = np.ascontiguousarray(img, dtype=np.float64)
    return np.matmul(np.matmul(mh, img), mw.T)


def bicubic_resize(image, out_h, out_w, antialias=True, a=-0.5):
    """Resize the last two axes of ``image`` with a separable bicubic kernel."""
    if out_h < 1 or out_w < 1:
        raise GeometryError(f"target size must be positive, got {out_h}x{out_w}")
    arr = np.asarray(image)
    h, w = arr.shape[-2:]
    out = apply_separable(arr, bicubic_matrix(h, out_h, a, antialias), bicubic_matrix(w, out_w, a, antialias))
    return out.astype(arr.dtype, copy=False) if arr.dtype.kind == "f" else out


def burt_taps(a=0.375):
    return np.array([0.25 - a / 2, 0.25, a, 0.25, 0.25 - a / 2])


@lru_cache(maxsize=256)
def _burt_filter_matrix(n, a):
    taps = burt_taps(a)
    m = np.zeros((n, n))
    rows = np.repeat(np.arange(n), 5)
    cols = reflect_index(np.arange(n)[:, None] + np.arange(-2, 3)[None, :], n).ravel()
    np.add.at(m, (rows, cols), np.tile(taps, n))
    return m


@lru_cache(maxsize=256)
def _burt_reduce_matrix(n, a):
    m = _burt_filter_matrix(n, a)[::2].copy()
    m.setflags(write=False)
    return m


@lru_cache(maxsize=256)
def _burt_expand_matrix(n_small, a):
    n = 2 * n_small
    zero_insert = np.zeros((n, n_small))
    zero_insert[::2] = np.eye(n_small)
    m = 2.0 * _burt_filter_matrix(n, a) @ zero_insert
    m.setflags(write=False)
    return m


def _chain(mats):
    out = mats[0]
    for m in mats[1:]:
        out = m @ out
    return out


@dataclass(frozen=True)
class ResampleKernel:
    """Low-pass kernel used for pyramid down/upsampling.

    ``burt5`` is the 5-tap Burt-Adelson generating kernel applied once per
    factor of two; ``bicubic`` resamples in one shot by any integer factor.
    ``a`` defaults to 0.375 for burt5 and -0.5 for bicubic.
    """

    kind: str = "bicubic"
    a: float = None
    antialias: bool = True

    def __post_init__(self):
        if self.kind not in ("burt5", "bicubic"):
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if self.a is None:
            object.__setattr__(self, "a", 0.375 if self.kind == "burt5" else -0.5)

    def taps(self):
        if self.kind != "burt5":
            raise ValueError("taps() is defined for burt5 only")
        return burt_taps(self.a)

    def _check(self, n, factor):
        if factor < 1 or n % factor:
            raise GeometryError(f"size {n} is not divisible by factor {factor}")
        if self.kind == "burt5" and factor & (factor - 1):
            raise GeometryError(f"burt5 needs a power-of-two factor, got {factor}")

    def down_matrix(self, n, factor):
        self._check(n, factor)
        if self.kind == "bicubic":
            return bicubic_matrix(n, n // factor, self.a, self.antialias)
        mats, size = [], n
        while size > n // factor:
            mats.append(_burt_reduce_matrix(size, self.a))
            size //= 2
        return _chain(mats) if mats else np.eye(n)

    def up_matrix(self, n_small, factor):
        if factor < 1:
            raise GeometryError(f"factor must be positive, got {factor}")
        self._check(n_small * factor, factor)
        if self.kind == "bicubic":
            return bicubic_matrix(n_small, n_small * factor, self.a, self.antialias)
        mats, size = [], n_small
        while size < n_small * factor:
            mats.append(_burt_expand_matrix(size, self.a))
            size *= 2
        return _chain(mats) if mats else np.eye(n_small)

    def downsample(self, img, factor):
        h, w = np.shape(img)[-2:]
        return apply_separable(img, self.down_matrix(h, factor), self.down_matrix(w, factor))

    def upsample(self, img, factor):
        h, w = np.shape(img)[-2:]
        return apply_separable(img, self.up_matrix(h, factor), self.up_matrix(w, factor))

    def to_dict(self):
        return {"kind": self.kind, "a": self.a, "antialias": self.antialias}
