"""Laplacian pyramid decomposition and reconstruction."""

from dataclasses import dataclass

import numpy as np

from .errors import GeometryError
from .resample import ResampleKernel
from .tensor import Tensor

DETAIL_KERNEL = ResampleKernel("bicubic", -0.5, antialias=True)


@dataclass
class LaplacianPyramid:
    details: list  # largest first
    base: np.ndarray
    factor: int
    kernel: ResampleKernel

    @property
    def levels(self):
        return len(self.details)


def _array(image):
    return image.data if isinstance(image, Tensor) else np.asarray(image)


def _out_dtype(arr):
    return arr.dtype if arr.dtype.kind == "f" else np.float64


def lp_decompose(image, levels, kernel=None, factor=2):
    """Split ``image`` (any leading axes, spatial last) into ``levels`` detail images and a base.

    Residuals are exact: each ``details[n]`` is the source level minus the
    upsampled next level, computed in float64 and stored in the input's
    float dtype.
    """
    kernel = kernel or ResampleKernel("burt5")
    if levels < 1:
        raise GeometryError(f"levels must be >= 1, got {levels}")
    arr = _array(image)
    dtype = _out_dtype(arr)
    h, w = arr.shape[-2:]
    total = factor**levels
    if h % total or w % total:
        raise GeometryError(f"image {h}x{w} is not divisible by {factor}**{levels} = {total}")
    current = arr.astype(np.float64)
    details = []
    for _ in range(levels):
        small = kernel.downsample(current, factor).astype(dtype).astype(np.float64)
        details.append((current - kernel.upsample(small, factor)).astype(dtype))
        current = small
    return LaplacianPyramid(details, current.astype(dtype), factor, kernel)


def lp_reconstruct(pyramid):
    current = np.asarray(pyramid.base)
    dtype = _out_dtype(current)
    current = current.astype(np.float64)
    for detail in reversed(pyramid.details):
        detail = np.asarray(detail)
        h, w = current.shape[-2:]
        if detail.shape[-2:] != (h * pyramid.factor, w * pyramid.factor):
            raise GeometryError(
                f"detail level of size {detail.shape[-2:]} does not match "
                f"{pyramid.factor}x upsampling of {(h, w)}"
            )
        current = pyramid.kernel.upsample(current, pyramid.factor) + detail
    return current.astype(dtype)


def detail_target(hr_image, scale, kernel=DETAIL_KERNEL):
    """Largest pyramid residual at the SR scale: ``hr - up(down(hr))``."""
    arr = _array(hr_image)
    h, w = arr.shape[-2:]
    if h % scale or w % scale:
        raise GeometryError(f"HR size {h}x{w} is not divisible by scale {scale}")
    x = arr.astype(np.float64)
    return (x - kernel.upsample(kernel.downsample(x, scale), scale)).astype(_out_dtype(arr))
