"""PSNR and SSIM on the BT.601 luma channel, with border cropping."""

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError
from .tensor import Tensor

_Y_COEFFS = np.array([65.481, 128.553, 24.966])


def _array(x):
    return np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)


def rgb_to_y(image):
    """BT.601 limited-range luma of an RGB image in [0, 255].

    Channels are on axis -3, so both ``(3, H, W)`` and ``(B, 3, H, W)`` work.
    """
    arr = _array(image)
    if arr.ndim < 3 or arr.shape[-3] != 3:
        raise DimensionError(f"rgb_to_y needs 3 channels on axis -3, got shape {arr.shape}")
    return 16.0 + np.tensordot(_Y_COEFFS, np.moveaxis(arr, -3, 0), axes=1) / 255.0


def to_uint8_range(image_01, rounding=True):
    """Map [0, 1] model output to [0, 255], clamped and optionally rounded."""
    x = np.clip(_array(image_01) * 255.0, 0.0, 255.0)
    return np.round(x) if rounding else x


def _luma(x):
    arr = _array(x)
    if arr.ndim >= 3 and arr.shape[-3] == 3:
        return rgb_to_y(arr)
    return arr


def _prepare(sr, hr, border):
    a, b = _luma(sr), _luma(hr)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch: sr {a.shape} vs hr {b.shape}")
    h, w = a.shape[-2:]
    if border < 0 or 2 * border >= h or 2 * border >= w:
        raise DimensionError(f"border {border} too large for {h}x{w} image")
    if border:
        a = a[..., border:-border, border:-border]
        b = b[..., border:-border, border:-border]
    return a, b


def psnr(sr, hr, border=0, peak=255.0):
    """PSNR in dB on the Y channel of [0, 255] RGB inputs (or on given single-channel images).

    Identical inputs give ``inf``.
    """
    a, b = _prepare(sr, hr, border)
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return float("inf")
    return float(10.0 * np.log10(peak * peak / mse))


def gaussian_window(size=11, sigma=1.5):
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img, g):
    n = len(g)
    rows = np.lib.stride_tricks.sliding_window_view(img, n, axis=-2)
    img = np.tensordot(rows, g, axes=([-1], [0]))
    cols = np.lib.stride_tricks.sliding_window_view(img, n, axis=-1)
    return np.tensordot(cols, g, axes=([-1], [0]))


def ssim_map(a, b, peak=255.0, size=11, sigma=1.5):
    g = gaussian_window(size, sigma)
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a * mu_a
    var_b = _filter_valid(b * b, g) - mu_b * mu_b
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return num / den


def ssim(sr, hr, border=0, peak=255.0):
    """Mean SSIM over valid 11x11 Gaussian windows (sigma 1.5) on Y."""
    a, b = _prepare(sr, hr, border)
    if a.shape[-1] < 11 or a.shape[-2] < 11:
        raise DimensionError(f"image {a.shape[-2:]} after border crop is smaller than the 11x11 window")
    return float(np.mean(ssim_map(a, b, peak)))


@dataclass
class MetricReport:
    scale: int
    border_crop: int
    rows: list = field(default_factory=list)

    def add(self, name, psnr_db, ssim_val):
        self.rows.append({"name": name, "psnr_db": psnr_db, "ssim": ssim_val})

    @property
    def mean_psnr(self):
        return float(np.mean([r["psnr_db"] for r in self.rows])) if self.rows else float("nan")

    @property
    def mean_ssim(self):
        return float(np.mean([r["ssim"] for r in self.rows])) if self.rows else float("nan")

    def to_dict(self):
        return {
            "scale": self.scale,
            "border_crop": self.border_crop,
            "images": [{**r, "psnr_db": _json_float(r["psnr_db"])} for r in self.rows],
            "mean": {"psnr_db": _json_float(self.mean_psnr), "ssim": self.mean_ssim},
        }

    def to_text(self):
        width = max([len("image")] + [len(r["name"]) for r in self.rows])
        lines = [f"{'image':<{width}}  {'PSNR':>8}  {'SSIM':>7}"]
        for r in self.rows:
            lines.append(f"{r['name']:<{width}}  {r['psnr_db']:>8.4f}  {r['ssim']:>7.4f}")
        lines.append(f"{'mean':<{width}}  {self.mean_psnr:>8.4f}  {self.mean_ssim:>7.4f}")
        return "\n".join(lines) + "\n"


def _json_float(x):
    return "inf" if x == float("inf") else x


def evaluate_pair(sr_01, hr_01, scale, rounding=True):
    """PSNR/SSIM of [0, 1] RGB images with the standard ``scale``-pixel border crop."""
    sr = to_uint8_range(sr_01, rounding)
    hr = to_uint8_range(hr_01, True)
    return psnr(sr, hr, border=scale), ssim(sr, hr, border=scale)
