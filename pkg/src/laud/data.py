"""PNG datasets and LR/HR/detail patch synthesis."""

import json
import os
from dataclasses import dataclass, field
from typing import List

import numpy as np
from PIL import Image

from .errors import DataError, GeometryError
from .pyramid import DETAIL_KERNEL, detail_target
from .resample import bicubic_resize

__all__ = [
    "AugmentSpec",
    "DatasetManifest",
    "PatchBatch",
    "bicubic_resize",
    "crop_to_multiple",
    "iterate_batches",
    "load_manifest",
    "make_pair",
    "read_png",
    "write_png",
]


def read_png(path):
    """Decode an 8-bit PNG into a float64 ``(3, H, W)`` array in [0, 1]."""
    try:
        with Image.open(path) as im:
            im = im.convert("RGB")
            arr = np.asarray(im, dtype=np.uint8)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot decode image {path}: {exc}") from None
    return arr.transpose(2, 0, 1).astype(np.float64) / 255.0


def to_uint8(image_01):
    arr = np.clip(np.round(np.asarray(image_01, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    if arr.ndim == 3:
        arr = arr.transpose(1, 2, 0)
        if arr.shape[2] == 1:
            arr = arr[:, :, 0]
    return arr


def write_png(path, image_01):
    """Write a ``(3, H, W)`` or ``(H, W)`` [0, 1] image as 8-bit PNG."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    Image.fromarray(to_uint8(image_01)).save(path)


def crop_to_multiple(image, multiple):
    h, w = image.shape[-2:]
    return image[..., : h - h % multiple, : w - w % multiple]


@dataclass
class AugmentSpec:
    hflip: bool = True
    vflip: bool = True
    rot90: bool = True

    @classmethod
    def none(cls):
        return cls(False, False, False)

    @classmethod
    def parse(cls, value):
        if isinstance(value, AugmentSpec):
            return value
        if value in (None, False, "none", ""):
            return cls.none()
        if value in (True, "all"):
            return cls()
        if isinstance(value, dict):
            return cls(**value)
        raise ValueError(f"cannot interpret augmentation spec {value!r}")

    def apply(self, img, rng):
        # draw all three coins unconditionally so the stream length is fixed
        flips = rng.random(3) < 0.5
        if self.hflip and flips[0]:
            img = img[..., :, ::-1]
        if self.vflip and flips[1]:
            img = img[..., ::-1, :]
        if self.rot90 and flips[2]:
            img = np.swapaxes(img, -1, -2)[..., ::-1, :]
        return np.ascontiguousarray(img)


@dataclass
class PatchBatch:
    lr: np.ndarray
    hr: np.ndarray
    d_gt: np.ndarray
    ids: List[str] = field(default_factory=list)

    def __len__(self):
        return self.lr.shape[0]


def make_lr(hr, scale):
    h, w = hr.shape[-2:]
    if h % scale or w % scale:
        raise GeometryError(f"HR size {h}x{w} is not divisible by scale {scale}")
    return bicubic_resize(hr, h // scale, w // scale, antialias=True)


def make_pair(hr_image, scale, crop, augment, rng, augment_rng=None):
    """Random scale-aligned HR crop and its derived LR and detail target.

    ``crop=None`` keeps the whole (divisibility-cropped) image. The crop
    position comes from ``rng``; augmentation draws from ``augment_rng`` when
    given, else from ``rng``. Returns ``(lr, hr, d_gt)`` for one sample.
    """
    img = crop_to_multiple(np.asarray(hr_image, dtype=np.float64), scale)
    h, w = img.shape[-2:]
    if crop is not None:
        if crop % scale:
            raise GeometryError(f"crop {crop} is not a multiple of scale {scale}")
        if crop > h or crop > w:
            raise DataError(f"image {h}x{w} smaller than crop {crop}")
        y0 = int(rng.integers(0, (h - crop) // scale + 1)) * scale
        x0 = int(rng.integers(0, (w - crop) // scale + 1)) * scale
        img = img[..., y0 : y0 + crop, x0 : x0 + crop]
    patch = AugmentSpec.parse(augment).apply(img, augment_rng if augment_rng is not None else rng)
    return make_lr(patch, scale), patch, detail_target(patch, scale, DETAIL_KERNEL)


@dataclass
class DatasetManifest:
    root: str
    entries: List[dict]
    scale: int = 2
    split: str = "train"
    _cache: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_arrays(cls, images, scale=2, split="train", names=None):
        """In-memory dataset over ``(3, H, W)`` [0, 1] arrays."""
        names = names or [f"image_{i:03d}.png" for i in range(len(images))]
        m = cls("<memory>", [{"hr": n} for n in names], scale, split)
        m._cache = {i: np.asarray(img, dtype=np.float64) for i, img in enumerate(images)}
        return m

    def hr_path(self, entry):
        return os.path.join(self.root, entry["hr"])

    def image(self, i):
        if i not in self._cache:
            self._cache[i] = read_png(self.hr_path(self.entries[i]))
        return self._cache[i]

    def __len__(self):
        return len(self.entries)

    def check(self, min_size=None):
        """Verify all files exist, decode, and are big enough; collects every failure."""
        problems = []
        for i, e in enumerate(self.entries):
            path = self.hr_path(e)
            if i not in self._cache and not os.path.isfile(path):
                problems.append(f"{path}: missing")
                continue
            try:
                img = self.image(i)
            except DataError as exc:
                problems.append(str(exc))
                continue
            if min_size is not None and min(img.shape[-2:]) < min_size:
                problems.append(f"{path}: {img.shape[-2]}x{img.shape[-1]} smaller than crop {min_size}")
        if problems:
            raise DataError("dataset errors:\n  " + "\n  ".join(problems))


def load_manifest(path, scale=None, split="train"):
    """Load a JSON manifest, or list every PNG of a directory alphabetically."""
    if os.path.isdir(path):
        names = sorted(n for n in os.listdir(path) if n.lower().endswith(".png"))
        return DatasetManifest(path, [{"hr": n} for n in names], scale or 2, split)
    if not os.path.isfile(path):
        raise DataError(f"manifest not found: {path}")
    try:
        with open(path, encoding="utf-8") as f:
            doc = json.load(f)
        entries = list(doc["entries"])
        for e in entries:
            if "hr" not in e:
                raise KeyError("hr")
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise DataError(f"invalid manifest {path}: {exc!r}") from None
    return DatasetManifest(
        os.path.dirname(os.path.abspath(path)), entries, int(doc.get("scale", scale or 2)), doc.get("split", split)
    )


def iterate_batches(manifest, batch, seed=0, crop=None, augment=None, epoch=0, rngs=None):
    """Yield one epoch of :class:`PatchBatch` in a seeded shuffled order.

    ``rngs`` may supply ``(shuffle_rng, crop_rng, augment_rng)`` generators that
    persist across epochs; otherwise fresh ones derive from ``seed`` and ``epoch``.
    """
    n = len(manifest)
    if n == 0:
        return
    if rngs is None:
        ss = np.random.SeedSequence([seed, epoch])
        rngs = tuple(np.random.default_rng(s) for s in ss.spawn(3))
    shuffle_rng, crop_rng, aug_rng = rngs
    order = shuffle_rng.permutation(n)
    aug = AugmentSpec.parse(augment)
    for start in range(0, n, batch):
        idx = order[start : start + batch]
        lrs, hrs, dgts, ids = [], [], [], []
        for i in idx:
            img = manifest.image(int(i))
            try:
                lr, hr, d = make_pair(img, manifest.scale, crop, aug, crop_rng, aug_rng)
            except (DataError, GeometryError) as exc:
                raise DataError(f"{manifest.hr_path(manifest.entries[int(i)])}: {exc}") from None
            lrs.append(lr)
            hrs.append(hr)
            dgts.append(d)
            ids.append(manifest.entries[int(i)]["hr"])
        yield PatchBatch(np.stack(lrs), np.stack(hrs), np.stack(dgts), ids)
