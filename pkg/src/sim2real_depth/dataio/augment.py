"""Joint random crop / flip for image-depth pairs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import DepthMap, Image, PairedSample, ValidationError


@dataclass(frozen=True)
class AugmentationSpec:
    crop_size: int = 256
    allow_hflip: bool = True
    allow_vflip: bool = True
    seed: int = 0


@dataclass(frozen=True)
class Transform:
    top: int
    left: int
    size: int
    hflip: bool
    vflip: bool

    def __call__(self, arr: np.ndarray) -> np.ndarray:
        out = arr[self.top : self.top + self.size, self.left : self.left + self.size]
        if self.hflip:
            out = out[:, ::-1]
        if self.vflip:
            out = out[::-1]
        return np.ascontiguousarray(out)


def draw_transform(shape: tuple[int, int], spec: AugmentationSpec, rng: np.random.Generator) -> Transform:
    h, w = shape
    c = spec.crop_size
    if c > min(h, w):
        raise ValidationError(f"crop_size {c} exceeds input size {w}x{h}")
    # always four draws, so the stream does not depend on which flips are enabled
    top = int(rng.integers(0, h - c + 1))
    left = int(rng.integers(0, w - c + 1))
    hflip = bool(rng.random() < 0.5) and spec.allow_hflip
    vflip = bool(rng.random() < 0.5) and spec.allow_vflip
    return Transform(top, left, c, hflip, vflip)


def apply_transform(sample: PairedSample, t: Transform) -> PairedSample:
    depth = DepthMap(t(sample.depth.values), t(sample.depth.valid_mask))
    return PairedSample(Image(t(sample.image.pixels)), depth, sample.sequence_id, sample.frame_index)


def augment(sample: PairedSample, spec: AugmentationSpec, rng: np.random.Generator) -> PairedSample:
    """Apply one random crop/flip identically to image, depth and mask."""
    return apply_transform(sample, draw_transform(sample.image.shape, spec, rng))
