"""Shared domain types.

All arrays held by these types are made read-only at construction, so
instances can be shared between threads without copying.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

MIN_SIZE = 8


class ValidationError(ValueError):
    """Base class for invariant violations."""


class DimensionMismatchError(ValidationError):
    pass


class RangeError(ValidationError):
    pass


class Domain(str, enum.Enum):
    A = "A"  # synthetic, depth-annotated
    B = "B"  # clinical / target, unannotated

    @classmethod
    def parse(cls, value: "Domain | str") -> "Domain":
        try:
            return cls(value)
        except ValueError:
            raise ValidationError(f"unknown domain tag {value!r}; expected 'A' or 'B'") from None


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Image:
    """RGB image, float64 pixels in [0, 1], shape (H, W, 3)."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.array(self.pixels, dtype=np.float64, copy=True)
        if px.ndim != 3 or px.shape[2] != 3:
            raise DimensionMismatchError(f"image must be HxWx3, got shape {px.shape}")
        if px.shape[0] < MIN_SIZE or px.shape[1] < MIN_SIZE:
            raise DimensionMismatchError(f"image must be at least {MIN_SIZE}x{MIN_SIZE}, got {px.shape[:2]}")
        if not np.all(np.isfinite(px)):
            raise RangeError("image contains non-finite pixels")
        if px.min() < 0.0 or px.max() > 1.0:
            raise RangeError(f"image pixels outside [0, 1]: min={px.min():.4g} max={px.max():.4g}")
        object.__setattr__(self, "pixels", _frozen(px))

    @classmethod
    def from_uint8(cls, arr: np.ndarray) -> "Image":
        if arr.dtype != np.uint8:
            raise ValidationError(f"expected uint8 array, got {arr.dtype}")
        return cls(arr.astype(np.float64) / 255.0)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape[:2]

    def to_uint8(self) -> np.ndarray:
        return np.round(self.pixels * 255.0).astype(np.uint8)


@dataclass(frozen=True, eq=False)
class DepthMap:
    """Metric depth in millimetres with an explicit validity mask.

    If ``valid_mask`` is omitted, every finite pixel is considered valid.
    """

    values: np.ndarray
    valid_mask: np.ndarray | None = None

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64, copy=True)
        if vals.ndim != 2:
            raise DimensionMismatchError(f"depth must be HxW, got shape {vals.shape}")
        if self.valid_mask is None:
            mask = np.isfinite(vals)
        else:
            mask = np.array(self.valid_mask, dtype=bool, copy=True)
            if mask.shape != vals.shape:
                raise DimensionMismatchError(
                    f"valid_mask shape {mask.shape} does not match depth shape {vals.shape}"
                )
        if not np.all(np.isfinite(vals[mask])):
            raise RangeError("non-finite depth at a valid pixel")
        if np.any(vals[mask] < 0):
            raise RangeError(f"negative depth at a valid pixel (min {vals[mask].min():.4g} mm)")
        object.__setattr__(self, "values", _frozen(vals))
        object.__setattr__(self, "valid_mask", _frozen(mask))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def n_valid(self) -> int:
        return int(self.valid_mask.sum())


@dataclass(frozen=True, eq=False)
class PairedSample:
    image: Image
    depth: DepthMap
    sequence_id: str = "seq"
    frame_index: int = 0
    domain: Domain = field(default=Domain.A, init=False)

    def __post_init__(self):
        if self.image.shape != self.depth.shape:
            raise DimensionMismatchError(
                f"image {self.image.shape} and depth {self.depth.shape} differ in size"
            )


@dataclass(frozen=True, eq=False)
class UnpairedSample:
    image: Image
    sequence_id: str = "seq"
    frame_index: int = 0
    domain: Domain = field(default=Domain.B, init=False)


@dataclass(frozen=True)
class LossWeights:
    # Default weights of the full objective.
    lambda_gan: float = 10.0
    lambda_cyc: float = 0.5
    lambda_mi: float = 1.0

    def __post_init__(self):
        for name in ("lambda_gan", "lambda_cyc", "lambda_mi"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise RangeError(f"{name} must be finite and >= 0, got {v}")


def validate_pair(sample: PairedSample) -> PairedSample:
    """Re-check every invariant of ``sample`` and return it unchanged."""
    if not isinstance(sample, PairedSample):
        raise ValidationError(f"expected PairedSample, got {type(sample).__name__}")
    # Rebuilding the parts re-runs their checks; this catches arrays mutated
    # through references held outside the frozen containers.
    Image(sample.image.pixels)
    DepthMap(sample.depth.values, sample.depth.valid_mask)
    if sample.image.shape != sample.depth.shape:
        raise DimensionMismatchError(
            f"image {sample.image.shape} and depth {sample.depth.shape} differ in size"
        )
    return sample
