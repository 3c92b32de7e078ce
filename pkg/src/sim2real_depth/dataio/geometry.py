"""Fisheye-to-pinhole undistortion and frame cropping/resizing."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np
from scipy import ndimage

from ..core import DepthMap, Image, ValidationError

TARGET_WIDTH = 270
TARGET_HEIGHT = 216


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics plus four radial distortion coefficients.

    The distortion maps an undistorted normalised radius r to
    r * (1 + k1 r^2 + k2 r^4 + k3 r^6 + k4 r^8); all-zero coefficients are the
    identity.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    distortion: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValidationError(f"focal lengths must be positive, got fx={self.fx} fy={self.fy}")
        dist = tuple(float(k) for k in self.distortion)
        if len(dist) != 4:
            raise ValidationError(f"expected 4 distortion coefficients, got {len(dist)}")
        object.__setattr__(self, "distortion", dist)

    def check_frame(self, height: int, width: int) -> None:
        if not (0 <= self.cx < width and 0 <= self.cy < height):
            raise ValidationError(
                f"principal point ({self.cx}, {self.cy}) outside a {width}x{height} frame"
            )

    @classmethod
    def load(cls, path: str | Path) -> "CameraIntrinsics":
        d = json.loads(Path(path).read_text())
        return cls(d["fx"], d["fy"], d["cx"], d["cy"], tuple(d.get("distortion", (0, 0, 0, 0))))

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy, "distortion": list(self.distortion)}


def radial_factor(r2: np.ndarray, k: tuple[float, ...]) -> np.ndarray:
    k1, k2, k3, k4 = k
    return 1.0 + r2 * (k1 + r2 * (k2 + r2 * (k3 + r2 * k4)))


def undistort_map(height: int, width: int, intr: CameraIntrinsics) -> tuple[np.ndarray, np.ndarray]:
    """Source (row, col) coordinates for every pixel of the pinhole output."""
    if not all(np.isfinite(intr.distortion)):
        raise ValidationError(f"non-finite distortion coefficients {intr.distortion}")
    rows, cols = np.mgrid[0:height, 0:width].astype(np.float64)
    x = (cols - intr.cx) / intr.fx
    y = (rows - intr.cy) / intr.fy
    f = radial_factor(x * x + y * y, intr.distortion)
    return intr.fy * y * f + intr.cy, intr.fx * x * f + intr.cx


def _sample(channel: np.ndarray, src_r: np.ndarray, src_c: np.ndarray) -> np.ndarray:
    return ndimage.map_coordinates(channel, [src_r, src_c], order=1, mode="nearest")


def undistort_to_pinhole(image: Image, intr: CameraIntrinsics) -> tuple[Image, np.ndarray]:
    """Inverse-map a fisheye frame into a pinhole frame with the same intrinsics.

    Returns the warped image and a mask that is False where the inverse map
    leaves the source frame.
    """
    h, w = image.shape
    intr.check_frame(h, w)
    src_r, src_c = undistort_map(h, w, intr)
    eps = 1e-9
    valid = (src_r >= -eps) & (src_r <= h - 1 + eps) & (src_c >= -eps) & (src_c <= w - 1 + eps)
    out = np.stack([_sample(image.pixels[..., c], src_r, src_c) for c in range(3)], axis=-1)
    out[~valid] = 0.0
    return Image(np.clip(out, 0.0, 1.0)), valid


def undistort_depth(depth: DepthMap, intr: CameraIntrinsics) -> DepthMap:
    """Nearest-neighbour warp so depth values are never blended across edges."""
    h, w = depth.shape
    intr.check_frame(h, w)
    src_r, src_c = undistort_map(h, w, intr)
    ri = np.rint(src_r).astype(int)
    ci = np.rint(src_c).astype(int)
    inside = (ri >= 0) & (ri < h) & (ci >= 0) & (ci < w)
    ri_c = np.clip(ri, 0, h - 1)
    ci_c = np.clip(ci, 0, w - 1)
    vals = depth.values[ri_c, ci_c]
    mask = inside & depth.valid_mask[ri_c, ci_c]
    return DepthMap(np.where(mask, vals, 0.0), mask)


@dataclass(frozen=True)
class CropMargins:
    top: int = 0
    bottom: int = 0
    left: int = 0
    right: int = 0

    def apply(self, arr: np.ndarray) -> np.ndarray:
        h, w = arr.shape[:2]
        if self.top + self.bottom >= h or self.left + self.right >= w or min(self.top, self.bottom, self.left, self.right) < 0:
            raise ValidationError(f"crop margins {self} do not fit a {w}x{h} frame")
        return arr[self.top : h - self.bottom, self.left : w - self.right]


def preprocess_frame(
    image: Image,
    margins: CropMargins = CropMargins(),
    size: tuple[int, int] = (TARGET_WIDTH, TARGET_HEIGHT),
) -> Image:
    """Crop away unused border, then bilinearly resize to ``size`` = (width, height)."""
    cropped = margins.apply(image.pixels)
    if cropped.shape[1] == size[0] and cropped.shape[0] == size[1]:
        return image if cropped.shape == image.pixels.shape else Image(cropped)
    out = cv2.resize(np.ascontiguousarray(cropped), size, interpolation=cv2.INTER_LINEAR)
    return Image(np.clip(out, 0.0, 1.0))


def preprocess_depth(
    depth: DepthMap,
    margins: CropMargins = CropMargins(),
    size: tuple[int, int] = (TARGET_WIDTH, TARGET_HEIGHT),
) -> DepthMap:
    vals = margins.apply(np.where(depth.valid_mask, depth.values, 0.0))
    mask = margins.apply(depth.valid_mask).astype(np.uint8)
    if vals.shape[1] == size[0] and vals.shape[0] == size[1]:
        return DepthMap(vals, mask.astype(bool))
    vals = cv2.resize(vals, size, interpolation=cv2.INTER_NEAREST)
    mask = cv2.resize(mask, size, interpolation=cv2.INTER_NEAREST).astype(bool)
    return DepthMap(vals, mask)
