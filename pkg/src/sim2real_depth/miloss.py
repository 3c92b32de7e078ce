"""Mutual information between ground-truth depth and image intensity.

Two routes are provided:

* ``hard_joint_histogram`` + ``mutual_information``: exact bin counting in
  numpy, used as the reference.
* ``soft_mi`` / ``mi_loss``: torch implementation where intensity is
  soft-assigned to bins with a Gaussian kernel, so the estimate is
  differentiable with respect to the translated image. Depth carries no
  gradient and stays hard-binned.

Histogram normalisation follows the usual MI definition

    MI = sum_ij p_ij log(p_ij / (p_i p_j)),   p = count / N

where p_i, p_j are the *per-bin* marginals and N is the number of valid
pixels. The denominator is the product of the two marginal bin counts, not
of the total pixel counts (that would be constant per cell). The hard and
soft estimators share this convention; do not change one without the other.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .core import DepthMap, DimensionMismatchError, Image, ValidationError


@dataclass(frozen=True)
class HistogramSpec:
    n_bins: int = 256
    depth_range: tuple[float, float] = (0.0, 200.0)
    intensity_range: tuple[float, float] = (0.0, 1.0)
    soft_bandwidth: float = 0.5  # Gaussian sigma in units of intensity bin width

    def __post_init__(self):
        if self.n_bins < 2:
            raise ValidationError(f"n_bins must be >= 2, got {self.n_bins}")
        if not self.depth_range[0] < self.depth_range[1]:
            raise ValidationError(f"empty depth_range {self.depth_range}")
        if not self.intensity_range[0] < self.intensity_range[1]:
            raise ValidationError(f"empty intensity_range {self.intensity_range}")
        if not self.soft_bandwidth > 0:
            raise ValidationError(f"soft_bandwidth must be > 0, got {self.soft_bandwidth}")
        object.__setattr__(self, "depth_range", tuple(float(v) for v in self.depth_range))
        object.__setattr__(self, "intensity_range", tuple(float(v) for v in self.intensity_range))


@dataclass(frozen=True, eq=False)
class JointHistogram:
    """Depth bins along rows, intensity bins along columns."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.array(self.counts, dtype=np.float64, copy=True)
        if c.ndim != 2:
            raise ValidationError(f"counts must be 2-D, got shape {c.shape}")
        if np.any(c < 0) or not np.all(np.isfinite(c)):
            raise ValidationError("counts must be finite and non-negative")
        if c.sum() <= 0:
            raise ValidationError("histogram is empty")
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)

    @property
    def total(self) -> float:
        return float(self.counts.sum())

    @property
    def depth_marginal(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def intensity_marginal(self) -> np.ndarray:
        return self.counts.sum(axis=0)

    @property
    def T(self) -> "JointHistogram":
        return JointHistogram(self.counts.T)


def intensity(image: Image | np.ndarray) -> np.ndarray:
    """Per-pixel mean of the three colour channels."""
    px = image.pixels if isinstance(image, Image) else np.asarray(image, dtype=np.float64)
    return px.mean(axis=-1)


def bin_index(values: np.ndarray, lo: float, hi: float, n_bins: int) -> np.ndarray:
    """Uniform bin index; values outside [lo, hi] are clamped into the edge bins."""
    idx = np.floor((np.asarray(values, dtype=np.float64) - lo) * (n_bins / (hi - lo)))
    return np.clip(idx, 0, n_bins - 1).astype(np.int64)


def hard_joint_histogram(depth: DepthMap, intens: np.ndarray, spec: HistogramSpec) -> JointHistogram:
    intens = np.asarray(intens, dtype=np.float64)
    if intens.shape != depth.shape:
        raise DimensionMismatchError(f"intensity {intens.shape} vs depth {depth.shape}")
    mask = depth.valid_mask
    if not mask.any():
        raise ValidationError("no valid pixels to histogram")
    n = spec.n_bins
    di = bin_index(depth.values[mask], *spec.depth_range, n)
    ii = bin_index(intens[mask], *spec.intensity_range, n)
    counts = np.bincount(di * n + ii, minlength=n * n).reshape(n, n)
    return JointHistogram(counts)


def entropy(counts: np.ndarray) -> float:
    """Shannon entropy (nats) of a count vector."""
    c = np.asarray(counts, dtype=np.float64).ravel()
    p = c[c > 0] / c.sum()
    return float(-(p * np.log(p)).sum())


def mutual_information(h: JointHistogram) -> float:
    """MI in nats. Zero-count cells contribute nothing."""
    c = h.counts
    n = c.sum()
    row = c.sum(axis=1, keepdims=True)
    col = c.sum(axis=0, keepdims=True)
    nz = c > 0
    # log(N c_ij / (r_i c_j)) is the same as log(p_ij / (p_i p_j))
    rc = np.broadcast_to(row * col, c.shape)
    mi = float((c[nz] / n * np.log(n * c[nz] / rc[nz])).sum())
    return max(mi, 0.0)


def hard_mi(depth: DepthMap, image: Image, spec: HistogramSpec) -> float:
    return mutual_information(hard_joint_histogram(depth, intensity(image), spec))


# --------------------------------------------------------------------------
# differentiable route


def _depth_onehot(depth: torch.Tensor, mask: torch.Tensor, spec: HistogramSpec) -> torch.Tensor:
    lo, hi = spec.depth_range
    n = spec.n_bins
    d = torch.where(mask, depth, torch.full_like(depth, lo))
    idx = torch.floor((d - lo) * (n / (hi - lo))).clamp(0, n - 1).long()
    onehot = torch.nn.functional.one_hot(idx, n).to(depth.dtype)
    return onehot * mask.unsqueeze(-1).to(depth.dtype)


def _soft_intensity_weights(intens: torch.Tensor, spec: HistogramSpec) -> torch.Tensor:
    lo, hi = spec.intensity_range
    n = spec.n_bins
    width = (hi - lo) / n
    centres = lo + width * (torch.arange(n, dtype=intens.dtype, device=intens.device) + 0.5)
    sigma = spec.soft_bandwidth * width
    z = (intens.unsqueeze(-1) - centres) / sigma
    # normalised per pixel, so each valid pixel contributes unit mass and N stays the pixel count
    return torch.softmax(-0.5 * z * z, dim=-1)


def soft_joint_distribution(
    depth: torch.Tensor, mask: torch.Tensor, image: torch.Tensor, spec: HistogramSpec
) -> torch.Tensor:
    """Joint pmf of (depth bin, soft intensity bin), shape (B, n, n).

    ``depth`` and ``mask`` are (B, H, W); ``image`` is (B, 3, H, W).
    """
    if image.shape[0] != depth.shape[0] or image.shape[-2:] != depth.shape[-2:]:
        raise DimensionMismatchError(f"image {tuple(image.shape)} vs depth {tuple(depth.shape)}")
    counts = mask.flatten(1).sum(dim=1)
    if torch.any(counts == 0):
        raise ValidationError("no valid pixels in at least one depth map")
    intens = image.mean(dim=1).flatten(1)
    w_i = _soft_intensity_weights(intens, spec)
    w_d = _depth_onehot(depth.flatten(1), mask.flatten(1), spec)
    joint = torch.einsum("bpi,bpj->bij", w_d, w_i)
    return joint / counts.to(joint.dtype).view(-1, 1, 1)


def mi_from_joint(p: torch.Tensor) -> torch.Tensor:
    """MI (nats) of a batch of joint pmfs, shape (B, n, n) -> (B,)."""
    pi = p.sum(dim=2, keepdim=True)
    pj = p.sum(dim=1, keepdim=True)
    nz = p > 0
    # where() on both the value and the log argument keeps gradients finite at
    # empty cells; logs are split because pi * pj can underflow in float32
    one = torch.ones_like(p)
    log_ratio = (
        torch.log(torch.where(nz, p, one))
        - torch.log(torch.where(nz, pi.expand_as(p), one))
        - torch.log(torch.where(nz, pj.expand_as(p), one))
    )
    return torch.where(nz, p * log_ratio, torch.zeros_like(p)).sum(dim=(1, 2))


def soft_mi_batch(
    depth: torch.Tensor, mask: torch.Tensor, image: torch.Tensor, spec: HistogramSpec
) -> torch.Tensor:
    """Per-image soft MI, shape (B,)."""
    return mi_from_joint(soft_joint_distribution(depth, mask, image, spec))


def _as_tensors(depth: DepthMap, image: Image | torch.Tensor):
    if isinstance(image, Image):
        img = torch.from_numpy(np.ascontiguousarray(image.pixels.transpose(2, 0, 1)))
    else:
        img = image
        if img.ndim == 3 and img.shape[-1] == 3 and img.shape[0] != 3:
            img = img.permute(2, 0, 1)
    d = torch.from_numpy(np.nan_to_num(depth.values)).to(img.dtype)
    m = torch.from_numpy(depth.valid_mask.copy())
    return d[None], m[None], img[None]


def soft_mi(depth: DepthMap, translated_image: Image | torch.Tensor, spec: HistogramSpec) -> torch.Tensor:
    """Soft-binned MI for one image. Pass a tensor (3,H,W) with requires_grad to differentiate."""
    d, m, img = _as_tensors(depth, translated_image)
    return soft_mi_batch(d, m, img, spec)[0]


def mi_loss_batch(
    depth: torch.Tensor, mask: torch.Tensor, image: torch.Tensor, spec: HistogramSpec
) -> torch.Tensor:
    # Negative MI: minimising the total objective must *raise* depth/intensity
    # dependence, otherwise the term would erase structure instead of keeping it.
    return -soft_mi_batch(depth, mask, image, spec).mean()


def mi_loss(depth: DepthMap, translated_image: Image | torch.Tensor, spec: HistogramSpec) -> torch.Tensor:
    return -soft_mi(depth, translated_image, spec)
