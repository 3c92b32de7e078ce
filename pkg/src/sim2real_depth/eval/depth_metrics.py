from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..core import DepthMap, DimensionMismatchError, ValidationError

DELTA_BASE = 1.25


@dataclass(frozen=True)
class DepthMetrics:
    rmse: float
    abs_rel: float
    delta1: float
    delta2: float
    delta3: float

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def mean(cls, items: list["DepthMetrics"]) -> "DepthMetrics":
        """Aggregate by plain arithmetic mean of the per-frame values."""
        if not items:
            raise ValidationError("no metrics to aggregate")
        return cls(**{k: float(np.mean([getattr(m, k) for m in items])) for k in cls.__dataclass_fields__})


def _joint_valid(pred: DepthMap, gt: DepthMap) -> np.ndarray:
    if pred.shape != gt.shape:
        raise DimensionMismatchError(f"prediction {pred.shape} vs ground truth {gt.shape}")
    return pred.valid_mask & gt.valid_mask


def median_rescale(pred: DepthMap, gt: DepthMap) -> DepthMap:
    """Scale ``pred`` by median(gt) / median(pred), medians over jointly valid pixels."""
    valid = _joint_valid(pred, gt)
    if not valid.any():
        raise ValidationError("no jointly valid pixels for median rescaling")
    med_pred = float(np.median(pred.values[valid]))
    if med_pred <= 0:
        raise ValidationError(f"median of prediction is {med_pred}; cannot rescale")
    factor = float(np.median(gt.values[valid])) / med_pred
    return DepthMap(np.where(pred.valid_mask, pred.values * factor, pred.values), pred.valid_mask)


def depth_metrics(pred: DepthMap, gt: DepthMap) -> DepthMetrics:
    """RMSE / AbsRel / delta accuracies over valid pixels. No rescaling happens here.

    Pixels with gt <= 0 count toward RMSE but are excluded from AbsRel and the
    delta ratios. Deltas use a strict ``<`` against 1.25**k.
    """
    valid = _joint_valid(pred, gt)
    if not valid.any():
        raise ValidationError("no valid pixels to score")
    p, g = pred.values[valid], gt.values[valid]
    rmse = float(np.sqrt(np.mean((p - g) ** 2)))
    pos = g > 0
    if not pos.any():
        raise ValidationError("ground truth has no positive depths")
    p, g = p[pos], g[pos]
    abs_rel = float(np.mean(np.abs(p - g) / g))
    with np.errstate(divide="ignore"):
        ratio = np.maximum(p / g, np.where(p > 0, g / p, np.inf))
    deltas = [float(np.mean(ratio < DELTA_BASE**k)) for k in (1, 2, 3)]
    return DepthMetrics(rmse, abs_rel, *deltas)
