"""Feature-distribution distances between image sets (FID and KID)."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..core import ValidationError

SQRT_EIG_TOL = -1e-8


@dataclass(frozen=True)
class TranslationMetrics:
    fid: float
    kid_mean: float
    kid_std: float
    extractor_id: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def _as_features(x) -> np.ndarray:
    f = np.asarray(x, dtype=np.float64)
    if f.ndim == 1:
        f = f[:, None]
    if f.ndim != 2:
        raise ValidationError(f"features must be (n, d), got shape {f.shape}")
    if not np.all(np.isfinite(f)):
        raise ValidationError("features contain non-finite values")
    return f


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(0.5 * (m + m.T))
    if w.min(initial=0.0) < SQRT_EIG_TOL * max(1.0, abs(w).max(initial=0.0)):
        raise ValidationError(f"matrix is not positive semi-definite (min eigenvalue {w.min():.3g})")
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def trace_sqrt_product(cov_a: np.ndarray, cov_b: np.ndarray) -> float:
    """Tr((A B)^(1/2)) via the symmetric form (A^(1/2) B A^(1/2))^(1/2)."""
    sa = _psd_sqrt(cov_a)
    w = np.linalg.eigvalsh(0.5 * (sa @ cov_b @ sa + (sa @ cov_b @ sa).T))
    return float(np.sqrt(np.clip(w, 0.0, None)).sum())


def fid(features_a, features_b) -> float:
    """Frechet distance between Gaussian fits (covariances with 1/(n-1))."""
    fa, fb = _as_features(features_a), _as_features(features_b)
    if fa.shape[0] < 2 or fb.shape[0] < 2:
        raise ValidationError("FID needs at least 2 samples per set")
    if fa.shape[1] != fb.shape[1]:
        raise ValidationError(f"feature dimensions differ: {fa.shape[1]} vs {fb.shape[1]}")
    mu_a, mu_b = fa.mean(0), fb.mean(0)
    cov_a = np.atleast_2d(np.cov(fa, rowvar=False))
    cov_b = np.atleast_2d(np.cov(fb, rowvar=False))
    if not (np.all(np.isfinite(cov_a)) and np.all(np.isfinite(cov_b))):
        raise ValidationError("non-finite covariance")
    diff = mu_a - mu_b
    value = diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * trace_sqrt_product(cov_a, cov_b)
    return float(max(value, 0.0))


def polynomial_kernel(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    d = x.shape[1]
    return (x @ y.T / d + 1.0) ** 3


def mmd2_unbiased(x: np.ndarray, y: np.ndarray) -> float:
    """U-statistic MMD^2 for equal-size samples: mean over i != j of h(z_i, z_j)."""
    m = x.shape[0]
    if m < 2 or y.shape[0] != m:
        raise ValidationError("unbiased MMD needs two equal-size samples of at least 2")
    kxx, kyy, kxy = polynomial_kernel(x, x), polynomial_kernel(y, y), polynomial_kernel(x, y)
    off = ~np.eye(m, dtype=bool)
    h = kxx + kyy - kxy - kxy.T
    return float(h[off].sum() / (m * (m - 1)))


def kid(features_a, features_b, subset_size: int = 100, n_subsets: int = 10, seed: int = 0) -> tuple[float, float]:
    """Mean and std of unbiased MMD^2 (cubic polynomial kernel) over random subsets.

    The subset size shrinks to the smaller set when needed. When it equals both
    set sizes the sets are used as-is, so every subset is identical.
    """
    fa, fb = _as_features(features_a), _as_features(features_b)
    if fa.shape[0] == 0 or fb.shape[0] == 0:
        raise ValidationError("KID needs non-empty feature sets")
    if fa.shape[1] != fb.shape[1]:
        raise ValidationError(f"feature dimensions differ: {fa.shape[1]} vs {fb.shape[1]}")
    m = min(subset_size, fa.shape[0], fb.shape[0])
    if m < 2:
        raise ValidationError("KID needs at least 2 samples per subset")
    if m == fa.shape[0] == fb.shape[0]:
        v = mmd2_unbiased(fa, fb)
        return v, 0.0
    rng = np.random.default_rng(seed)
    vals = []
    for _ in range(n_subsets):
        ia = rng.choice(fa.shape[0], m, replace=False)
        ib = rng.choice(fb.shape[0], m, replace=False)
        vals.append(mmd2_unbiased(fa[ia], fb[ib]))
    return float(np.mean(vals)), float(np.std(vals))
