import json
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import sqrtm
from scipy.stats import special_ortho_group

from sim2real_depth.core import DepthMap, DimensionMismatchError, Image, ValidationError
from sim2real_depth.eval import (
    DepthMetrics,
    RandomConvExtractor,
    depth_metrics,
    extract_features,
    fid,
    kid,
    median_rescale,
    translation_metrics,
)
from sim2real_depth.eval.distribution import mmd2_unbiased


def dm(values):
    return DepthMap(np.asarray(values, dtype=float).reshape(1, -1))


# --------------------------------------------------------------------------
# depth metrics


def test_median_rescale_examples():
    gt = dm([1, 2, 4])
    np.testing.assert_allclose(median_rescale(dm([2, 4, 10]), gt).values, [[1, 2, 5]])
    np.testing.assert_allclose(median_rescale(dm([2, 4, 8]), gt).values, gt.values)
    np.testing.assert_array_equal(median_rescale(gt, gt).values, gt.values)


def test_median_rescale_errors():
    with pytest.raises(ValidationError):
        median_rescale(dm([0, 0, 1]), dm([1, 2, 3]))
    with pytest.raises(ValidationError):
        median_rescale(dm([1, 2, np.nan]), DepthMap(np.array([[np.nan, np.nan, 1.0]])))
    with pytest.raises(DimensionMismatchError):
        median_rescale(dm([1, 2]), dm([1, 2, 3]))


def test_median_uses_joint_valid_pixels():
    gt = DepthMap(np.array([[1.0, 2.0, 3.0, np.nan]]))
    pred = dm([2, 4, 6, 1000])
    np.testing.assert_allclose(median_rescale(pred, gt).values[0, :3], [1, 2, 3])


def test_depth_metrics_hand_example():
    m = depth_metrics(dm([1, 2, 5]), dm([1, 2, 4]))
    assert m.rmse == np.sqrt(1 / 3)
    assert m.abs_rel == pytest.approx(0.25 / 3, abs=1e-15)
    assert m.delta1 == 2 / 3
    assert m.delta2 == 1.0 and m.delta3 == 1.0


def test_perfect_prediction():
    gt = dm([3, 7, 11, 50])
    assert depth_metrics(gt, gt) == DepthMetrics(0.0, 0.0, 1.0, 1.0, 1.0)


def test_nonpositive_gt_excluded_from_ratios():
    m = depth_metrics(dm([1, 2, 7]), dm([1, 2, 0]))
    assert m.abs_rel == 0.0 and m.delta1 == 1.0
    assert m.rmse == pytest.approx(np.sqrt(49 / 3))


@pytest.mark.parametrize("c", [0.1, 3, 42])
def test_rescaled_metrics_scale_invariant(c):
    rng = np.random.default_rng(0)
    gt = DepthMap(rng.uniform(10, 200, (16, 16)))
    pred = DepthMap(gt.values * rng.uniform(0.5, 1.5, (16, 16)))
    base = depth_metrics(median_rescale(pred, gt), gt).to_dict()
    scaled = depth_metrics(median_rescale(DepthMap(pred.values * c), gt), gt).to_dict()
    for k in base:
        assert scaled[k] == pytest.approx(base[k], abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**31), spread=st.floats(0.01, 3.0))
def test_delta_monotone(seed, spread):
    rng = np.random.default_rng(seed)
    gt = DepthMap(rng.uniform(1, 100, (8, 8)))
    pred = DepthMap(gt.values * np.exp(rng.normal(0, spread, (8, 8))))
    m = depth_metrics(pred, gt)
    assert 0 <= m.delta1 <= m.delta2 <= m.delta3 <= 1
    assert m.rmse >= 0 and m.abs_rel >= 0


def test_mean_aggregation():
    a, b = DepthMetrics(1, 0.1, 0.5, 0.6, 0.7), DepthMetrics(3, 0.3, 0.7, 0.8, 0.9)
    m = DepthMetrics.mean([a, b])
    assert m.rmse == 2 and m.abs_rel == pytest.approx(0.2) and m.delta3 == pytest.approx(0.8)


# --------------------------------------------------------------------------
# FID / KID


def reference_fid(a, b):
    """Textbook formula with scipy's general matrix square root."""
    mu = a.mean(0) - b.mean(0)
    ca, cb = np.atleast_2d(np.cov(a, rowvar=False)), np.atleast_2d(np.cov(b, rowvar=False))
    return float(mu @ mu + np.trace(ca + cb - 2 * np.real(sqrtm(ca @ cb))))


def test_fid_one_dimensional_closed_form():
    assert fid(np.array([-1.0, 1.0]), np.array([2.0, 4.0])) == pytest.approx(9.0, abs=1e-6)


def test_fid_self_and_symmetry():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(200, 8)), rng.normal(0.5, 2, size=(150, 8))
    assert fid(a, a) == pytest.approx(0.0, abs=1e-6)
    assert fid(a, b) == pytest.approx(fid(b, a), abs=1e-9)
    assert fid(a, b) == pytest.approx(reference_fid(a, b), rel=1e-6)


def test_fid_rotation_invariant():
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=(100, 6)), rng.normal(1, 1.5, size=(100, 6))
    for seed in range(5):
        R = special_ortho_group.rvs(6, random_state=seed)
        assert fid(a @ R.T, b @ R.T) == pytest.approx(fid(a, b), abs=1e-5)


def test_fid_rank_deficient_is_finite():
    rng = np.random.default_rng(2)
    a, b = rng.normal(size=(5, 20)), rng.normal(size=(5, 20))
    assert np.isfinite(fid(a, b)) and fid(a, b) >= 0


def test_fid_errors():
    with pytest.raises(ValidationError):
        fid(np.ones((1, 3)), np.ones((4, 3)))
    with pytest.raises(ValidationError):
        fid(np.ones((4, 3)), np.ones((4, 2)))
    with pytest.raises(ValidationError):
        fid(np.array([[np.inf, 0.0], [0.0, 1.0]]), np.ones((2, 2)))


def test_kid_hand_example():
    # {0, 0} vs {10, 10} in 1-D: k(0,0)=1, k(10,10)=101^3, k(0,10)=1
    k00, k11, k01 = 1.0, 101.0**3, 1.0
    expected = k00 + k11 - 2 * k01
    mean, std = kid(np.array([0.0, 0.0]), np.array([10.0, 10.0]), subset_size=2)
    assert mean == pytest.approx(expected) and std == 0.0


def brute_mmd(x, y):
    k = lambda u, v: (u @ v / len(u) + 1) ** 3  # noqa: E731
    m = len(x)
    total = 0.0
    for i in range(m):
        for j in range(m):
            if i != j:
                total += k(x[i], x[j]) + k(y[i], y[j]) - k(x[i], y[j]) - k(x[j], y[i])
    return total / (m * (m - 1))


def test_mmd_matches_brute_force():
    rng = np.random.default_rng(3)
    x, y = rng.normal(size=(12, 4)), rng.normal(0.3, 1, size=(12, 4))
    assert mmd2_unbiased(x, y) == pytest.approx(brute_mmd(x, y), rel=1e-12)


def test_kid_self_and_determinism():
    rng = np.random.default_rng(4)
    a = rng.normal(size=(50, 8))
    mean, std = kid(a, a, subset_size=50)
    assert abs(mean) < 1e-6 and std == 0.0
    b = rng.normal(size=(300, 8))
    assert kid(a, b, subset_size=20, seed=7) == kid(a, b, subset_size=20, seed=7)
    assert kid(a, b, subset_size=20, seed=7)[1] > 0


def test_kid_errors():
    with pytest.raises(ValidationError):
        kid(np.zeros((0, 2)), np.zeros((3, 2)))
    with pytest.raises(ValidationError):
        kid(np.zeros((1, 2)), np.zeros((3, 2)))


# --------------------------------------------------------------------------
# features


def images(n, seed=0, size=32):
    rng = np.random.default_rng(seed)
    return [Image(rng.uniform(0, 1, (size, size, 3))) for _ in range(n)]


def test_extractor_contract():
    ext = RandomConvExtractor()
    ims = images(4)
    feats, ident = extract_features(ims + [ims[0]], ext)
    assert feats.shape == (5, 64) and ident == ext.id
    np.testing.assert_array_equal(feats[0], feats[4])
    np.testing.assert_array_equal(extract_features(ims[::-1], ext)[0], feats[:4][::-1])
    with pytest.raises(ValidationError):
        extract_features([], ext)


def test_extractor_same_across_processes():
    code = (
        "import numpy as np, json\n"
        "from sim2real_depth.core import Image\n"
        "from sim2real_depth.eval import RandomConvExtractor\n"
        "rng = np.random.default_rng(0)\n"
        "ims = [Image(rng.uniform(0, 1, (32, 32, 3))) for _ in range(3)]\n"
        "print(json.dumps(RandomConvExtractor()(ims).tolist()))\n"
    )
    runs = [json.loads(subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, check=True).stdout) for _ in range(2)]
    assert runs[0] == runs[1]
    np.testing.assert_array_equal(np.array(runs[0]), RandomConvExtractor()(images(3)))


def test_translation_metrics_self():
    ims = images(12)
    m = translation_metrics(ims, ims, RandomConvExtractor(), subset_size=12)
    assert m.fid == pytest.approx(0.0, abs=1e-6)
    assert abs(m.kid_mean) < 1e-6
    assert m.extractor_id == RandomConvExtractor().id
