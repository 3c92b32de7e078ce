import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sim2real_depth.core import DepthMap, Image, PairedSample, ValidationError
from sim2real_depth.dataio.augment import AugmentationSpec, Transform, apply_transform, augment
from sim2real_depth.dataio.geometry import (
    CameraIntrinsics,
    CropMargins,
    preprocess_frame,
    undistort_to_pinhole,
)
from sim2real_depth.dataio.io import (
    DatasetManifest,
    ManifestError,
    SequenceManifest,
    load_manifest,
    load_paired,
    load_unpaired,
    read_depth,
    write_dataset,
    write_depth,
)
from sim2real_depth.dataio.splits import split_sequences
from sim2real_depth.dataio.toy import DEPTH_RANGE, generate_toy_dataset, generate_toy_eval
from sim2real_depth.miloss import intensity

from oracles import forward_distort, smooth_image


# --------------------------------------------------------------------------
# undistortion


def test_zero_distortion_is_identity():
    img = smooth_image(64, 80)
    intr = CameraIntrinsics(60, 60, 40, 32)
    out, mask = undistort_to_pinhole(img, intr)
    assert mask.all()
    np.testing.assert_allclose(out.pixels, img.pixels, atol=1e-12)


@pytest.mark.parametrize("dist", [(-0.3, 0.05, 0, 0), (0.2, -0.01, 0.003, 0), (-0.1, 0, 0, 0.001)])
def test_principal_point_is_fixed(dist):
    img = smooth_image(65, 65, seed=2)
    intr = CameraIntrinsics(50, 50, 32, 32, dist)
    out, mask = undistort_to_pinhole(img, intr)
    assert mask[32, 32]
    np.testing.assert_allclose(out.pixels[32, 32], img.pixels[32, 32], atol=1e-12)


def test_undistort_round_trip():
    img = smooth_image(120, 120, seed=4)
    intr = CameraIntrinsics(70, 70, 59.5, 59.5, (-0.25, 0.04, 0.0, 0.0))
    distorted = forward_distort(img, intr)
    back, mask = undistort_to_pinhole(distorted, intr)
    m = int(0.1 * 120)
    interior = np.s_[m:-m, m:-m]
    assert mask[interior].all()
    err = np.abs(back.pixels[interior] - img.pixels[interior]).mean()
    assert err < 0.02


def test_barrel_undistortion_invalidates_border():
    img = smooth_image(64, 64)
    out, mask = undistort_to_pinhole(img, CameraIntrinsics(30, 30, 31.5, 31.5, (0.3, 0.0, 0.0, 0.0)))
    assert not mask.all() and mask[32, 32]
    assert np.all(out.pixels[~mask] == 0)


def test_nonfinite_distortion_rejected():
    with pytest.raises(ValidationError):
        undistort_to_pinhole(smooth_image(16, 16), CameraIntrinsics(10, 10, 8, 8, (np.nan, 0, 0, 0)))


def test_intrinsics_file(tmp_path):
    p = tmp_path / "intr.json"
    p.write_text('{"fx": 500, "fy": 501, "cx": 675, "cy": 540, "distortion": [-0.1, 0.01, 0, 0]}')
    intr = CameraIntrinsics.load(p)
    assert intr.fy == 501 and intr.distortion == (-0.1, 0.01, 0.0, 0.0)
    with pytest.raises(ValidationError):
        intr.check_frame(100, 100)


# --------------------------------------------------------------------------
# preprocessing


def test_raw_frame_resizes_to_target():
    raw = Image(np.random.default_rng(0).uniform(0, 1, (1080, 1350, 3)))
    out = preprocess_frame(raw, CropMargins(10, 10, 40, 40))
    assert (out.width, out.height) == (270, 216)


def test_target_sized_frame_unchanged():
    img = Image(np.random.default_rng(1).uniform(0, 1, (216, 270, 3)))
    assert preprocess_frame(img) is img


@pytest.mark.parametrize("shape", [(100, 150), (300, 301), (216, 300)])
def test_constant_frame_stays_constant(shape):
    img = Image(np.full(shape + (3,), 0.3137))
    out = preprocess_frame(img, CropMargins(2, 3, 4, 5))
    assert out.shape == (216, 270)
    np.testing.assert_allclose(out.pixels, 0.3137, atol=1e-12)


def test_oversized_margins_rejected():
    with pytest.raises(ValidationError):
        preprocess_frame(Image(np.zeros((20, 20, 3))), CropMargins(10, 10, 0, 0))


# --------------------------------------------------------------------------
# splits


def test_split_counts():
    tr, te = split_sequences(list(range(10)), 0.9, seed=0)
    assert (len(tr), len(te)) == (9, 1)
    tr, te = split_sequences(list(range(93)), 0.9, seed=0)
    assert (len(tr), len(te)) == (83, 10)


def test_split_deterministic():
    seqs = [f"seq{i}" for i in range(20)]
    assert split_sequences(seqs, 0.7, 5) == split_sequences(seqs, 0.7, 5)
    assert split_sequences(seqs, 0.7, 5) != split_sequences(seqs, 0.7, 6)


def test_split_needs_two():
    with pytest.raises(ValidationError):
        split_sequences(["only"], 0.9, 0)
    with pytest.raises(ValidationError):
        split_sequences(["a", "b"], 1.0, 0)


@settings(max_examples=100, deadline=None)
@given(n=st.integers(2, 200), frac=st.floats(0.01, 0.99), seed=st.integers(0, 2**31))
def test_split_disjoint_exhaustive(n, frac, seed):
    tr, te = split_sequences(list(range(n)), frac, seed)
    assert set(tr).isdisjoint(te)
    assert sorted(tr + te) == list(range(n))
    assert len(tr) >= 1 and len(te) >= 1


# --------------------------------------------------------------------------
# augmentation


def coord_sample(h=40, w=48):
    rows, cols = np.mgrid[0:h, 0:w]
    px = np.stack([rows / (h - 1), cols / (w - 1), np.zeros((h, w))], -1)
    depth = 10.0 + rows * w + cols  # unique per pixel
    return PairedSample(Image(px), DepthMap(depth))


def decode(sample, h=40, w=48):
    r = np.rint(sample.image.pixels[..., 0] * (h - 1)).astype(int)
    c = np.rint(sample.image.pixels[..., 1] * (w - 1)).astype(int)
    return r, c


def test_identity_augmentation():
    s = coord_sample()
    out = augment(s, AugmentationSpec(40, False, False), np.random.default_rng(0))
    out_full = augment(PairedSample(Image(s.image.pixels[:, :40]), DepthMap(s.depth.values[:, :40])), AugmentationSpec(40, False, False), np.random.default_rng(0))
    np.testing.assert_array_equal(out_full.image.pixels, s.image.pixels[:, :40])
    np.testing.assert_array_equal(out_full.depth.values, s.depth.values[:, :40])
    assert out.image.shape == (40, 40)


def test_double_hflip_is_identity():
    s = coord_sample()
    t = Transform(0, 0, 40, hflip=True, vflip=False)
    sq = PairedSample(Image(s.image.pixels[:, :40]), DepthMap(s.depth.values[:, :40]))
    twice = apply_transform(apply_transform(sq, t), t)
    np.testing.assert_array_equal(twice.image.pixels, sq.image.pixels)
    np.testing.assert_array_equal(twice.depth.values, sq.depth.values)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**31), crop=st.integers(8, 40))
def test_augment_keeps_image_and_depth_aligned(seed, crop):
    s = coord_sample()
    out = augment(s, AugmentationSpec(crop, True, True), np.random.default_rng(seed))
    r, c = decode(out)
    np.testing.assert_array_equal(out.depth.values, 10.0 + r * 48 + c)


def test_augment_crop_too_large():
    with pytest.raises(ValidationError):
        augment(coord_sample(), AugmentationSpec(41), np.random.default_rng(0))


def test_flip_frequencies():
    rng = np.random.default_rng(0)
    s = coord_sample()
    flips = []
    for _ in range(400):
        out = augment(s, AugmentationSpec(40, True, True), rng)
        r, c = decode(out)
        flips.append((c[0, 0] > c[0, -1], r[0, 0] > r[-1, 0]))
    h, v = np.mean(flips, axis=0)
    assert 0.4 < h < 0.6 and 0.4 < v < 0.6


# --------------------------------------------------------------------------
# toy data


def test_toy_contract():
    pairs, unpaired = generate_toy_dataset(1, 64, seed=0)
    assert len(pairs) == 1 and len(unpaired) == 1
    d = pairs[0].depth.values
    assert pairs[0].image.shape == (64, 64)
    assert DEPTH_RANGE[0] <= d.min() and d.max() <= DEPTH_RANGE[1]


def test_toy_deterministic():
    a = generate_toy_dataset(10, 32, seed=3)
    b = generate_toy_dataset(10, 32, seed=3)
    for x, y in zip(a[0], b[0]):
        assert np.array_equal(x.image.pixels, y.image.pixels) and np.array_equal(x.depth.values, y.depth.values)
    for x, y in zip(a[1], b[1]):
        assert np.array_equal(x.image.pixels, y.image.pixels)


def test_toy_shading_tracks_depth():
    pairs, _ = generate_toy_dataset(40, 64, seed=1)
    for p in pairs:
        corr = np.corrcoef(intensity(p.image).ravel(), -p.depth.values.ravel())[0, 1]
        assert corr > 0.5


def test_toy_domains_differ():
    pairs, unpaired = generate_toy_dataset(16, 32, seed=0)
    ev = generate_toy_eval(4, 32, seed=0)
    assert {p.sequence_id[:4] for p in pairs} == {"toyA"}
    assert {u.sequence_id[:4] for u in unpaired} == {"toyB"}
    assert all(e.depth.n_valid == 32 * 32 for e in ev)
    # target style is redder
    red = lambda imgs: np.mean([im.pixels[..., 0].mean() / im.pixels[..., 1].mean() for im in imgs])
    assert red([u.image for u in unpaired]) > red([p.image for p in pairs])


# --------------------------------------------------------------------------
# files


def test_dataset_round_trip(tmp_path):
    pairs, unpaired = generate_toy_dataset(10, 32, seed=0)
    ma = load_manifest(write_dataset(tmp_path / "a", "toyA", pairs))
    mb = load_manifest(write_dataset(tmp_path / "b", "toyB", unpaired))
    assert ma.n_frames == 10 and mb.n_frames == 10
    back = load_paired(ma)
    for s, t in zip(pairs, back):
        assert np.abs(s.image.pixels - t.image.pixels).max() <= 0.5 / 255 + 1e-12
        assert np.abs(s.depth.values - t.depth.values).max() <= 0.005 + 1e-9
        assert (s.sequence_id, s.frame_index) == (t.sequence_id, t.frame_index)
    assert len(load_unpaired(mb)) == 10


def test_loader_rejects_size_disagreement(tmp_path):
    pairs, _ = generate_toy_dataset(2, 32, seed=0)
    path = write_dataset(tmp_path, "toyA", pairs)
    m = load_manifest(path)
    wrong = DatasetManifest(m.dataset_name, m.domain, m.sequences, m.depth_scale_mm, (64, 64), m.root)
    with pytest.raises(ManifestError):
        load_paired(wrong)


def test_depth_png_zero_is_invalid(tmp_path):
    vals = np.array([[0.0, 12.5], [100.0, 0.004]] * 4)
    mask = np.ones_like(vals, bool)
    mask[0, 0] = False
    write_depth(tmp_path / "d.png", DepthMap(vals, mask), 0.01)
    back = read_depth(tmp_path / "d.png", 0.01)
    assert not back.valid_mask[0, 0]
    assert back.valid_mask[1, 1] and back.values[1, 1] > 0
    assert back.values[0, 1] == pytest.approx(12.5)


def test_manifest_invariants():
    with pytest.raises(ManifestError):
        SequenceManifest("s", ("a.png",), "B", ("a_d.png",))
    with pytest.raises(ManifestError):
        SequenceManifest("s", ("a.png",), "A", None)
    with pytest.raises(ManifestError):
        SequenceManifest("s", ("a.png", "b.png"), "B", None, (3, 3))


def test_missing_manifest(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_manifest(tmp_path / "nope.json")
