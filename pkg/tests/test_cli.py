import csv
import json
from pathlib import Path

import cv2
import numpy as np
import pytest

from sim2real_depth.cli import main, render_grid
from sim2real_depth.dataio.io import load_manifest, load_paired
from sim2real_depth.experiment import (
    OUTPUT_ROOT_ENV,
    ExperimentConfig,
    apply_overrides,
    config_to_dict,
    load_config,
    resolve,
    run_ablation_suite,
    run_directory,
    suite_cells,
    toy_experiment_config,
    write_toy_data,
)

TINY_TRANSLATION = [
    "translation.epochs=2",
    "translation.batch_size=4",
    "translation.network.gen_width=8",
    "translation.network.gen_blocks=1",
    "translation.network.disc_width=8",
    "translation.network.disc_layers=2",
    "histogram.n_bins=16",
]
TINY_DEPTH = [
    "depth.epochs=2",
    "depth.batch_size=4",
    "depth.network.layers=[1, 1]",
    "depth.network.width=8",
    "depth.network.label_scale=100.0",
    "depth.augmentation.crop_size=28",
    "depth.inference_size=[32, 32]",
]


def sets(items):
    return [a for item in items for a in ("--set", item)]


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy")
    return write_toy_data(root, n_pairs=10, n_eval=3, resolution=32, seed=0)


@pytest.fixture(scope="module")
def translated(data, tmp_path_factory):
    run = tmp_path_factory.mktemp("run")
    args = ["train-translate", "--domain-a", str(data["domain_a"]), "--domain-b", str(data["domain_b"]), "--output-dir", str(run)]
    assert main(args + sets(TINY_TRANSLATION)) == 0
    return run


def test_train_translate_writes_all_networks(translated):
    for name in ("G", "F", "D_A", "D_B"):
        assert (translated / "checkpoints" / f"{name}.pt").is_file()
    for sub in ("images", "metrics", "logs"):
        assert (translated / sub).is_dir()
    assert (translated / "logs" / "translation_curve.csv").is_file()
    cfg = load_config(translated / "config.resolved.toml")
    assert cfg.translation.epochs == 2 and cfg.translation.loss_weights.lambda_mi == 1.0


def test_ours_cg_snapshot_has_zero_mi_weight(data, tmp_path):
    args = ["train-translate", "--domain-a", str(data["domain_a"]), "--domain-b", str(data["domain_b"]),
            "--output-dir", str(tmp_path), "--ablation", "ours_cg"]
    assert main(args + sets(TINY_TRANSLATION + ["translation.epochs=1"])) == 0
    assert load_config(tmp_path / "config.resolved.toml").translation.loss_weights.lambda_mi == 0.0


def test_missing_manifest_exits_2(tmp_path, capsys):
    missing = tmp_path / "absent" / "manifest.json"
    code = main(["train-translate", "--domain-a", str(missing), "--domain-b", str(missing), "--output-dir", str(tmp_path / "r")])
    assert code == 2
    assert str(missing) in capsys.readouterr().err


def test_bad_flag_exits_2():
    with pytest.raises(SystemExit) as e:
        main(["train-depth", "--no-such-flag"])
    assert e.value.code == 2


def test_translate_dataset_pairs_and_determinism(translated, data, tmp_path):
    for out in ("t1", "t2"):
        assert main(["translate-dataset", "--checkpoint", str(translated / "checkpoints" / "G.pt"),
                     "--manifest", str(data["domain_a"]), "--outdir", str(tmp_path / out)]) == 0
    src, m1 = load_manifest(data["domain_a"]), load_manifest(tmp_path / "t1" / "manifest.json")
    assert m1.n_frames == src.n_frames == 10
    for s, t in zip(src.sequences, m1.sequences):
        assert [str(src.resolve(d).resolve()) for d in s.depths] == list(t.depths)
    files = sorted(p.relative_to(tmp_path / "t1") for p in (tmp_path / "t1").rglob("*.png"))
    assert len(files) == 10
    for rel in files:
        assert (tmp_path / "t1" / rel).read_bytes() == (tmp_path / "t2" / rel).read_bytes()
    assert len(load_paired(m1)) == 10


def test_translate_dataset_refuses_b2a(translated, data, tmp_path, capsys):
    code = main(["translate-dataset", "--checkpoint", str(translated / "checkpoints" / "F.pt"),
                 "--manifest", str(data["domain_a"]), "--outdir", str(tmp_path)])
    assert code == 2
    assert "B2A" in capsys.readouterr().err


def test_train_depth_strict_and_resume(data, tmp_path):
    base = ["train-depth", "--manifest", str(data["domain_a"]), "--output-dir", str(tmp_path)] + sets(TINY_DEPTH)
    assert main(base + ["--strict", "--threshold", "1e-9"]) == 1
    assert main(base + ["--strict", "--threshold", "1e9"]) == 0
    rows = list(csv.DictReader(open(tmp_path / "logs" / "depth_curve.csv")))
    assert {r["epoch"] for r in rows} == {"1", "2"}
    assert main(base + ["--set", "depth.epochs=3", "--resume", str(tmp_path / "checkpoints" / "depth.pt")]) == 0
    rows = list(csv.DictReader(open(tmp_path / "logs" / "depth_curve.csv")))
    assert [r["epoch"] for r in rows][-1] == "3" and rows[0]["epoch"] == "1"


def test_evaluate_with_ground_truth_predictions(data, tmp_path):
    assert main(["evaluate", "--manifest", str(data["eval"]), "--predictions-from-gt", "--output-dir", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "metrics" / "metrics.json").read_text())
    assert set(report) == {"dataset", "model_id", "extractor_id", "depth", "translation", "config_hash"}
    agg = report["depth"]["aggregate"]
    assert agg["rmse"] == 0 and agg["abs_rel"] == 0 and agg["delta1"] == 1 and agg["delta3"] == 1


def test_evaluate_aggregate_is_frame_mean(data, tmp_path):
    run = tmp_path / "d"
    assert main(["train-depth", "--manifest", str(data["domain_a"]), "--output-dir", str(run)] + sets(TINY_DEPTH)) == 0
    assert main(["evaluate", "--checkpoint", str(run / "checkpoints" / "depth.pt"), "--manifest", str(data["eval"]),
                 "--output-dir", str(run), "--dump-predictions"]) == 0
    report = json.loads((run / "metrics" / "metrics.json").read_text())
    frames = report["depth"]["per_frame"]
    assert len(frames) == 3
    for k, v in report["depth"]["aggregate"].items():
        assert v == pytest.approx(np.mean([f[k] for f in frames]), abs=1e-9)
    preds = load_manifest(run / "images" / "predictions" / "manifest.json")
    assert preds.n_frames == 3
    assert json.loads((run / "images" / "predictions" / "scale.json").read_text())["depth_scale_mm"] == preds.depth_scale_mm
    png = cv2.imread(str(preds.resolve(preds.sequences[0].depths[0])), cv2.IMREAD_UNCHANGED)
    assert png.dtype == np.uint16


def test_evaluate_translation_metrics_self(data, tmp_path):
    folder = Path(data["domain_b"]).parent / "images"
    assert main(["evaluate", "--translation-metrics", str(folder), str(folder), "--output-dir", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "metrics" / "metrics.json").read_text())
    assert report["translation"]["fid"] == pytest.approx(0.0, abs=1e-6)
    assert report["extractor_id"].startswith("randconv")


# --------------------------------------------------------------------------
# comparison grids


def test_grid_layout_and_shared_scale():
    rng = np.random.default_rng(0)
    img = (rng.uniform(0, 1, (20, 24, 3)) * 255).astype(np.uint8)
    d = rng.uniform(10, 100, (20, 24))
    m = np.ones_like(d, bool)
    grid = render_grid(img, [("m1", d, m), ("m2", d.copy(), m)])
    assert grid.shape == (36, 3 * 24 + 2 * 2, 3)
    p1, p2 = grid[16:, 26:50], grid[16:, 52:76]
    np.testing.assert_array_equal(p1, p2)
    # a model predicting half the depth gets darker colours on the shared scale
    g2 = render_grid(img, [("m1", d, m), ("half", d / 2, m)])
    assert not np.array_equal(g2[16:, 26:50], g2[16:, 52:76])


def test_compare_grid_files(data, tmp_path, caplog):
    run = tmp_path / "d"
    assert main(["train-depth", "--manifest", str(data["domain_a"]), "--output-dir", str(run)] + sets(TINY_DEPTH)) == 0
    assert main(["evaluate", "--checkpoint", str(run / "checkpoints" / "depth.pt"), "--manifest", str(data["eval"]),
                 "--output-dir", str(run), "--dump-predictions"]) == 0
    dump = run / "images" / "predictions" / "manifest.json"
    args = ["compare-grid", "--manifest", str(data["eval"]), "--model", f"ckpt={run / 'checkpoints' / 'depth.pt'}", "--model", f"dump={dump}"]
    assert main(args + ["--outdir", str(tmp_path / "g1")]) == 0
    assert main(args + ["--outdir", str(tmp_path / "g2")]) == 0
    files = sorted((tmp_path / "g1").iterdir())
    assert len(files) == 3
    for f in files:
        assert f.read_bytes() == (tmp_path / "g2" / f.name).read_bytes()
        assert cv2.imread(str(f)).shape[1] == 3 * 32 + 2 * 2
    # a missing prediction is skipped with a warning, not an error
    victim = next((run / "images" / "predictions" / "depths").rglob("*.png"))
    victim.unlink()
    assert main(args + ["--outdir", str(tmp_path / "g3")]) == 0
    assert len(list((tmp_path / "g3").iterdir())) == 2


# --------------------------------------------------------------------------
# configs and the suite


def test_config_round_trip(tmp_path):
    cfg = toy_experiment_config({"domain_a": "a.json", "domain_b": "b.json", "eval": "e.json"}, tmp_path, seed=3)
    path = tmp_path / "c.toml"
    from sim2real_depth.experiment import dump_config

    path.write_text(dump_config(cfg))
    assert load_config(path) == cfg
    assert config_to_dict(load_config(path)) == config_to_dict(cfg)


def test_overrides_and_resolution():
    cfg = apply_overrides(ExperimentConfig(), ["translation.epochs=3", "ablation_id=ours_cg", "seed=9"])
    r = resolve(cfg)
    assert r.translation.epochs == 3 and r.translation.seed == 9 and r.depth.seed == 9
    assert r.translation.loss_weights.lambda_mi == 0.0
    with pytest.raises(ValueError):
        apply_overrides(ExperimentConfig(), ["ablation_id=unknown"])
    with pytest.raises(ValueError):
        apply_overrides(ExperimentConfig(), ["nonsense_key=1"])


def test_output_root_env(monkeypatch, tmp_path):
    monkeypatch.setenv(OUTPUT_ROOT_ENV, str(tmp_path))
    assert run_directory("runs/x") == tmp_path / "runs" / "x"
    assert run_directory(tmp_path / "abs") == tmp_path / "abs"


def test_suite_cells_differ_only_in_mi_weight(tmp_path):
    base = toy_experiment_config({"domain_a": "a", "domain_b": "b", "eval": "e"}, tmp_path, alt_domain_b=("b1", "b2"))
    cells = dict(suite_cells(base, ["baseline", "ours", "ours_cg", "ours_altB"]))
    assert sorted(cells) == ["baseline", "ours", "ours_altB_0", "ours_altB_1", "ours_cg"]
    ours, cg = config_to_dict(resolve(cells["ours"])), config_to_dict(resolve(cells["ours_cg"]))
    diff = {k for k in ours if ours[k] != cg[k]}
    assert diff == {"ablation_id", "output_dir", "translation"}
    assert {k for k in ours["translation"] if ours["translation"][k] != cg["translation"][k]} == {"loss_weights"}
    assert ours["translation"]["loss_weights"]["lambda_mi"] == 10.0 and cg["translation"]["loss_weights"]["lambda_mi"] == 0.0
    assert cells["ours_altB_1"].domain_b == "b2"


def test_toy_suite_rows(data, tmp_path):
    base = apply_overrides(
        toy_experiment_config(data, tmp_path / "suite"),
        TINY_TRANSLATION + TINY_DEPTH + ["translation.epochs=1"],
    )
    base = apply_overrides(base, ["alt_domain_b=['/does/not/exist.json']"])
    rows, root = run_ablation_suite(base, ["baseline", "ours", "ours_cg", "ours_altB"])
    by_cell = {r["cell"]: r for r in rows}
    assert set(by_cell) == {"baseline", "ours", "ours_cg", "ours_altB_0"}
    for name in ("baseline", "ours", "ours_cg"):
        r = by_cell[name]
        assert r["status"] == "ok"
        for k in ("rmse", "abs_rel", "delta1", "delta2", "delta3"):
            assert np.isfinite(r[k])
    assert by_cell["ours_altB_0"]["status"] == "failed" and "exist.json" in by_cell["ours_altB_0"]["error"]
    table = list(csv.DictReader(open(root / "metrics" / "ablation.csv")))
    assert len(table) == 4
    assert set(json.loads((root / "metrics" / "ablation.json").read_text())) == set(by_cell)
    assert not (root / "baseline" / "checkpoints" / "G.pt").exists()
