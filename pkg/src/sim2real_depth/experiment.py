"""Experiment configs, run directories and the end-to-end pipeline stages.

A run directory looks like::

    <run>/config.resolved.toml
    <run>/checkpoints/   G.pt F.pt D_A.pt D_B.pt depth.pt ...
    <run>/images/        translated/ (manifest + PNGs), predictions/
    <run>/metrics/       metrics.json, ablation.csv, ablation.json
    <run>/logs/          translation_curve.csv, depth_curve.csv, <command>.log

Relative output directories are placed under ``$SIM2REAL_DEPTH_OUTPUT_ROOT``
when that variable is set.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import sys
import traceback
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib
import tomli_w

from .checkpoint import to_plain
from .core import Domain, Image, LossWeights, ValidationError
from .dataio.augment import AugmentationSpec
from .dataio.io import (
    DatasetManifest,
    ManifestError,
    SequenceManifest,
    iter_frames,
    load_manifest,
    load_paired,
    load_unpaired,
    read_image,
    save_manifest,
    write_dataset,
    write_depth,
    write_image,
)
from .dataio.toy import generate_toy_dataset, generate_toy_eval
from .depthnet import DepthNetConfig, DepthTrainConfig, depth_config_from_dict, predict_depth, train_depth
from .eval import DepthMetrics, depth_metrics, median_rescale, translation_metrics
from .eval.features import get_extractor
from .miloss import HistogramSpec, hard_mi
from .translation.networks import NetworkConfig
from .translation.train import TranslationTrainConfig, load_generator, train_translation, translate
from .translation.train import config_from_dict as translation_config_from_dict

log = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "SIM2REAL_DEPTH_OUTPUT_ROOT"
ABLATIONS = ("baseline", "ours", "ours_cg", "ours_altB")
RESOLVED_NAME = "config.resolved.toml"


@dataclass(frozen=True)
class ExperimentConfig:
    domain_a: str | None = None  # paired manifest (images + depth)
    domain_b: str | None = None  # unpaired target-style manifest
    eval: str | None = None  # held-out manifest with ground-truth depth
    alt_domain_b: tuple[str, ...] = ()  # extra target manifests for ours_altB cells
    ablation_id: str = "ours"
    output_dir: str = "runs/default"
    seed: int = 0
    translation: TranslationTrainConfig = field(default_factory=TranslationTrainConfig)
    depth: DepthTrainConfig = field(default_factory=DepthTrainConfig)
    histogram: HistogramSpec = field(default_factory=HistogramSpec)
    extractor: str = "randconv"
    mi_eval_bins: int = 64  # hard-binned MI reported for translated images
    depth_loss_threshold: float | None = None  # --strict fails above this final training loss (mm^2)
    invocation: dict = field(default_factory=dict)  # command name + its file arguments, for re-runs

    def __post_init__(self):
        if self.ablation_id not in ABLATIONS:
            raise ValidationError(f"ablation_id must be one of {ABLATIONS}, got {self.ablation_id!r}")
        object.__setattr__(self, "alt_domain_b", tuple(self.alt_domain_b))

    @property
    def uses_translation(self) -> bool:
        return self.ablation_id != "baseline"


def resolve(cfg: ExperimentConfig) -> ExperimentConfig:
    """Apply the ablation rules and push the top-level seed into both stages."""
    tr = replace(cfg.translation, seed=cfg.seed)
    if cfg.ablation_id == "ours_cg":
        tr = replace(tr, loss_weights=replace(tr.loss_weights, lambda_mi=0.0))
    dp = replace(cfg.depth, seed=cfg.seed)
    return replace(cfg, translation=tr, depth=dp)


# --------------------------------------------------------------------------
# (de)serialisation


def _drop_none(obj):
    if isinstance(obj, dict):
        return {k: _drop_none(v) for k, v in obj.items() if v is not None}
    if isinstance(obj, list):
        return [_drop_none(v) for v in obj]
    return obj


def config_to_dict(cfg: ExperimentConfig) -> dict:
    return _drop_none(to_plain(cfg))


def config_from_dict(d: dict) -> ExperimentConfig:
    d = dict(d)
    known = set(ExperimentConfig.__dataclass_fields__)
    unknown = set(d) - known
    if unknown:
        raise ValidationError(f"unknown config keys: {sorted(unknown)}")
    if "translation" in d:
        d["translation"] = translation_config_from_dict(d["translation"])
    if "depth" in d:
        d["depth"] = depth_config_from_dict(d["depth"])
    if "histogram" in d:
        d["histogram"] = HistogramSpec(**d["histogram"])
    return ExperimentConfig(**d)


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config not found: {path}")
    with open(path, "rb") as fh:
        return config_from_dict(tomllib.load(fh))


def dump_config(cfg: ExperimentConfig) -> str:
    return tomli_w.dumps(config_to_dict(cfg))


def config_hash(cfg: ExperimentConfig) -> str:
    """Identifies the experiment; where it was written and how it was invoked do not count."""
    d = config_to_dict(cfg)
    for k in ("output_dir", "invocation"):
        d.pop(k, None)
    blob = json.dumps(d, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _set_path(d: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    for k in keys[:-1]:
        d = d.setdefault(k, {})
    d[keys[-1]] = value


def apply_overrides(cfg: ExperimentConfig, overrides: Sequence[str]) -> ExperimentConfig:
    """``section.key=value`` overrides; values are parsed as TOML scalars/arrays, else kept as strings."""
    d = config_to_dict(cfg)
    for item in overrides:
        if "=" not in item:
            raise ValidationError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        try:
            value = tomllib.loads(f"v = {raw}")["v"]
        except tomllib.TOMLDecodeError:
            value = raw
        _set_path(d, key.strip(), value)
    return config_from_dict(d)


def run_directory(output_dir: str | Path) -> Path:
    p = Path(output_dir)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not p.is_absolute():
        p = Path(root) / p
    return p


def prepare_run(cfg: ExperimentConfig) -> Path:
    """Create the run layout and write the resolved snapshot; returns the run directory."""
    run = run_directory(cfg.output_dir)
    for sub in ("checkpoints", "images", "metrics", "logs"):
        (run / sub).mkdir(parents=True, exist_ok=True)
    (run / RESOLVED_NAME).write_text(dump_config(cfg))
    return run


def _require(path: str | None, what: str) -> Path:
    if not path:
        raise ValidationError(f"no {what} manifest configured")
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"{what} manifest not found: {p}")
    return p


# --------------------------------------------------------------------------
# stages


def stage_train_translation(cfg: ExperimentConfig, run: Path):
    a = load_paired(load_manifest(_require(cfg.domain_a, "domain A")))
    b = load_unpaired(load_manifest(_require(cfg.domain_b, "domain B")))
    return train_translation(cfg.translation, a, b, cfg.histogram, out_dir=run)


def stage_translate_dataset(generator_ckpt: str | Path, manifest_path: str | Path, outdir: str | Path) -> Path:
    """Translate every frame of a paired manifest with an A->B generator.

    The new manifest pairs each translated image with the original depth file
    (stored as an absolute path).
    """
    G = load_generator(generator_ckpt, require_direction="A2B")
    src = load_manifest(manifest_path)
    if src.domain is not Domain.A:
        raise ManifestError(f"{manifest_path}: translation input must be a domain-A manifest")
    outdir = Path(outdir)
    seqs = []
    for seq in src.sequences:
        frames = []
        for k, rel in enumerate(seq.frames):
            img = read_image(src.resolve(rel))
            out_rel = f"images/{seq.sequence_id}/{seq.frame_indices[k]:06d}.png"
            write_image(outdir / out_rel, translate(G, img))
            frames.append(out_rel)
        depths = tuple(str(src.resolve(d).resolve()) for d in seq.depths)
        seqs.append(SequenceManifest(seq.sequence_id, tuple(frames), Domain.A, depths, seq.frame_indices))
    out = DatasetManifest(f"{src.dataset_name}_translated", Domain.A, tuple(seqs), src.depth_scale_mm, src.image_size, outdir)
    return save_manifest(out, outdir / "manifest.json")


def final_loss(curve: list[dict]) -> float:
    last = curve[-1]["epoch"]
    return float(np.mean([r["loss"] for r in curve if r["epoch"] == last]))


def stage_train_depth(cfg: ExperimentConfig, manifest_path: str | Path, run: Path, resume: str | Path | None = None):
    pairs = load_paired(load_manifest(manifest_path))
    return train_depth(cfg.depth, pairs, out_dir=run, resume=resume)


def _prediction_scale(values: np.ndarray) -> float:
    top = float(values.max(initial=0.0))
    return max(0.01, float(np.ceil(top / 65535 * 1e4) / 1e4))


def evaluate_depth(
    model,
    inference_size,
    eval_manifest: str | Path,
    dump_dir: str | Path | None = None,
    predictions_from_gt: bool = False,
) -> tuple[DepthMetrics, list[dict]]:
    """Per-frame median rescaling, then the plain mean over frames."""
    manifest = load_manifest(eval_manifest)
    samples = load_paired(manifest)
    per_frame, metrics, dumped = [], [], []
    for s in samples:
        pred = s.depth if predictions_from_gt else predict_depth(model, s.image, inference_size)
        m = depth_metrics(median_rescale(pred, s.depth), s.depth)
        metrics.append(m)
        per_frame.append({"sequence_id": s.sequence_id, "frame_index": s.frame_index, **m.to_dict()})
        dumped.append((s, pred))
    if dump_dir is not None:
        dump_predictions(dumped, manifest, Path(dump_dir))
    return DepthMetrics.mean(metrics), per_frame


def dump_predictions(items, src: DatasetManifest, outdir: Path) -> Path:
    """16-bit PNG predictions, a ``scale.json`` sidecar and a paired manifest (input image + prediction)."""
    scale = max(_prediction_scale(p.values) for _, p in items)
    frames = {}
    for s, pred in items:
        rel = f"depths/{s.sequence_id}/{s.frame_index:06d}.png"
        write_depth(outdir / rel, pred, scale)
        frames.setdefault(s.sequence_id, []).append((s.frame_index, rel))
    inputs = {(seq.sequence_id, seq.frame_indices[k]): str(src.resolve(f).resolve()) for seq, k, f, _ in iter_frames(src)}
    seqs = []
    for sid, items_ in frames.items():
        items_.sort()
        seqs.append(
            SequenceManifest(
                sid,
                tuple(inputs[(sid, i)] for i, _ in items_),
                Domain.A,
                tuple(r for _, r in items_),
                tuple(i for i, _ in items_),
            )
        )
    (outdir / "scale.json").write_text(json.dumps({"depth_scale_mm": scale}) + "\n")
    return save_manifest(DatasetManifest(f"{src.dataset_name}_predictions", Domain.A, tuple(seqs), scale, src.image_size, outdir), outdir / "manifest.json")


def load_image_set(path: str | Path) -> list[Image]:
    """Images from a manifest file or every PNG in a folder (sorted by name)."""
    p = Path(path)
    if p.is_file():
        m = load_manifest(p)
        return [read_image(m.resolve(f)) for _, _, f, _ in iter_frames(m)]
    if p.is_dir():
        files = sorted(p.rglob("*.png"))
        if not files:
            raise ValidationError(f"no PNG images under {p}")
        return [read_image(f) for f in files]
    raise FileNotFoundError(f"image set not found: {p}")


def metrics_report(
    dataset: str,
    model_id: str,
    depth: DepthMetrics | None,
    per_frame: list[dict] | None,
    translation=None,
    cfg_hash: str = "",
) -> dict:
    return {
        "dataset": dataset,
        "model_id": model_id,
        "extractor_id": translation.extractor_id if translation is not None else None,
        "depth": None if depth is None else {"aggregate": depth.to_dict(), "per_frame": per_frame},
        "translation": None if translation is None else translation.to_dict(),
        "config_hash": cfg_hash,
    }


def write_json(path: str | Path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path


# --------------------------------------------------------------------------
# one ablation cell, end to end


def mean_hard_mi(samples, images: Sequence[Image], n_bins: int, spec: HistogramSpec) -> float:
    s = replace(spec, n_bins=n_bins)
    return float(np.mean([hard_mi(p.depth, im, s) for p, im in zip(samples, images)]))


def run_cell(cfg: ExperimentConfig) -> dict:
    """Translate (unless baseline), train depth, evaluate. Returns the metrics row."""
    cfg = resolve(cfg)
    run = prepare_run(cfg)
    a_path = _require(cfg.domain_a, "domain A")
    pairs = load_paired(load_manifest(a_path))
    row: dict = {"ablation_id": cfg.ablation_id, "seed": cfg.seed, "config_hash": config_hash(cfg)}
    if cfg.uses_translation:
        stage_train_translation(cfg, run)
        train_manifest = stage_translate_dataset(run / "checkpoints" / "G.pt", a_path, run / "images" / "translated")
    else:
        train_manifest = a_path
    train_pairs = load_paired(load_manifest(train_manifest))
    row["mi_translated"] = mean_hard_mi(pairs, [p.image for p in train_pairs], cfg.mi_eval_bins, cfg.histogram)
    if cfg.domain_b:
        ext = get_extractor(cfg.extractor)
        b_imgs = [s.image for s in load_unpaired(load_manifest(_require(cfg.domain_b, "domain B")))]
        tm = translation_metrics(b_imgs, [p.image for p in train_pairs], ext)
        row.update(fid_b_vs_train=tm.fid, kid_b_vs_train=tm.kid_mean, extractor_id=tm.extractor_id)
    result = train_depth(cfg.depth, train_pairs, out_dir=run)
    row["depth_final_loss"] = final_loss(result.curve)
    eval_path = _require(cfg.eval, "eval")
    agg, per_frame = evaluate_depth(result.model, cfg.depth.inference_size, eval_path, run / "images" / "predictions")
    row.update(agg.to_dict())
    write_json(run / "metrics" / "metrics.json", {**metrics_report(Path(eval_path).parent.name, cfg.ablation_id, agg, per_frame, None, row["config_hash"]), "cell": row})
    return row


ROW_COLUMNS = (
    "cell", "ablation_id", "seed", "status", "rmse", "abs_rel", "delta1", "delta2", "delta3",
    "mi_translated", "fid_b_vs_train", "kid_b_vs_train", "depth_final_loss", "config_hash", "error",
)


def suite_cells(base: ExperimentConfig, ablations: Sequence[str]) -> list[tuple[str, ExperimentConfig]]:
    """Expand ablation ids into named cells; ours_altB yields one cell per alternative target."""
    cells = []
    root = run_directory(base.output_dir)
    for ab in ablations:
        if ab not in ABLATIONS:
            raise ValidationError(f"unknown ablation {ab!r}")
        if ab == "ours_altB":
            for k, path in enumerate(base.alt_domain_b):
                name = f"ours_altB_{k}"
                cells.append((name, replace(base, ablation_id=ab, domain_b=path, output_dir=str(root / name))))
        else:
            cells.append((ab, replace(base, ablation_id=ab, output_dir=str(root / ab))))
    return cells


def _run_cell_safely(name_cfg):
    name, cfg = name_cfg
    try:
        return {"cell": name, "status": "ok", **run_cell(cfg)}
    except Exception as e:  # noqa: BLE001 - a failed cell is recorded, the suite goes on
        log.error("cell %s failed: %s", name, e)
        log.debug("%s", traceback.format_exc())
        return {"cell": name, "ablation_id": cfg.ablation_id, "seed": cfg.seed, "status": "failed", "error": f"{type(e).__name__}: {e}"}


def run_ablation_suite(base: ExperimentConfig, ablations: Sequence[str] = ("baseline", "ours", "ours_cg"), parallel: int = 1) -> tuple[list[dict], Path]:
    """Run every cell with the base seed; write ``metrics/ablation.{csv,json}``. Returns (rows, run dir)."""
    cells = suite_cells(base, ablations)
    root = run_directory(base.output_dir)
    (root / "metrics").mkdir(parents=True, exist_ok=True)
    (root / RESOLVED_NAME).write_text(dump_config(base))
    if parallel > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(parallel) as pool:
            rows = list(pool.map(_run_cell_safely, cells))
    else:
        rows = [_run_cell_safely(c) for c in cells]
    write_table(rows, root / "metrics")
    return rows, root


def write_table(rows: list[dict], metrics_dir: Path) -> None:
    metrics_dir.mkdir(parents=True, exist_ok=True)
    write_json(metrics_dir / "ablation.json", {r["cell"]: r for r in rows})
    with open(metrics_dir / "ablation.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(ROW_COLUMNS), extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


# --------------------------------------------------------------------------
# toy-scale presets


def write_toy_data(outdir: str | Path, n_pairs: int = 64, n_eval: int = 32, resolution: int = 64, seed: int = 0) -> dict[str, Path]:
    """Domain A, domain B and held-out eval manifests under ``outdir``."""
    outdir = Path(outdir)
    pairs, unpaired = generate_toy_dataset(n_pairs, resolution, seed)
    ev = generate_toy_eval(n_eval, resolution, seed + 1000)
    return {
        "domain_a": write_dataset(outdir / "domain_a", "toyA", pairs),
        "domain_b": write_dataset(outdir / "domain_b", "toyB", unpaired),
        "eval": write_dataset(outdir / "eval", "toyEval", ev),
    }


def toy_experiment_config(
    data: dict[str, Path], output_dir: str | Path, seed: int = 0, resolution: int = 64, **kw
) -> ExperimentConfig:
    """CPU-sized settings for 64x64 toy frames.

    Generators start at the identity map: trained from scratch for 30 epochs
    they stay blurry and end up further from domain B than the untranslated
    images. lambda_mi is raised to 10: with these small networks the weighted
    adversarial gradient is an order of magnitude larger than the MI gradient,
    and at weight 1 the structure term has no measurable effect.
    """
    translation = TranslationTrainConfig(
        epochs=30,
        batch_size=4,
        network=NetworkConfig(gen_width=16, gen_blocks=3, disc_width=16, disc_layers=3, identity_init=True),
        loss_weights=LossWeights(lambda_mi=10.0),
        checkpoint_every=0,
    )
    depth = DepthTrainConfig(
        epochs=40,
        learning_rate=1e-3,
        batch_size=8,
        augmentation=AugmentationSpec(crop_size=resolution * 7 // 8),
        inference_size=(resolution, resolution),
        network=DepthNetConfig(layers=(1, 1, 1, 1), width=16, label_scale=100.0),
    )
    base = dict(
        domain_a=str(Path(data["domain_a"]).resolve()),
        domain_b=str(Path(data["domain_b"]).resolve()),
        eval=str(Path(data["eval"]).resolve()),
        output_dir=str(output_dir),
        seed=seed,
        translation=translation,
        depth=depth,
        histogram=HistogramSpec(n_bins=32),
    )
    base.update(kw)
    return ExperimentConfig(**base)
