"""``sim2real-depth`` command line.

Exit codes: 0 success, 1 internal error (or a failed --strict check),
2 usage or input error (bad flags, missing files, invalid data).
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import cv2
import numpy as np

from .checkpoint import CheckpointError
from .core import ValidationError
from .dataio.io import iter_frames, load_manifest, read_depth, read_image
from .depthnet import load_depth_model, predict_depth
from .experiment import (
    ABLATIONS,
    RESOLVED_NAME,
    dump_config,
    ExperimentConfig,
    apply_overrides,
    config_hash,
    evaluate_depth,
    final_loss,
    load_config,
    load_image_set,
    metrics_report,
    prepare_run,
    resolve,
    run_ablation_suite,
    run_directory,
    stage_train_depth,
    stage_train_translation,
    stage_translate_dataset,
    write_json,
    toy_experiment_config,
    write_toy_data,
)
from .eval import translation_metrics
from .eval.features import get_extractor

log = logging.getLogger("sim2real_depth")

USAGE_ERRORS = (FileNotFoundError, ValidationError, CheckpointError)
PANEL_COLORMAP = cv2.COLORMAP_VIRIDIS


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------
# config plumbing


PATH_ARGS = ("checkpoint", "manifest", "resume", "outdir")


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else ExperimentConfig()
    flags = {
        "domain_a": getattr(args, "domain_a", None),
        "domain_b": getattr(args, "domain_b", None),
        "eval": getattr(args, "eval", None),
        "ablation_id": getattr(args, "ablation", None),
        "output_dir": getattr(args, "output_dir", None),
        "seed": getattr(args, "seed", None),
    }
    cfg = replace(cfg, **{k: v for k, v in flags.items() if v is not None})
    if getattr(args, "set", None):
        cfg = apply_overrides(cfg, args.set)
    # snapshots must stay valid when re-run from another working directory
    absolute = {k: str(Path(getattr(cfg, k)).resolve()) for k in ("domain_a", "domain_b", "eval") if getattr(cfg, k)}
    cfg = replace(cfg, alt_domain_b=tuple(str(Path(p).resolve()) for p in cfg.alt_domain_b), **absolute)
    return resolve(cfg)


def _invocation(args, cfg: ExperimentConfig, names: tuple[str, ...]) -> dict:
    """Command arguments: flags win, otherwise values recorded by the same command in the loaded snapshot."""
    recorded = cfg.invocation if cfg.invocation.get("command") == args.command else {}
    inv = {"command": args.command}
    for name in names:
        value = getattr(args, name, None)
        if value in (None, False, []):
            value = recorded.get(name)
        if value is None:
            continue
        if name in PATH_ARGS:
            value = str(Path(value).resolve())
        elif name == "translation_metrics":
            value = [str(Path(v).resolve()) for v in value]
        inv[name] = value
    return inv


_file_handlers: list[logging.Handler] = []


def _attach_log(run: Path, name: str) -> None:
    h = logging.FileHandler(run / "logs" / f"{name}.log", mode="w")
    h.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    h.setLevel(logging.INFO)
    logging.getLogger().addHandler(h)
    _file_handlers.append(h)


def _common(p: argparse.ArgumentParser, data: bool = True) -> None:
    p.add_argument("--config", help="experiment TOML (a config.resolved.toml snapshot works too)")
    p.add_argument("--seed", type=int)
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key, e.g. translation.epochs=2")
    if data:
        p.add_argument("--output-dir", help="run directory (relative paths honour $SIM2REAL_DEPTH_OUTPUT_ROOT)")
        p.add_argument("--domain-a")
        p.add_argument("--domain-b")
        p.add_argument("--eval")
        p.add_argument("--ablation", choices=ABLATIONS)


def _existing(path: str | None, what: str) -> str:
    if path is None:
        raise UsageError(f"missing {what}")
    if not Path(path).exists():
        raise FileNotFoundError(f"{what} not found: {path}")
    return path


# --------------------------------------------------------------------------
# commands


def cmd_train_translate(args) -> int:
    cfg = _config(args)
    if cfg.ablation_id == "baseline":
        raise UsageError("the baseline ablation has no translation stage")
    cfg = replace(cfg, invocation=_invocation(args, cfg, ()))
    run = prepare_run(cfg)
    _attach_log(run, "train-translate")
    result = stage_train_translation(cfg, run)
    print(f"wrote {len(result.checkpoints)} checkpoints under {run / 'checkpoints'}")
    return 0


def cmd_translate_dataset(args) -> int:
    cfg = _config(args)
    inv = _invocation(args, cfg, ("checkpoint", "manifest", "outdir"))
    ckpt = _existing(inv.get("checkpoint"), "--checkpoint")
    manifest = _existing(inv.get("manifest"), "--manifest")
    if "outdir" not in inv:
        raise UsageError("missing --outdir")
    outdir = Path(inv["outdir"])
    out = stage_translate_dataset(ckpt, manifest, outdir)
    (outdir / RESOLVED_NAME).write_text(dump_config(replace(cfg, invocation=inv, output_dir=str(outdir))))
    print(f"wrote {out}")
    return 0


def cmd_train_depth(args) -> int:
    cfg = _config(args)
    inv = _invocation(args, cfg, ("manifest", "resume", "strict", "threshold"))
    manifest = _existing(inv.get("manifest") or cfg.domain_a, "training manifest (--manifest or domain_a)")
    cfg = replace(cfg, invocation=inv)
    run = prepare_run(cfg)
    _attach_log(run, "train-depth")
    resume = inv.get("resume")
    if resume is not None:
        _existing(resume, "--resume checkpoint")
    result = stage_train_depth(cfg, manifest, run, resume=resume)
    loss = final_loss(result.curve)
    print(f"final epoch loss {loss:.6g} mm^2; checkpoint {result.checkpoint}")
    if inv.get("strict"):
        threshold = inv.get("threshold", cfg.depth_loss_threshold)
        if threshold is None:
            raise UsageError("--strict needs --threshold or depth_loss_threshold in the config")
        if not loss < threshold:
            print(f"strict check failed: final loss {loss:.6g} >= threshold {threshold:.6g}", file=sys.stderr)
            return 1
    return 0


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    inv = _invocation(args, cfg, ("checkpoint", "manifest", "translation_metrics", "dump_predictions", "predictions_from_gt"))
    cfg = replace(cfg, invocation=inv)
    run = prepare_run(cfg)
    _attach_log(run, "evaluate")
    from_gt = bool(inv.get("predictions_from_gt"))
    depth = per_frame = None
    model_id = "ground-truth" if from_gt else inv.get("checkpoint", "")
    eval_manifest = inv.get("manifest") or cfg.eval
    if eval_manifest is not None:
        _existing(eval_manifest, "eval manifest")
        if from_gt:
            model, size = None, cfg.depth.inference_size
        elif "checkpoint" in inv:
            model, dcfg = load_depth_model(_existing(inv["checkpoint"], "--checkpoint"))
            size = dcfg.inference_size
        else:
            raise UsageError("evaluate needs --checkpoint (or --predictions-from-gt) for depth metrics")
        dump = run / "images" / "predictions" if inv.get("dump_predictions") else None
        depth, per_frame = evaluate_depth(model, size, eval_manifest, dump, from_gt)
    tm = None
    if inv.get("translation_metrics"):
        ext = get_extractor(cfg.extractor)
        set_a, set_b = (load_image_set(p) for p in inv["translation_metrics"])
        tm = translation_metrics(set_a, set_b, ext)
    if depth is None and tm is None:
        raise UsageError("nothing to evaluate: give --manifest/--eval and/or --translation-metrics")
    dataset = Path(eval_manifest).parent.name if eval_manifest else "images"
    report = metrics_report(dataset, model_id, depth, per_frame, tm, config_hash(cfg))
    out = write_json(run / "metrics" / "metrics.json", report)
    if depth is not None:
        print("depth: " + " ".join(f"{k}={v:.6g}" for k, v in depth.to_dict().items()))
    if tm is not None:
        print(f"translation: fid={tm.fid:.6g} kid={tm.kid_mean:.6g}±{tm.kid_std:.3g} ({tm.extractor_id})")
    print(f"wrote {out}")
    return 0


def _colorize(values: np.ndarray, valid: np.ndarray, lo: float, hi: float) -> np.ndarray:
    scaled = np.zeros(values.shape, np.uint8)
    if hi > lo:
        scaled = np.clip(np.rint((values - lo) / (hi - lo) * 255), 0, 255).astype(np.uint8)
    rgb = cv2.cvtColor(cv2.applyColorMap(scaled, PANEL_COLORMAP), cv2.COLOR_BGR2RGB)
    rgb[~valid] = 0
    return rgb


def _label(panel: np.ndarray, text: str) -> np.ndarray:
    band = np.full((16, panel.shape[1], 3), 255, np.uint8)
    cv2.putText(band, text[: max(panel.shape[1] // 7, 1)], (2, 12), cv2.FONT_HERSHEY_PLAIN, 0.8, (0, 0, 0), 1, cv2.LINE_8)
    return np.concatenate([band, panel], 0)


def render_grid(image_rgb: np.ndarray, depths: list[tuple[str, np.ndarray, np.ndarray]]) -> np.ndarray:
    """Input panel followed by one colour-mapped panel per model, sharing the row's depth range."""
    valid_vals = [d[m] for _, d, m in depths if m.any()]
    lo = float(min(v.min() for v in valid_vals)) if valid_vals else 0.0
    hi = float(max(v.max() for v in valid_vals)) if valid_vals else 1.0
    panels = [_label(image_rgb, "Input")]
    panels += [_label(_colorize(d, m, lo, hi), name) for name, d, m in depths]
    sep = np.full((panels[0].shape[0], 2, 3), 255, np.uint8)
    row = [panels[0]]
    for p in panels[1:]:
        row += [sep, p]
    return np.concatenate(row, 1)


def _parse_sources(items: list[str]) -> list[tuple[str, str]]:
    out = []
    for item in items:
        if "=" not in item:
            raise UsageError(f"model source {item!r} must be LABEL=PATH")
        label, path = item.split("=", 1)
        out.append((label, path))
    return out


def cmd_compare_grid(args) -> int:
    manifest = load_manifest(args.manifest)
    sources = []
    for label, path in _parse_sources(args.model):
        if path.endswith(".pt"):
            model, dcfg = load_depth_model(path)
            sources.append((label, ("model", model, dcfg.inference_size)))
        else:
            pm = load_manifest(path)
            index = {(seq.sequence_id, seq.frame_indices[k]): pm.resolve(d) for seq, k, _, d in iter_frames(pm)}
            sources.append((label, ("dump", index, pm.depth_scale_mm)))
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = 0
    for seq, k, frame, _ in iter_frames(manifest):
        key = (seq.sequence_id, seq.frame_indices[k])
        frame_path = manifest.resolve(frame)
        if not frame_path.is_file():
            log.warning("skipping %s/%d: input frame %s is missing", *key, frame_path)
            continue
        image = read_image(frame_path)
        depths, missing = [], None
        for label, (kind, obj, extra) in sources:
            if kind == "model":
                pred = predict_depth(obj, image, extra)
            else:
                path = obj.get(key)
                if path is None or not Path(path).is_file():
                    missing = label
                    break
                pred = read_depth(path, extra)
            depths.append((label, pred.values, pred.valid_mask))
        if missing is not None:
            log.warning("skipping %s/%d: no prediction from %s", *key, missing)
            continue
        grid = render_grid(image.to_uint8(), depths)
        ok, buf = cv2.imencode(".png", cv2.cvtColor(grid, cv2.COLOR_RGB2BGR))
        (outdir / f"{seq.sequence_id}_{key[1]:06d}.png").write_bytes(buf.tobytes())
        written += 1
    print(f"wrote {written} grids to {outdir}")
    return 0


def cmd_ablation_suite(args) -> int:
    cfg = _config(args)
    if args.alt_domain_b:
        cfg = replace(cfg, alt_domain_b=tuple(args.alt_domain_b))
    rows, root = run_ablation_suite(cfg, args.ablations, parallel=args.parallel)
    for r in rows:
        if r["status"] == "ok":
            print(f"{r['cell']:>14}: rmse={r['rmse']:.4f} abs_rel={r['abs_rel']:.4f} d1={r['delta1']:.4f} mi={r['mi_translated']:.4f}")
        else:
            print(f"{r['cell']:>14}: FAILED {r['error']}")
    print(f"wrote {root / 'metrics' / 'ablation.csv'}")
    return 0


def cmd_toy_data(args) -> int:
    outdir = run_directory(args.outdir)
    paths = write_toy_data(outdir, args.pairs, args.eval_frames, args.resolution, args.seed)
    preset = toy_experiment_config(paths, "runs/toy", seed=args.seed, resolution=args.resolution)
    (outdir / "toy.toml").write_text(dump_config(preset))
    for k, p in paths.items():
        print(f"{k}: {p}")
    print(f"config: {outdir / 'toy.toml'}")
    return 0


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sim2real-depth", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-translate", help="train G, F, D_A, D_B")
    _common(p)
    p.set_defaults(func=cmd_train_translate)

    p = sub.add_parser("translate-dataset", help="translate a domain-A manifest with an A->B generator")
    _common(p, data=False)
    p.add_argument("--checkpoint", help="A->B generator checkpoint (G.pt)")
    p.add_argument("--manifest", help="domain-A manifest")
    p.add_argument("--outdir", help="output dataset directory")
    p.set_defaults(func=cmd_translate_dataset)

    p = sub.add_parser("train-depth", help="train the depth network on a paired manifest")
    _common(p)
    p.add_argument("--manifest", help="paired manifest (defaults to the config's domain_a)")
    p.add_argument("--resume", help="depth checkpoint to continue from")
    p.add_argument("--strict", action="store_true", help="exit 1 if the final loss is not below the threshold")
    p.add_argument("--threshold", type=float)
    p.set_defaults(func=cmd_train_depth)

    p = sub.add_parser("evaluate", help="depth metrics and/or FID/KID")
    _common(p)
    p.add_argument("--checkpoint", help="depth checkpoint")
    p.add_argument("--manifest", help="eval manifest (defaults to the config's eval)")
    p.add_argument("--translation-metrics", nargs=2, metavar=("SET_A", "SET_B"), help="two image folders or manifests")
    p.add_argument("--dump-predictions", action="store_true", help="write 16-bit PNG predictions under images/predictions")
    p.add_argument("--predictions-from-gt", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare-grid", help="input | model depth panels, one PNG per frame")
    p.add_argument("--manifest", required=True, help="frames to show")
    p.add_argument("--model", action="append", required=True, metavar="LABEL=PATH", help="depth checkpoint (.pt) or prediction manifest")
    p.add_argument("--outdir", required=True)
    p.set_defaults(func=cmd_compare_grid)

    p = sub.add_parser("ablation-suite", help="run ablation cells and tabulate metrics")
    _common(p)
    p.add_argument("--ablations", nargs="+", default=["baseline", "ours", "ours_cg"], choices=ABLATIONS)
    p.add_argument("--alt-domain-b", nargs="*", help="target manifests for ours_altB cells")
    p.add_argument("--parallel", type=int, default=1, help="worker processes (cells are independent)")
    p.set_defaults(func=cmd_ablation_suite)

    p = sub.add_parser("toy-data", help="write toy domain A / domain B / eval datasets")
    p.add_argument("--outdir", required=True)
    p.add_argument("--pairs", type=int, default=64)
    p.add_argument("--eval-frames", type=int, default=32)
    p.add_argument("--resolution", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_toy_data)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    root = logging.getLogger()
    root.setLevel(logging.INFO)
    console = logging.StreamHandler()
    console.setLevel(logging.INFO if args.verbose else logging.WARNING)
    console.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root.addHandler(console)
    try:
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except USAGE_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001
        log.exception("internal error")
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    finally:
        for h in [console, *_file_handlers]:
            root.removeHandler(h)
            h.close()
        _file_handlers.clear()


if __name__ == "__main__":
    sys.exit(main())
