"""Multi-seed toy ablation: ours vs ours_cg (and optionally baseline).

    python scripts/run_toy_ablation.py --outdir runs/toy --seeds 0 1 2

For every seed this writes a fresh toy dataset, runs the ablation suite with
the CPU toy preset and collects one row per cell. FID(B, A) of the untranslated
source images is added per seed as the reference the translators should beat.
The combined table goes to ``<outdir>/toy_ablation.csv``.
"""

import argparse
import csv
import time
from pathlib import Path

from sim2real_depth.dataio.io import load_manifest, load_unpaired
from sim2real_depth.eval import RandomConvExtractor, fid
from sim2real_depth.experiment import run_ablation_suite, toy_experiment_config, write_toy_data

COLUMNS = ("seed", "cell", "rmse", "abs_rel", "delta1", "mi_translated", "fid_b_vs_train", "fid_b_vs_a", "status")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--outdir", default="runs/toy_ablation")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--ablations", nargs="+", default=["ours", "ours_cg"])
    ap.add_argument("--pairs", type=int, default=64)
    ap.add_argument("--eval-frames", type=int, default=32)
    ap.add_argument("--parallel", type=int, default=1)
    args = ap.parse_args()

    out = Path(args.outdir)
    extractor = RandomConvExtractor()
    table = []
    for seed in args.seeds:
        t = time.time()
        data = write_toy_data(out / f"seed{seed}" / "data", args.pairs, args.eval_frames, 64, seed)
        cfg = toy_experiment_config(data, out / f"seed{seed}" / "suite", seed=seed)
        rows, _ = run_ablation_suite(cfg, args.ablations, parallel=args.parallel)
        a = extractor([s.image for s in load_unpaired(load_manifest(data["domain_a"]))])
        b = extractor([s.image for s in load_unpaired(load_manifest(data["domain_b"]))])
        ref = fid(b, a)
        for r in rows:
            table.append({"seed": seed, **{k: r.get(k) for k in COLUMNS if k not in ("seed", "fid_b_vs_a")}, "fid_b_vs_a": ref})
        print(f"seed {seed} done in {time.time() - t:.0f}s")

    with open(out / "toy_ablation.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, COLUMNS)
        w.writeheader()
        w.writerows(table)

    print(f"\n{'seed':>4} {'cell':<10} {'rmse':>8} {'absrel':>7} {'d1':>6} {'MI':>7} {'FID(B,T)':>9} {'FID(B,A)':>9}")
    for r in table:
        if r["status"] != "ok":
            print(f"{r['seed']:>4} {r['cell']:<10} failed")
            continue
        mi = r["mi_translated"]
        fid_t = r["fid_b_vs_train"]
        print(
            f"{r['seed']:>4} {r['cell']:<10} {r['rmse']:8.3f} {r['abs_rel']:7.4f} {r['delta1']:6.3f} "
            f"{'-' if mi is None else f'{mi:.4f}':>7} {'-' if fid_t is None else f'{fid_t:.4f}':>9} {r['fid_b_vs_a']:9.4f}"
        )


if __name__ == "__main__":
    main()
