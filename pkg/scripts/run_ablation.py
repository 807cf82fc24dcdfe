"""Run the C1-C5 loss ablation over one or more seeds and tabulate held-out R2.

usage: python3 scripts/run_ablation.py [--seeds 0 1 2] [--epochs 200] [--out DIR]
Writes results_seed<S>.csv per seed and summary.csv (mean R2 per config and foot).
"""
import argparse
import csv
import time
from pathlib import Path

import numpy as np

from grfpinn import simgen, trainer
from grfpinn.config import load_config


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--epochs", type=int, default=200)
    ap.add_argument("--out", default="runs/ablation")
    ap.add_argument("--override", action="append", default=[])
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    table = {}
    for seed in args.seeds:
        cfg = load_config(None, [f"run.seed={seed}", f"train.epochs={args.epochs}", *args.override])
        splits = simgen.build_splits(cfg.data)
        t0 = time.perf_counter()
        rows = trainer.run_ablation_suite(cfg.train, splits["train"], splits["val"], splits["test"],
                                          cfg.model, cfg.loss)
        print(f"seed {seed}: {(time.perf_counter() - t0) / 60:.1f} min", flush=True)
        trainer.write_results(rows, out / f"results_seed{seed}.csv")
        for r in rows:
            table.setdefault((r["config"], r["foot"]), []).append(r["r2"])
            print(f"  {r['config']} {r['foot']} r2 {r['r2']:.4f}", flush=True)
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["config", "foot", "r2_mean", "r2_min", "r2_max", "seeds"])
        for (tag, foot), v in table.items():
            w.writerow([tag, foot, f"{np.mean(v):.5f}", f"{min(v):.5f}", f"{max(v):.5f}", len(v)])
    print((out / "summary.csv").read_text())


if __name__ == "__main__":
    main()
