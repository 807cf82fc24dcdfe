"""Train C1 on the default synthetic dataset and report held-out R2.

usage: python3 scripts/run_c1.py [--seed S] [--epochs E] [--out DIR] [--override sec.key=val ...]
"""
import argparse
import json
import time
from pathlib import Path

from grfpinn import simgen, trainer
from grfpinn.config import load_config, write_snapshot


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int)
    ap.add_argument("--out", default="runs/c1")
    ap.add_argument("--override", action="append", default=[])
    args = ap.parse_args()
    ov = [f"run.seed={args.seed}", *args.override]
    if args.epochs:
        ov.append(f"train.epochs={args.epochs}")
    cfg = load_config(None, ov)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_snapshot(cfg, out / "effective_config.ini", "run_c1")
    splits = simgen.build_splits(cfg.data)
    t0 = time.perf_counter()
    res = trainer.train(cfg.train, trainer.AblationConfig("C1"), splits["train"], splits["val"], cfg.model,
                        cfg.loss, progress=lambda r: print(r["epoch"], f"{r['val_total']:.5f}", flush=True))
    seconds = time.perf_counter() - t0
    rep = trainer.evaluate(res.predictor, splits["test"], per_mode=True)
    rep.update(best_epoch=res.best_epoch, train_seconds=seconds,
               train_split=trainer.evaluate(res.predictor, splits["train"])["pooled"])
    trainer.write_history(res.history, out / "history.csv")
    trainer.save_checkpoint(res.predictor, out / "checkpoint.json", seed=args.seed)
    (out / "report.json").write_text(json.dumps(rep, indent=2))
    print(json.dumps(rep["pooled"], indent=2), f"\n{seconds / 60:.1f} min")


if __name__ == "__main__":
    main()
