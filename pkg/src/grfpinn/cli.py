"""Command-line entry point: ``grfpinn <command> [options]``.

Commands: gen-data, train, ablate, eval, acoustics, inspect-model. Every
command that writes artifacts also writes ``effective_config.ini`` next to
them; feeding that file back with ``--config`` reproduces the run.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import simgen, trainer
from .config import ConfigError, RunConfig, load_config, write_snapshot
from .metrics import mnl, pnl, read_wav, spl_series
from .reward import AlphaSchedule, impact_reward

log = logging.getLogger("grfpinn")


class CommandError(RuntimeError):
    """Failure that maps to a nonzero exit status with a one-line message."""


# ------------------------------------------------------------------- helpers

def _config(args) -> RunConfig:
    overrides = list(args.override or [])
    for key, flag in (("run.seed", "seed"), ("run.data_dir", "data"), ("run.out_dir", "out"),
                      ("run.checkpoint", "checkpoint"), ("run.ablation", "ablation"),
                      ("run.split", "split")):
        val = getattr(args, flag, None)
        if val is not None:
            overrides.append(f"{key}={val}")
    if getattr(args, "modes", None):
        overrides.append(f"data.modes={args.modes}")
    if getattr(args, "presets", None):
        overrides.append(f"data.presets={args.presets}")
    if getattr(args, "epochs", None) is not None:
        overrides.append(f"train.epochs={args.epochs}")
    if getattr(args, "alpha", None) is not None:
        overrides.append(f"reward.alpha={args.alpha}")
    cfg = load_config(args.config, overrides)
    print(f"root seed: {cfg.run.seed}", file=sys.stderr)
    return cfg


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.run.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CommandError(f"cannot create output directory {out}: {exc}") from None
    return out


def _load(cfg: RunConfig, split: str) -> simgen.Dataset:
    try:
        return simgen.load_split(cfg.run.data_dir, split)
    except FileNotFoundError as exc:
        raise CommandError(str(exc)) from None


def _progress(row: dict) -> None:
    print(f"epoch {row['epoch']:4d}  train {row['train_total']:.6g}  val {row['val_total']:.6g}",
          file=sys.stderr, flush=True)


def _write_report(path: Path, report: dict) -> None:
    path.write_text(json.dumps(report, indent=1, sort_keys=True))


def _print_table(report: dict, label: str = "pooled") -> None:
    print(f"{'group':>10} {'foot':>4} {'rmse':>10} {'mae':>10} {'r2':>8}")
    groups = [(label, report["pooled"])] + sorted(report.get("modes", {}).items())
    for name, rep in groups:
        for foot in ("L", "R"):
            m = rep[foot]
            print(f"{name:>10} {foot:>4} {m['rmse']:10.4f} {m['mae']:10.4f} {m['r2']:8.4f}")


def _check_history(history: list, epochs: int, best_val: float) -> None:
    if len(history) != epochs:
        raise CommandError(f"self-check failed: {len(history)} history rows for {epochs} epochs")
    if best_val > history[-1]["val_total"]:
        raise CommandError("self-check failed: selected checkpoint has higher val loss than the last epoch")


# ------------------------------------------------------------------ commands

def cmd_gen_data(args) -> int:
    cfg = _config(args)
    # for gen-data, --out names the dataset directory
    out = Path(cfg.run.out_dir if args.out is not None else cfg.run.data_dir)
    cfg.run.data_dir = str(out)
    counts = simgen.emit_dataset(cfg.data, out)
    # self-check: the residual and sign invariants on what was written
    for split in counts:
        ds = simgen.load_split(out, split)
        worst = simgen.max_record_residual(ds)
        if not worst < simgen.RESIDUAL_TOL:
            raise CommandError(f"self-check failed: {split} residual {worst:.3g} exceeds {simgen.RESIDUAL_TOL}")
        if np.any(ds.f < 0):
            raise CommandError(f"self-check failed: negative force in {split}")
    write_snapshot(cfg, out / "effective_config.ini", "gen-data")
    for split, n in counts.items():
        print(f"{split}: {n} records")
    return 0


def _train_one(cfg: RunConfig, tag: str, train_ds, val_ds, out: Path, suffix: str = ""):
    res = trainer.train(cfg.train, trainer.AblationConfig(tag), train_ds, val_ds, cfg.model, cfg.loss,
                        progress=_progress)
    _check_history(res.history, cfg.train.epochs, res.best_val)
    trainer.write_history(res.history, out / f"history{suffix}.csv")
    trainer.save_checkpoint(res.predictor, out / f"checkpoint{suffix}.json", seed=cfg.run.seed,
                            extra={"best_epoch": res.best_epoch, "best_val": res.best_val})
    return res


def cmd_train(args) -> int:
    cfg = _config(args)
    out = _out_dir(cfg)
    tr, va, te = _load(cfg, "train"), _load(cfg, "val"), _load(cfg, "test")
    write_snapshot(cfg, out / "effective_config.ini", "train")
    try:
        res = _train_one(cfg, cfg.run.ablation, tr, va, out)
    except trainer.TrainingDiverged as exc:
        trainer.write_history(exc.history, out / "history.csv")
        raise CommandError(f"training diverged: {exc}") from None
    report = trainer.evaluate(res.predictor, te, per_mode=True)
    report["best_epoch"] = res.best_epoch
    _write_report(out / "report.json", report)
    _print_table(report)
    return 0


def cmd_ablate(args) -> int:
    cfg = _config(args)
    out = _out_dir(cfg)
    tr, va, te = _load(cfg, "train"), _load(cfg, "val"), _load(cfg, "test")
    write_snapshot(cfg, out / "effective_config.ini", "ablate")
    rows = []
    for tag in trainer.ABLATIONS:
        print(f"== {tag}", file=sys.stderr)
        res = _train_one(cfg, tag, tr, va, out, suffix=f"_{tag}")
        rep = trainer.evaluate(res.predictor, te)["pooled"]
        rows += [{"config": tag, "foot": foot, **rep[foot]} for foot in ("L", "R")]
    trainer.write_results(rows, out / "results.csv")
    print(f"{'config':>6} {'foot':>4} {'rmse':>10} {'mae':>10} {'r2':>8}")
    for r in rows:
        print(f"{r['config']:>6} {r['foot']:>4} {r['rmse']:10.4f} {r['mae']:10.4f} {r['r2']:8.4f}")
    return 0


def cmd_eval(args) -> int:
    cfg = _config(args)
    if not cfg.run.checkpoint:
        raise CommandError("eval needs --checkpoint")
    ds = _load(cfg, cfg.run.split)
    try:
        pred = trainer.load_checkpoint(cfg.run.checkpoint, expected_n=ds.n)
    except (ValueError, FileNotFoundError) as exc:
        raise CommandError(str(exc)) from None
    report = trainer.evaluate(pred, ds, per_mode=args.per_mode)
    report["split"] = cfg.run.split
    f_pred, idx = trainer.predict_dataset(pred, ds)
    if np.any(f_pred < 0):
        raise CommandError("self-check failed: negative predicted force")
    print(f"ablation: {pred.ablation}")
    _print_table(report)
    if args.out is not None:
        out = _out_dir(cfg)
        write_snapshot(cfg, out / "effective_config.ini", "eval")
        _write_report(out / "eval_report.json", report)
        cols = ["index", "tick", "mode", "preset", "fz_L_pred", "fz_R_pred", "fz_L", "fz_R"]
        alpha_of = None
        if args.reward:
            cols.append("r_impact")
            sched = AlphaSchedule.parse(cfg.reward.alpha_schedule) if cfg.reward.alpha_schedule else None
            alpha_of = (lambda k: sched(k)) if sched else (lambda k: cfg.reward.alpha)
        with open(out / "predictions.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for k, (i, fp) in enumerate(zip(idx, f_pred)):
                row = [int(i), int(ds.tick[i]), ds.mode[i], ds.preset[i], repr(float(fp[0])),
                       repr(float(fp[1])), repr(float(ds.f[i, 0])), repr(float(ds.f[i, 1]))]
                if alpha_of is not None:
                    row.append(repr(impact_reward(fp, alpha_of(k))))
                w.writerow(row)
    if args.reward:
        r = np.array([impact_reward(fp, cfg.reward.alpha) for fp in f_pred])
        print(f"r_impact (alpha={cfg.reward.alpha:g}): mean {r.mean():.6g}  min {r.min():.6g}")
    return 0


def _level_report(path, cfg: RunConfig):
    try:
        seg = read_wav(path, gain=cfg.acoustics.gain)
    except ValueError as exc:
        raise CommandError(str(exc)) from None
    spl, starts = spl_series(seg, cfg.acoustics.frame_ms, cfg.acoustics.hop_ms)
    return spl, starts, mnl(spl, energy=cfg.acoustics.energy_mean), pnl(spl)


def cmd_acoustics(args) -> int:
    cfg = _config(args)
    mean_kind = "energy-mean" if cfg.acoustics.energy_mean else "dB-mean"
    meta = (f"# A-weighting: IEC 61672 frequency-domain, periodic Hann taper; frame {cfg.acoustics.frame_ms} ms, "
            f"hop {cfg.acoustics.hop_ms} ms; gain {cfg.acoustics.gain} Pa/FS; MNL {mean_kind}")
    if args.compare:
        a, b = args.compare
        _, _, mnl_a, pnl_a = _level_report(a, cfg)
        _, _, mnl_b, pnl_b = _level_report(b, cfg)
        print(meta)
        print("# positive delta means the second file is quieter")
        print("file,mnl_dba,pnl_dba")
        print(f"{a},{mnl_a:.4f},{pnl_a:.4f}")
        print(f"{b},{mnl_b:.4f},{pnl_b:.4f}")
        print(f"delta_mnl_db,{mnl_a - mnl_b:.4f}")
        print(f"delta_pnl_db,{pnl_a - pnl_b:.4f}")
        return 0
    if not args.wav:
        raise CommandError("acoustics needs a WAV file or --compare A B")
    spl, starts, m, p = _level_report(args.wav, cfg)
    lines = [meta, "frame_start_s,spl_dba"]
    lines += [f"{t:.6f},{v:.4f}" for t, v in zip(starts, spl)]
    lines += ["mnl_dba,pnl_dba", f"{m:.4f},{p:.4f}"]
    if args.out is not None:
        out = _out_dir(cfg)
        (out / (Path(args.wav).stem + "_spl.csv")).write_text("\n".join(lines) + "\n")
        write_snapshot(cfg, out / "effective_config.ini", "acoustics")
    print("\n".join(lines if args.frames else [meta] + lines[-2:]))
    return 0


def cmd_inspect_model(args) -> int:
    path = args.checkpoint
    if path is None:
        raise CommandError("inspect-model needs --checkpoint")
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CommandError(f"cannot read checkpoint {path}: {exc}") from None
    params = doc.get("params", {})
    summary = {k: doc.get(k) for k in ("version", "n", "grid", "model", "norm_stats", "ablation", "seed", "extra")}
    summary["parameters"] = {k: v["shape"] for k, v in params.items()}
    summary["parameter_count"] = int(sum(np.prod(v["shape"]) for v in params.values()))
    print(json.dumps(summary, indent=1))
    return 0


# -------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="grfpinn", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=True, out=True):
        sp.add_argument("--config", help="key = value config file")
        sp.add_argument("--override", action="append", metavar="SECTION.KEY=VALUE",
                        help="override one config value (repeatable)")
        sp.add_argument("--seed", type=int, help="root seed")
        if data:
            sp.add_argument("--data", help="dataset directory")
        if out:
            sp.add_argument("--out", help="output directory")

    g = sub.add_parser("gen-data", help="emit the synthetic dataset")
    common(g, data=False)
    g.add_argument("--modes", help="comma list of motion modes")
    g.add_argument("--presets", help="comma list of footwear presets")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train one configuration")
    common(t)
    t.add_argument("--ablation", choices=list(trainer.ABLATIONS))
    t.add_argument("--epochs", type=int)
    t.set_defaults(func=cmd_train)

    a = sub.add_parser("ablate", help="train C1..C5 and tabulate test metrics")
    common(a)
    a.add_argument("--epochs", type=int)
    a.set_defaults(func=cmd_ablate)

    e = sub.add_parser("eval", help="metrics of a checkpoint on a split")
    common(e)
    e.add_argument("--checkpoint")
    e.add_argument("--split", choices=list(simgen.SPLITS))
    e.add_argument("--per-mode", action="store_true", help="one row per motion mode")
    e.add_argument("--reward", action="store_true", help="report per-tick impact reward")
    e.add_argument("--alpha", type=float, help="impact reward scale (1/N^2)")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("acoustics", help="A-weighted SPL, MNL and PNL of WAV files")
    common(s, data=False)
    s.add_argument("wav", nargs="?")
    s.add_argument("--compare", nargs=2, metavar=("A", "B"), help="delta = A - B; positive: B quieter")
    s.add_argument("--frames", action="store_true", help="print the per-frame table")
    s.set_defaults(func=cmd_acoustics)

    i = sub.add_parser("inspect-model", help="print checkpoint metadata")
    i.add_argument("--checkpoint")
    i.set_defaults(func=cmd_inspect_model)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CommandError, ConfigError, OSError, ValueError, trainer.TrainingDiverged) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
