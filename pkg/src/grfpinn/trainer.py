"""Training loop, ablation harness and checkpoints."""
from __future__ import annotations

import copy
import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import diffcore as dc
from .metrics import grf_report
from .predictor import GrfPredictor, LossWeights, ModelConfig, NormStats, SequenceBatch, loss
from .seqnet import HISTORY
from .simgen import Dataset

__all__ = [
    "CHECKPOINT_VERSION",
    "ABLATIONS",
    "TrainConfig",
    "AblationConfig",
    "AdamState",
    "adam_step",
    "TrainingDiverged",
    "TrainResult",
    "sequence_starts",
    "epoch_starts",
    "make_batch",
    "build_predictor",
    "train",
    "evaluate",
    "run_ablation_suite",
    "save_checkpoint",
    "load_checkpoint",
    "write_history",
    "write_results",
]

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
ABLATIONS = {"C1": None, "C2": "grf", "C3": "dyn", "C4": "swing", "C5": "smooth"}


@dataclass
class TrainConfig:
    epochs: int = 200
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 256
    seq_len: int = HISTORY
    grad_clip: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.lr > 0:
            raise ValueError("learning rate must be > 0")
        if self.seq_len != HISTORY:
            raise ValueError(f"sequence length is fixed at H={HISTORY}")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")


@dataclass(frozen=True)
class AblationConfig:
    tag: str = "C1"

    def __post_init__(self):
        if self.tag not in ABLATIONS:
            raise ValueError(f"unknown ablation {self.tag!r}; expected one of {list(ABLATIONS)}")

    @property
    def removed(self) -> str | None:
        return ABLATIONS[self.tag]

    def apply(self, weights: LossWeights) -> LossWeights:
        d = weights.as_dict()
        if self.removed is not None:
            d[self.removed] = 0.0
        return LossWeights(**d)


# ------------------------------------------------------------------------ Adam

@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict, grads: dict, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    """Bias-corrected Adam update, in place on the arrays in ``params``."""
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for name, p in params.items():
        g = grads[name]
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return state


class TrainingDiverged(RuntimeError):
    def __init__(self, msg: str, history: list):
        super().__init__(msg)
        self.history = history


# --------------------------------------------------------------------- batches

def sequence_starts(ds: Dataset, seq_len: int = HISTORY) -> np.ndarray:
    """First-tick indices of every sequence lying fully inside one session.

    A sequence needs HISTORY - 1 earlier frames for its first window.
    """
    starts = []
    for lo, hi in ds.session_bounds():
        first = lo + HISTORY - 1
        last = hi - seq_len
        if last >= first:
            starts.append(np.arange(first, last + 1))
    return np.concatenate(starts) if starts else np.zeros(0, dtype=int)


def epoch_starts(ds: Dataset, rng: np.random.Generator | None = None,
                 seq_len: int = HISTORY) -> np.ndarray:
    """Non-overlapping tiling of every session into ``seq_len``-tick sequences.

    Each session gets its own offset in [0, seq_len) (random when ``rng`` is
    given, else 0), so over many epochs every stride-1 window is drawn while a
    single epoch visits each supervised tick at most once.
    """
    out = []
    for lo, hi in ds.session_bounds():
        first = lo + HISTORY - 1
        off = int(rng.integers(seq_len)) if rng is not None else 0
        s = np.arange(first + off, hi - seq_len + 1, seq_len)
        if s.size == 0 and hi - seq_len >= first:
            s = np.array([first])
        out.append(s)
    return np.concatenate(out) if out else np.zeros(0, dtype=int)


def make_batch(ds: Dataset, starts: np.ndarray, seq_len: int = HISTORY,
               features: np.ndarray | None = None) -> SequenceBatch:
    feats = ds.features if features is None else features
    frame_idx = starts[:, None] + np.arange(-(HISTORY - 1), seq_len)
    tick_idx = starts[:, None] + np.arange(seq_len)
    return SequenceBatch(feats[frame_idx], ds.Jn[tick_idx], ds.f[tick_idx])


def build_predictor(model_cfg: ModelConfig, meta: dict) -> GrfPredictor:
    ns = meta["norm_stats"]
    stats = NormStats(tuple(ns["mu_f"]), tuple(ns["sigma_f"]))
    if int(meta["n"]) != model_cfg.n:
        raise ValueError(f"model n={model_cfg.n} but dataset n={meta['n']}")
    return GrfPredictor(model_cfg, stats, meta["feature_min"], meta["feature_max"])


# ---------------------------------------------------------------------- train

@dataclass
class TrainResult:
    predictor: GrfPredictor
    history: list
    best_epoch: int
    best_val: float
    seconds: float


def _snapshot(pred: GrfPredictor) -> dict:
    return {k: p.value.copy() for k, p in pred.parameters().items()}


def _restore(pred: GrfPredictor, snap: dict) -> None:
    for k, p in pred.parameters().items():
        p.value[...] = snap[k]


def _mean_loss(pred: GrfPredictor, ds: Dataset, starts: np.ndarray, weights: LossWeights,
               seq_len: int, batch: int = 1024, features=None) -> dict:
    acc = {"total": 0.0, "grf": 0.0, "dyn": 0.0, "swing": 0.0, "smooth": 0.0}
    count = 0
    for i in range(0, len(starts), batch):
        s = starts[i:i + batch]
        terms = loss(pred, make_batch(ds, s, seq_len, features), weights).as_dict()
        for k in acc:
            acc[k] += terms[k] * len(s)
        count += len(s)
    return {k: v / max(count, 1) for k, v in acc.items()}


def train(cfg: TrainConfig, ablation: AblationConfig, train_ds: Dataset, val_ds: Dataset,
          model_cfg: ModelConfig | None = None, weights: LossWeights | None = None,
          predictor: GrfPredictor | None = None, progress=None) -> TrainResult:
    """Adam on the ablated loss; keeps the parameters with the lowest validation loss."""
    model_cfg = model_cfg or ModelConfig(n=train_ds.n)
    if predictor is None and model_cfg.n != train_ds.n:
        raise ValueError(f"model n={model_cfg.n} but dataset n={train_ds.n}")
    weights = ablation.apply(weights or LossWeights())
    pred = predictor or build_predictor(model_cfg, train_ds.meta)
    if pred.frozen:
        raise RuntimeError("predictor is frozen; unfreeze before training")
    pred.ablation = ablation.tag
    params = pred.parameters()
    arrays = {k: p.value for k, p in params.items()}
    state = AdamState()
    rng = np.random.default_rng(cfg.seed)
    va_starts = epoch_starts(val_ds, None, cfg.seq_len)
    if len(sequence_starts(train_ds, cfg.seq_len)) == 0 or len(va_starts) == 0:
        raise ValueError("no complete sequences in the training or validation split")
    tr_feats, va_feats = train_ds.features, val_ds.features

    history = []
    best = (np.inf, -1, None)
    t0 = time.perf_counter()
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(epoch_starts(train_ds, rng, cfg.seq_len))
        acc = {"total": 0.0, "grf": 0.0, "dyn": 0.0, "swing": 0.0, "smooth": 0.0}
        for i in range(0, len(order), cfg.batch_size):
            s = order[i:i + cfg.batch_size]
            batch = make_batch(train_ds, s, cfg.seq_len, tr_feats)
            with dc.Tape() as tape:
                terms = loss(pred, batch, weights)
            tape.backward(terms.total)
            grads = {k: p.grad for k, p in params.items()}
            norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
            if not np.isfinite(norm):
                bad = [k for k, g in grads.items() if not np.isfinite(g).all()]
                raise TrainingDiverged(f"non-finite gradient in {bad} at epoch {epoch}", history)
            if cfg.grad_clip and norm > cfg.grad_clip:
                grads = {k: g * (cfg.grad_clip / norm) for k, g in grads.items()}
            adam_step(arrays, grads, state, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
            for k, v in terms.as_dict().items():
                acc[k] += v * len(s)
        tr = {k: v / len(order) for k, v in acc.items()}
        va = _mean_loss(pred, val_ds, va_starts, weights, cfg.seq_len, features=va_feats)
        row = {"epoch": epoch, "train_total": tr["total"], "train_grf": tr["grf"],
               "train_dyn": tr["dyn"], "train_swing": tr["swing"], "train_smooth": tr["smooth"],
               "val_total": va["total"]}
        history.append(row)
        if not np.isfinite(va["total"]):
            raise TrainingDiverged(f"validation loss became {va['total']} at epoch {epoch}", history)
        if va["total"] < best[0]:
            best = (va["total"], epoch, _snapshot(pred))
        if progress is not None:
            progress(row)
        log.info("epoch %d train %.5g val %.5g", epoch, tr["total"], va["total"])
    _restore(pred, best[2])
    return TrainResult(pred, history, best[1], best[0], time.perf_counter() - t0)


# ------------------------------------------------------------------- evaluate

def predict_dataset(pred: GrfPredictor, ds: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Predictions for every tick that has a full history window.

    Returns (f_pred (N, 2), record indices (N,)).
    """
    feats = ds.features
    preds, idx = [], []
    for lo, hi in ds.session_bounds():
        if hi - lo < HISTORY:
            continue
        preds.append(pred.predict_session(feats[lo:hi], ds.Jn[lo:hi]))
        idx.append(np.arange(lo + HISTORY - 1, hi))
    return np.concatenate(preds), np.concatenate(idx)


def evaluate(pred: GrfPredictor, ds: Dataset, per_mode: bool = False) -> dict:
    f_pred, idx = predict_dataset(pred, ds)
    truth = ds.f[idx]
    report = {"pooled": grf_report(f_pred, truth), "ablation": pred.ablation, "ticks": int(len(idx))}
    if per_mode:
        modes = ds.mode[idx]
        report["modes"] = {m: grf_report(f_pred[modes == m], truth[modes == m])
                           for m in sorted(set(modes))}
    return report


# ------------------------------------------------------------------- ablation

def run_ablation_suite(cfg: TrainConfig, train_ds: Dataset, val_ds: Dataset, test_ds: Dataset,
                       model_cfg: ModelConfig | None = None, weights: LossWeights | None = None,
                       tags=tuple(ABLATIONS), progress=None, results: dict | None = None) -> list[dict]:
    """One model per configuration; rows of (config, foot, rmse, mae, r2)."""
    rows = []
    for tag in tags:
        if results is not None and tag in results:
            res = results[tag]
        else:
            res = train(cfg, AblationConfig(tag), train_ds, val_ds, model_cfg, weights, progress=progress)
            if results is not None:
                results[tag] = res
        rep = evaluate(res.predictor, test_ds)["pooled"]
        for foot in ("L", "R"):
            rows.append({"config": tag, "foot": foot, **rep[foot]})
    return rows


# ----------------------------------------------------------------- checkpoint

def save_checkpoint(pred: GrfPredictor, path, seed: int | None = None, extra: dict | None = None) -> None:
    params = pred.parameters()
    doc = {
        "version": CHECKPOINT_VERSION,
        "n": pred.n,
        "grid": {"degree": pred.cfg.degree, "grid_size": pred.cfg.grid_size, "lo": -1.0, "hi": 1.0},
        "model": pred.cfg.to_dict(),
        "norm_stats": {"mu_f": list(pred.stats.mu_f), "sigma_f": list(pred.stats.sigma_f)},
        "feature_min": pred.affine.lo.tolist(),
        "feature_max": pred.affine.hi.tolist(),
        "ablation": pred.ablation,
        "seed": seed,
        "params": {k: {"shape": list(p.shape), "values": p.value.ravel().tolist()}
                   for k, p in params.items()},
    }
    if extra:
        doc["extra"] = extra
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_checkpoint(path, expected_n: int | None = None) -> GrfPredictor:
    with open(path) as fh:
        doc = json.load(fh)
    version = doc.get("version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"checkpoint version {version} is not supported "
                         f"(this build reads version {CHECKPOINT_VERSION})")
    n = int(doc["n"])
    if expected_n is not None and n != expected_n:
        raise ValueError(f"checkpoint has n={n} but the data has n={expected_n}")
    cfg = ModelConfig.from_dict(doc["model"])
    stats = NormStats(tuple(doc["norm_stats"]["mu_f"]), tuple(doc["norm_stats"]["sigma_f"]))
    pred = GrfPredictor(cfg, stats, doc["feature_min"], doc["feature_max"])
    params = pred.parameters()
    if set(params) != set(doc["params"]):
        raise ValueError("checkpoint parameter set does not match the model architecture")
    for k, p in params.items():
        entry = doc["params"][k]
        if list(p.shape) != entry["shape"]:
            raise ValueError(f"parameter {k}: checkpoint shape {entry['shape']} vs model {list(p.shape)}")
        p.value[...] = np.array(entry["values"], dtype=np.float64).reshape(p.shape)
    pred.ablation = doc.get("ablation", "C1")
    pred.meta = {"seed": doc.get("seed"), "extra": doc.get("extra", {})}
    return pred.freeze()


def write_history(history: list, path) -> None:
    cols = ["epoch", "train_total", "train_grf", "train_dyn", "train_swing", "train_smooth", "val_total"]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for row in history:
            w.writerow({k: (repr(row[k]) if isinstance(row[k], float) else row[k]) for k in cols})


def write_results(rows: list, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["config", "foot", "rmse", "mae", "r2"])
        w.writeheader()
        for r in rows:
            w.writerow({k: r[k] for k in ("config", "foot", "rmse", "mae", "r2")})
