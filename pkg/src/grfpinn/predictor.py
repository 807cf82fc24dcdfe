"""Full GRF predictor and its four-term training loss."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import diffcore as dc
from .diffcore import ShapeError, Tensor
from .dynamics import (DlsConfig, InertiaHead, InputAffine, PotentialHead, coriolis_from_derivatives,
                       contact_generalized_force, dls_matrix, project_nonneg)
from .kan import SplineGrid
from .seqnet import HISTORY, SequenceNet

__all__ = [
    "NormStats",
    "LossWeights",
    "ModelConfig",
    "GrfPredictor",
    "SequenceBatch",
    "LossTerms",
    "contact_mask",
    "normalize_force",
    "denormalize_force",
    "loss",
]


@dataclass(frozen=True)
class NormStats:
    """Per-foot mean / std of the ground-truth normal force (N)."""

    mu_f: tuple
    sigma_f: tuple

    def __post_init__(self):
        mu = np.asarray(self.mu_f, dtype=np.float64)
        sd = np.asarray(self.sigma_f, dtype=np.float64)
        if mu.shape != (2,) or sd.shape != (2,):
            raise ValueError("NormStats needs two-foot mean and std")
        if not np.all(sd > 0):
            raise ValueError(f"force std must be > 0 per foot, got {sd.tolist()}")
        object.__setattr__(self, "mu_f", tuple(float(v) for v in mu))
        object.__setattr__(self, "sigma_f", tuple(float(v) for v in sd))

    @property
    def mu(self) -> np.ndarray:
        return np.array(self.mu_f)

    @property
    def sigma(self) -> np.ndarray:
        return np.array(self.sigma_f)

    @classmethod
    def from_forces(cls, f: np.ndarray) -> "NormStats":
        return cls(tuple(f.mean(axis=0)), tuple(f.std(axis=0)))


def normalize_force(f, stats: NormStats):
    if isinstance(f, Tensor):
        return dc.mul(dc.sub(f, stats.mu), 1.0 / stats.sigma)
    return (np.asarray(f, dtype=np.float64) - stats.mu) / stats.sigma


def denormalize_force(f_tilde, stats: NormStats):
    return np.asarray(f_tilde, dtype=np.float64) * stats.sigma + stats.mu


def contact_mask(f_gt, threshold: float = 10.0) -> np.ndarray:
    """1 where the foot carries at least ``threshold`` newtons (boundary counts)."""
    if not threshold > 0:
        raise ValueError("contact threshold must be > 0")
    return (np.asarray(f_gt, dtype=np.float64) >= threshold).astype(np.float64)


@dataclass(frozen=True)
class LossWeights:
    # dyn and smooth act on raw N.m and N residuals while grf is normalized; their defaults are
    # the nominal 0.1 and 0.01 divided by sigma_f^2 (sigma_f ~ 150 N on the default data)
    grf: float = 1.0
    dyn: float = 4.4e-6
    swing: float = 0.1
    smooth: float = 4.4e-7

    def __post_init__(self):
        for k in ("grf", "dyn", "swing", "smooth"):
            if getattr(self, k) < 0:
                raise ValueError(f"loss weight {k} must be >= 0")

    def as_dict(self) -> dict:
        return {"grf": self.grf, "dyn": self.dyn, "swing": self.swing, "smooth": self.smooth}


@dataclass
class ModelConfig:
    n: int = 7
    kan_hidden: tuple = (16,)
    potential_hidden: tuple = (16,)
    grid_size: int = 8
    degree: int = 3
    inertia_eps: float = 1e-3
    dls_damping: float = 0.05
    contact_threshold: float = 10.0
    seq_channels: int = 64
    seq_arch: str = "tcn"
    # output scales for tau_eff and V; None = mean total vertical force of the
    # training split (~ body weight), resolved when the predictor is built
    torque_scale: float | None = None
    potential_scale: float | None = None
    init_seed: int = 0

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        for k in ("kan_hidden", "potential_hidden"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


@dataclass
class SequenceBatch:
    """B sequences of S ticks; frames carry the 5-frame history of the first tick.

    frames: raw (B, S + 5, 3n); Jn: (B, S, 2, n); f_gt: (B, S, 2).
    """

    frames: np.ndarray
    Jn: np.ndarray
    f_gt: np.ndarray | None = None

    @property
    def ticks(self) -> int:
        return self.frames.shape[1] - (HISTORY - 1)


class GrfPredictor:
    """KAN inertia/potential heads + Sequence-Net + DLS recovery."""

    def __init__(self, cfg: ModelConfig, stats: NormStats, feature_min, feature_max):
        force_scale = float(np.sum(stats.mu))
        if cfg.torque_scale is None or cfg.potential_scale is None:
            cfg = replace(cfg, torque_scale=cfg.torque_scale or force_scale,
                          potential_scale=cfg.potential_scale or force_scale)
        self.cfg = cfg
        n = cfg.n
        self.n = n
        self.stats = stats
        self.affine = InputAffine(feature_min, feature_max)
        if self.affine.lo.shape != (3 * n,):
            raise ShapeError(f"feature range must have {3 * n} entries, got {self.affine.lo.shape}")
        q_aff = InputAffine(self.affine.lo[:n], self.affine.hi[:n])
        rng = np.random.default_rng(cfg.init_seed)
        grid = SplineGrid(cfg.degree, cfg.grid_size)
        self.dls = DlsConfig(cfg.dls_damping)
        self.inertia = InertiaHead(n, cfg.kan_hidden, grid, cfg.inertia_eps, q_aff, rng)
        self.potential = PotentialHead(n, cfg.potential_hidden, grid, q_aff, rng, cfg.potential_scale)
        self.seqnet = SequenceNet(n, cfg.seq_channels, cfg.seq_arch, rng, cfg.torque_scale)
        self.ablation = "C1"
        self.frozen = False

    # -- parameters -------------------------------------------------------
    def parameters(self) -> dict[str, Tensor]:
        ps = self.inertia.parameters() + self.potential.parameters() + self.seqnet.parameters()
        return {p.name: p for p in ps}

    def freeze(self) -> "GrfPredictor":
        for p in self.parameters().values():
            p.requires_grad = False
        self.frozen = True
        return self

    def unfreeze(self) -> "GrfPredictor":
        for p in self.parameters().values():
            p.requires_grad = True
        self.frozen = False
        return self

    # -- forward ----------------------------------------------------------
    def forward(self, frames: np.ndarray, Jn: np.ndarray) -> dict:
        """Per-tick predictions for raw frames (B, S + 5, 3n) and Jn (B, S, 2, n).

        Returns tensors ``f_pred`` (B, S, 2), ``f_raw`` and ``tau_c`` (B, S, n).
        """
        frames = np.asarray(frames, dtype=np.float64)
        n = self.n
        if frames.ndim != 3 or frames.shape[2] != 3 * n or frames.shape[1] < HISTORY:
            raise ShapeError(f"frames must be (B, S+{HISTORY - 1}, {3 * n}), got {frames.shape}")
        B, T, _ = frames.shape
        S = T - (HISTORY - 1)
        Jn = np.asarray(Jn, dtype=np.float64)
        if Jn.shape != (B, S, 2, n):
            raise ShapeError(f"contact Jacobians must be {(B, S, 2, n)}, got {Jn.shape}")
        tau_eff = self.seqnet.forward_frames(self.affine(frames))          # (B, S, n)
        cur = frames[:, HISTORY - 1:, :].reshape(B * S, 3 * n)
        q, qd, qdd = cur[:, :n], cur[:, n:2 * n], cur[:, 2 * n:]
        M, dM = self.inertia.evaluate(q)
        C = coriolis_from_derivatives(dM, qd)
        _, G = self.potential.evaluate(q)
        tau_c = contact_generalized_force(M, C, G, qdd, qd, dc.reshape(tau_eff, (B * S, n)))
        D = dls_matrix(Jn.reshape(B * S, 2, n), self.dls.damping)
        f_raw = dc.einsum("nfi,ni->nf", D, tau_c)
        f_pred = project_nonneg(f_raw)
        return {
            "f_pred": dc.reshape(f_pred, (B, S, 2)),
            "f_raw": dc.reshape(f_raw, (B, S, 2)),
            "tau_c": dc.reshape(tau_c, (B, S, n)),
        }

    def predict(self, window, J_n) -> np.ndarray:
        """Force (2,) for one raw (6, 3n) window; dynamics from the newest frame."""
        w = np.asarray(window, dtype=np.float64)
        if w.shape != (HISTORY, 3 * self.n):
            raise ShapeError(f"window must have shape ({HISTORY}, {3 * self.n}), got {w.shape}")
        J = np.asarray(J_n, dtype=np.float64)
        if J.shape != (2, self.n):
            raise ShapeError(f"J_n must have shape (2, {self.n}), got {J.shape}")
        return self.forward(w[None], J[None, None])["f_pred"].value[0, 0]

    def predict_session(self, features: np.ndarray, Jn: np.ndarray, chunk: int = 2048) -> np.ndarray:
        """Forces for ticks 5.. of one contiguous session; returns (T - 5, 2)."""
        T = features.shape[0]
        out = []
        for start in range(HISTORY - 1, T, chunk):
            stop = min(T, start + chunk)
            fr = features[start - (HISTORY - 1):stop][None]
            out.append(self.forward(fr, Jn[start:stop][None])["f_pred"].value[0])
        return np.concatenate(out) if out else np.zeros((0, 2))


@dataclass
class LossTerms:
    total: Tensor
    grf: float
    dyn: float
    swing: float
    smooth: float
    parts: dict = field(default_factory=dict, repr=False)

    def as_dict(self) -> dict:
        return {"total": float(self.total.value), "grf": self.grf, "dyn": self.dyn,
                "swing": self.swing, "smooth": self.smooth}


def loss(pred: GrfPredictor, batch: SequenceBatch, weights: LossWeights) -> LossTerms:
    """Weighted sum of GRF regression, dynamics residual, swing and smoothing terms.

    Reductions are means over sequences and ticks of per-tick squared norms;
    the smoothing term averages the H - 1 consecutive differences per sequence
    and is 0 for single-tick sequences.
    """
    if batch.Jn is None:
        raise ValueError("loss needs the contact Jacobian for every tick")
    if batch.f_gt is None:
        raise ValueError("loss needs ground-truth forces")
    out = pred.forward(batch.frames, batch.Jn)
    f_pred, tau_c = out["f_pred"], out["tau_c"]
    stats = pred.stats
    B, S, _ = f_pred.shape
    inv_sigma = 1.0 / stats.sigma

    f_gt = np.asarray(batch.f_gt, dtype=np.float64)
    if f_gt.shape != (B, S, 2):
        raise ShapeError(f"ground-truth forces must be {(B, S, 2)}, got {f_gt.shape}")
    # normalized difference: (f_pred - mu)/sigma - (f_gt - mu)/sigma
    err = dc.mul(dc.sub(f_pred, f_gt), inv_sigma)
    l_grf = dc.scale(dc.sum(dc.square(err)), 1.0 / (B * S))

    resid = dc.sub(tau_c, dc.einsum("bsfi,bsf->bsi", batch.Jn, f_pred))
    l_dyn = dc.scale(dc.sum(dc.square(resid)), 1.0 / (B * S))

    swing = 1.0 - contact_mask(f_gt, pred.cfg.contact_threshold)
    # f~_pred - 0~ = f_pred / sigma
    l_swing = dc.scale(dc.sum(dc.square(dc.mul(f_pred, swing * inv_sigma))), 1.0 / (B * S))

    if S >= 2:
        diff = dc.sub(dc.index(f_pred, (slice(None), slice(1, S))),
                      dc.index(f_pred, (slice(None), slice(0, S - 1))))
        l_smooth = dc.scale(dc.sum(dc.square(diff)), 1.0 / (B * (S - 1)))
    else:
        l_smooth = dc.tensor(0.0)

    terms = {"grf": l_grf, "dyn": l_dyn, "swing": l_swing, "smooth": l_smooth}
    total = None
    for k, w in weights.as_dict().items():
        if w == 0:
            continue
        t = dc.scale(terms[k], w)
        total = t if total is None else dc.add(total, t)
    if total is None:
        total = dc.tensor(0.0)
    return LossTerms(total, float(l_grf.value), float(l_dyn.value), float(l_swing.value),
                     float(l_smooth.value), terms)
