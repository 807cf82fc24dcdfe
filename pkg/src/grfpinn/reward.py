"""Impact-aware reward terms and the PD tracking law.

The RL loop itself lives elsewhere; these are the pure pieces it consumes
together with a frozen force predictor.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffcore import ShapeError

__all__ = [
    "DEFAULT_ALPHA",
    "PdGains",
    "ActionIncrement",
    "RewardTerms",
    "pd_torque",
    "impact_reward",
    "total_reward",
    "AlphaSchedule",
]

DEFAULT_ALPHA = 1e-4  # 1/N^2


def _diag(x, n: int | None, what: str) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 0:
        if n is None:
            raise ShapeError(f"{what}: scalar gain needs an explicit dimension")
        a = np.full(n, float(a))
    elif a.ndim == 2:
        if a.shape[0] != a.shape[1] or np.any(a - np.diag(np.diag(a))):
            raise ValueError(f"{what} must be a diagonal matrix")
        a = np.diag(a).copy()
    elif a.ndim != 1:
        raise ShapeError(f"{what} must be a vector of diagonal entries or a diagonal matrix")
    if not np.all(a > 0):
        raise ValueError(f"{what} diagonal must be > 0, got {a.tolist()}")
    return a


@dataclass(frozen=True)
class PdGains:
    """Diagonal stiffness (N.m/rad) and damping (N.m.s/rad), stored as vectors."""

    kp: np.ndarray
    kd: np.ndarray

    def __post_init__(self):
        n_kd = np.shape(self.kd)[0] if np.ndim(self.kd) >= 1 else None
        kp = _diag(self.kp, n_kd, "K_p")
        kd = _diag(self.kd, kp.size, "K_d")
        if kp.shape != kd.shape:
            raise ShapeError(f"K_p has {kp.size} joints but K_d has {kd.size}")
        object.__setattr__(self, "kp", kp)
        object.__setattr__(self, "kd", kd)

    @classmethod
    def uniform(cls, n: int, kp: float = 100.0, kd: float = 2.0) -> "PdGains":
        return cls(np.full(n, float(kp)), np.full(n, float(kd)))

    @property
    def n(self) -> int:
        return self.kp.size


@dataclass(frozen=True)
class ActionIncrement:
    """Joint-position increment (rad) with a symmetric magnitude bound."""

    dq: np.ndarray
    bound: float = np.inf

    def __post_init__(self):
        dq = np.asarray(self.dq, dtype=np.float64)
        if not np.isfinite(dq).all():
            raise ValueError("action increment must be finite")
        if np.any(np.abs(dq) > self.bound):
            raise ValueError(f"action increment exceeds bound {self.bound}")
        object.__setattr__(self, "dq", dq)


def pd_torque(dq, q_cur, qd_cur, gains: PdGains) -> np.ndarray:
    """tau = K_p (q_des - q_cur) - K_d qd_cur with q_des = q_cur + dq."""
    if isinstance(dq, ActionIncrement):
        dq = dq.dq
    dq = np.asarray(dq, dtype=np.float64)
    q = np.asarray(q_cur, dtype=np.float64)
    qd = np.asarray(qd_cur, dtype=np.float64)
    if not (dq.shape == q.shape == qd.shape == (gains.n,)):
        raise ShapeError(f"pd_torque: dq {dq.shape}, q {q.shape}, qd {qd.shape} vs {gains.n} gains")
    # K_p (q_des - q_cur) is evaluated as K_p dq: forming q_des first would add rounding
    return gains.kp * dq - gains.kd * qd


def impact_reward(f_z, alpha: float = DEFAULT_ALPHA) -> float:
    """-alpha * (f_L^2 + f_R^2); never positive."""
    if alpha < 0:
        raise ValueError("impact scale alpha must be >= 0")
    f = np.asarray(f_z, dtype=np.float64)
    if f.shape != (2,):
        raise ShapeError(f"impact_reward expects two foot forces, got shape {f.shape}")
    return -alpha * float(f[0] * f[0] + f[1] * f[1])


@dataclass(frozen=True)
class RewardTerms:
    r_task: float
    r_bonus: float
    r_impact: float
    alpha: float = DEFAULT_ALPHA

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.r_impact > 0:
            raise ValueError("impact term must be <= 0")
        if not np.isfinite([self.r_task, self.r_bonus, self.r_impact]).all():
            raise ValueError("reward terms must be finite")


def total_reward(terms: RewardTerms) -> float:
    return terms.r_task + terms.r_bonus + terms.r_impact


class AlphaSchedule:
    """Piecewise-linear alpha(step) through (step, alpha) knots, held flat outside."""

    def __init__(self, knots):
        pts = sorted((int(s), float(a)) for s, a in knots)
        if not pts:
            raise ValueError("alpha schedule needs at least one (step, alpha) pair")
        steps = [s for s, _ in pts]
        if len(set(steps)) != len(steps):
            raise ValueError("alpha schedule steps must be distinct")
        if any(a < 0 for _, a in pts):
            raise ValueError("alpha values must be >= 0")
        self.steps = np.array(steps, dtype=np.float64)
        self.alphas = np.array([a for _, a in pts])

    def __call__(self, step) -> float:
        return float(np.interp(step, self.steps, self.alphas))

    @classmethod
    def parse(cls, text: str) -> "AlphaSchedule":
        """'0:0, 1000:1e-4' -> schedule."""
        knots = []
        for part in text.split(","):
            part = part.strip()
            if part:
                s, a = part.split(":")
                knots.append((int(s), float(a)))
        return cls(knots)
