"""Planar biped oracle and synthetic 50 Hz dataset generator.

Generalized coordinates ``q = [x, z, pitch, hip_L, knee_L, hip_R, knee_R]``.
(x, z) is the hip point of a floating base; pitch rotates the whole body;
hip/knee angles are relative. Every body point is written as

    p(q) = (x, z) + sum_k a_k (sin phi_k, -cos phi_k),   phi_k = s_k . q + c_k

which gives closed forms for Jacobians and their derivatives, hence for
M(q), dM/dq, Christoffel-consistent C(q, qd) and G(q).

Records are produced by inverse dynamics along prescribed smooth motions:
the contact force comes from a spring-damper on each foot and the effective
actuation is whatever closes the equation of motion, so every record
satisfies M qdd + C qd + G = tau_eff + J_n^T f exactly up to roundoff.
"""
from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

__all__ = [
    "BipedModel",
    "ContactParams",
    "FootwearPreset",
    "FOOTWEAR_PRESETS",
    "MODES",
    "Trajectory",
    "DatasetConfig",
    "Dataset",
    "true_dynamics",
    "energy",
    "simulate_free",
    "sample_trajectory",
    "foot_kinematics",
    "contact_force",
    "tau_eff_from_inverse_dynamics",
    "generate_session",
    "emit_dataset",
    "load_split",
    "feature_columns",
    "record_residuals",
    "max_record_residual",
    "RESIDUAL_TOL",
]

MODES = ("forward", "backward", "in-place")
RATE_HZ = 50
RESIDUAL_TOL = 1e-8  # N.m, per record


# ----------------------------------------------------------------------- model

@dataclass(frozen=True)
class BipedModel:
    torso_mass: float = 20.0
    torso_length: float = 0.5
    thigh_mass: float = 3.0
    thigh_length: float = 0.4
    shank_mass: float = 2.0
    shank_length: float = 0.4
    foot_offset: float = 0.0
    gravity: float = 9.81

    def __post_init__(self):
        for name in ("torso_mass", "torso_length", "thigh_mass", "thigh_length",
                     "shank_mass", "shank_length"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.foot_offset < 0:
            raise ValueError("foot_offset must be >= 0")

    n = 7

    @property
    def total_mass(self) -> float:
        return self.torso_mass + 2 * (self.thigh_mass + self.shank_mass)

    @property
    def leg_length(self) -> float:
        return self.thigh_length + self.shank_length + self.foot_offset


# a point: list of (a, s-row, c); a body: (mass, rot inertia, angle row, point)
def _angle_rows():
    th = np.array([0, 0, 1, 0, 0, 0, 0.0])
    thigh_l = np.array([0, 0, 1, 1, 0, 0, 0.0])
    shank_l = np.array([0, 0, 1, 1, 1, 0, 0.0])
    thigh_r = np.array([0, 0, 1, 0, 0, 1, 0.0])
    shank_r = np.array([0, 0, 1, 0, 0, 1, 1.0])
    return th, thigh_l, shank_l, thigh_r, shank_r


def _bodies(model: BipedModel):
    th, thl, shl, thr, shr = _angle_rows()
    lt, l1, l2 = model.torso_length, model.thigh_length, model.shank_length
    bodies = [(model.torso_mass, model.torso_mass * lt ** 2 / 12, th, [(lt / 2, th, np.pi)])]
    for thigh, shank in ((thl, shl), (thr, shr)):
        bodies.append((model.thigh_mass, model.thigh_mass * l1 ** 2 / 12, thigh, [(l1 / 2, thigh, 0.0)]))
        bodies.append((model.shank_mass, model.shank_mass * l2 ** 2 / 12, shank,
                       [(l1, thigh, 0.0), (l2 / 2, shank, 0.0)]))
    return bodies


def _feet(model: BipedModel):
    _, thl, shl, thr, shr = _angle_rows()
    l1, l2 = model.thigh_length, model.shank_length + model.foot_offset
    return [[(l1, thl, 0.0), (l2, shl, 0.0)], [(l1, thr, 0.0), (l2, shr, 0.0)]]


def _point(terms, q: np.ndarray, order: int = 1):
    """Position (..., 2), Jacobian (..., 2, n) and optionally Hessian (..., 2, n, n)."""
    lead = q.shape[:-1]
    n = q.shape[-1]
    pos = np.zeros(lead + (2,))
    pos[..., 0] = q[..., 0]
    pos[..., 1] = q[..., 1]
    jac = np.zeros(lead + (2, n))
    jac[..., 0, 0] = 1.0
    jac[..., 1, 1] = 1.0
    hess = np.zeros(lead + (2, n, n)) if order >= 2 else None
    for a, s, c in terms:
        phi = q @ s + c
        sp, cp = np.sin(phi), np.cos(phi)
        pos[..., 0] += a * sp
        pos[..., 1] -= a * cp
        jac[..., 0, :] += a * cp[..., None] * s
        jac[..., 1, :] += a * sp[..., None] * s
        if hess is not None:
            ss = np.outer(s, s)
            hess[..., 0, :, :] -= a * sp[..., None, None] * ss
            hess[..., 1, :, :] += a * cp[..., None, None] * ss
    return pos, jac, hess


def _mass_matrix(model: BipedModel, q: np.ndarray, derivatives: bool = False):
    lead = q.shape[:-1]
    n = q.shape[-1]
    M = np.zeros(lead + (n, n))
    dM = np.zeros(lead + (n, n, n)) if derivatives else None
    for mass, inertia, srow, terms in _bodies(model):
        _, J, H = _point(terms, q, order=2 if derivatives else 1)
        M += mass * np.einsum("...ai,...aj->...ij", J, J)
        M += inertia * np.outer(srow, srow)
        if derivatives:
            # dM[k]_ij = m (H[:, i, k] . J[:, j] + J[:, i] . H[:, j, k])
            t = np.einsum("...aik,...aj->...kij", H, J)
            dM += mass * (t + np.swapaxes(t, -1, -2))
    return M, dM


def energy(model: BipedModel, q, qd) -> float:
    q = np.asarray(q, dtype=np.float64)
    qd = np.asarray(qd, dtype=np.float64)
    M, _ = _mass_matrix(model, q)
    V = sum(mass * model.gravity * _point(terms, q)[0][..., 1]
            for mass, _, _, terms in _bodies(model))
    return 0.5 * np.einsum("...i,...ij,...j->...", qd, M, qd) + V


def true_dynamics(model: BipedModel, q, qd):
    """Closed-form (M, C, G); accepts single vectors or (T, n) batches."""
    q = np.asarray(q, dtype=np.float64)
    qd = np.asarray(qd, dtype=np.float64)
    M, dM = _mass_matrix(model, q, derivatives=True)
    t1 = np.einsum("...kij,...k->...ij", dM, qd)
    t2 = np.einsum("...jik,...k->...ij", dM, qd)
    t3 = np.einsum("...ijk,...k->...ij", dM, qd)
    C = 0.5 * (t1 + t2 - t3)
    G = np.zeros(q.shape)
    for mass, _, _, terms in _bodies(model):
        _, J, _ = _point(terms, q)
        G += mass * model.gravity * J[..., 1, :]
    return M, C, G


def _mass_matrix_derivative(model: BipedModel, q):
    return _mass_matrix(model, np.asarray(q, dtype=np.float64), derivatives=True)


def simulate_free(model: BipedModel, q0, qd0, duration: float, dt: float = 1e-3,
                  tol: float = 1e-13, max_iter: int = 50):
    """Unforced, contact-free rollout with the 2-stage Gauss-Legendre method.

    Integrates the canonical (q, p = M qd) system, which keeps the scheme
    symplectic. Returns times, q and qd arrays.
    """
    r3 = np.sqrt(3.0)
    A = np.array([[0.25, 0.25 - r3 / 6], [0.25 + r3 / 6, 0.25]])
    b = np.array([0.5, 0.5])

    def rhs(y):
        n = y.size // 2
        q, p = y[:n], y[n:]
        M, dM = _mass_matrix_derivative(model, q)
        _, _, G = true_dynamics(model, q, np.zeros(n))
        qd = np.linalg.solve(M, p)
        dH = -0.5 * np.einsum("i,kij,j->k", qd, dM, qd) + G
        return np.concatenate([qd, -dH])

    q0 = np.asarray(q0, dtype=np.float64)
    qd0 = np.asarray(qd0, dtype=np.float64)
    M0, _ = _mass_matrix(model, q0)
    y = np.concatenate([q0, M0 @ qd0])
    steps = int(round(duration / dt))
    n = q0.size
    qs, qds = [q0.copy()], [qd0.copy()]
    for _ in range(steps):
        K = np.stack([rhs(y), rhs(y)])
        for _ in range(max_iter):
            K_new = np.stack([rhs(y + dt * (A[i, 0] * K[0] + A[i, 1] * K[1])) for i in range(2)])
            done = np.max(np.abs(K_new - K)) < tol * (1.0 + np.max(np.abs(K)))
            K = K_new
            if done:
                break
        y = y + dt * (b[0] * K[0] + b[1] * K[1])
        q = y[:n]
        M, _ = _mass_matrix(model, q)
        qs.append(q.copy())
        qds.append(np.linalg.solve(M, y[n:]))
    t = np.arange(steps + 1) * dt
    return t, np.array(qs), np.array(qds)


# --------------------------------------------------------------------- contact

@dataclass(frozen=True)
class ContactParams:
    stiffness: float = 2e4
    damping: float = 200.0
    ground_height: float = 0.0

    def __post_init__(self):
        if not self.stiffness > 0:
            raise ValueError("contact stiffness must be > 0")
        if self.damping < 0:
            raise ValueError("contact damping must be >= 0")


@dataclass(frozen=True)
class FootwearPreset:
    name: str
    contact: ContactParams
    foot_offset: float = 0.0


FOOTWEAR_PRESETS = {
    "barefoot": FootwearPreset("barefoot", ContactParams(2e4, 200.0)),
    "cushioned": FootwearPreset("cushioned", ContactParams(8e3, 600.0)),
    "stiff-heel": FootwearPreset("stiff-heel", ContactParams(6e4, 50.0), 0.05),
}


def foot_kinematics(model: BipedModel, q, qd):
    """Foot heights (..., 2), vertical velocities (..., 2) and J_n (..., 2, n)."""
    q = np.asarray(q, dtype=np.float64)
    qd = np.asarray(qd, dtype=np.float64)
    heights, rows = [], []
    for terms in _feet(model):
        pos, J, _ = _point(terms, q)
        heights.append(pos[..., 1])
        rows.append(J[..., 1, :])
    Jn = np.stack(rows, axis=-2)
    pz = np.stack(heights, axis=-1)
    vz = np.einsum("...fi,...i->...f", Jn, qd)
    return pz, vz, Jn


def contact_force(model: BipedModel, contact: ContactParams, q, qd):
    """Spring-damper normal force per foot and the contact Jacobian.

    f = max(0, k*delta - d*vz) while the foot penetrates (delta > 0), else 0.
    """
    pz, vz, Jn = foot_kinematics(model, q, qd)
    delta = np.maximum(0.0, contact.ground_height - pz)
    f = np.where(delta > 0, np.maximum(0.0, contact.stiffness * delta - contact.damping * vz), 0.0)
    return f, Jn


def tau_eff_from_inverse_dynamics(M, C, G, q_dot, q_ddot, J_n, f):
    """Actuation that closes M qdd + C qd + G = tau_eff + J_n^T f."""
    return (np.einsum("...ij,...j->...i", M, q_ddot) + np.einsum("...ij,...j->...i", C, q_dot)
            + G - np.einsum("...fi,...f->...i", J_n, f))


# ------------------------------------------------------------------ trajectory

@dataclass
class Trajectory:
    t: np.ndarray
    q: np.ndarray
    qd: np.ndarray
    qdd: np.ndarray
    mode: str


_N_HARM = 6


class _Fourier:
    """c0 + v t + sum_h a_h cos(h psi) + b_h sin(h psi),  psi = omega t + psi0."""

    def __init__(self):
        self.c0 = 0.0
        self.v = 0.0
        self.a = np.zeros(_N_HARM + 1)
        self.b = np.zeros(_N_HARM + 1)

    def add_cos(self, h: int, amp: float, phase: float = 0.0) -> None:
        # amp * cos(h (psi - phase))
        self.a[h] += amp * np.cos(h * phase)
        self.b[h] += amp * np.sin(h * phase)

    def add_sin(self, h: int, amp: float, phase: float = 0.0) -> None:
        # amp * sin(h (psi - phase))
        self.a[h] -= amp * np.sin(h * phase)
        self.b[h] += amp * np.cos(h * phase)

    def eval(self, t: np.ndarray, omega: float, psi0: float):
        h = np.arange(_N_HARM + 1)
        psi = omega * t[:, None] * h + psi0 * h
        c, s = np.cos(psi), np.sin(psi)
        w = h * omega
        q = self.c0 + self.v * t + c @ self.a + s @ self.b
        qd = self.v + (-s * w) @ self.a + (c * w) @ self.b
        qdd = (-c * w ** 2) @ self.a + (-s * w ** 2) @ self.b
        return q, qd, qdd


_MODE_SHAPES = {
    # speed range (m/s), hip amplitude, knee lift, knee phase (rad)
    "forward": ((0.3, 0.6), 0.32, 0.55, 0.5),
    "backward": ((-0.4, -0.2), 0.22, 0.55, -0.5),
    "in-place": ((0.0, 0.0), 0.06, 0.65, 0.0),
}


def sample_trajectory(mode: str, duration: float, seed: int, rate_hz: float = RATE_HZ,
                      amplitude: float = 1.0, model: BipedModel | None = None,
                      stance_penetration: float = 0.01) -> Trajectory:
    """Smooth periodic gait for one planar motion mode.

    Every coordinate is a finite sum of harmonics of the gait frequency plus,
    for x, a constant speed; velocities and accelerations are the analytic
    derivatives. Legs run half a cycle apart; each knee flexes during its
    swing, and the base height follows the lower foot so the supporting foot
    sits ``stance_penetration`` below the ground on average. ``amplitude``
    scales every oscillation and the speed (0 gives a static pose).
    """
    if mode not in _MODE_SHAPES:
        raise ValueError(f"unknown motion mode {mode!r}; expected one of {MODES}")
    if not duration > 0:
        raise ValueError("duration must be > 0")
    model = model or BipedModel()
    rng = np.random.default_rng(seed)
    (v_lo, v_hi), hip_amp, knee_amp, knee_phase = _MODE_SHAPES[mode]
    freq = rng.uniform(0.8, 1.2)
    omega = 2 * np.pi * freq
    psi0 = rng.uniform(0, 2 * np.pi)
    jitter = rng.uniform(0.85, 1.15, size=3)
    speed = rng.uniform(v_lo, v_hi) if v_hi > v_lo else v_lo

    coords = [_Fourier() for _ in range(7)]
    coords[0].v = amplitude * speed
    coords[2].add_sin(2, amplitude * 0.03 * jitter[2], rng.uniform(0, np.pi))
    for leg, offset in ((0, 0.0), (1, np.pi)):
        hip, knee = coords[3 + 2 * leg], coords[4 + 2 * leg]
        hip.add_sin(1, amplitude * hip_amp * jitter[0], offset)
        # knee flexion bump ((1 + cos u)/2)^3, u = psi - offset - knee_phase
        ph = offset + knee_phase
        k = amplitude * knee_amp * jitter[1]
        knee.c0 = -0.05 - k * 5 / 16
        knee.add_cos(1, -k * 15 / 32, ph)
        knee.add_cos(2, -k * 3 / 16, ph)
        knee.add_cos(3, -k * 1 / 32, ph)
    # small band-limited perturbations shared by both legs' joints
    for j in (3, 4, 5, 6):
        for h in (2, 3):
            coords[j].add_cos(h, amplitude * rng.normal(0, 0.01), rng.uniform(0, 2 * np.pi))

    # base height: harmonic least-squares fit to (lower foot support) - penetration
    psi = np.linspace(0, 2 * np.pi, 720, endpoint=False)
    tt = (psi - psi0) / omega
    qs = np.stack([c.eval(tt, omega, psi0)[0] for c in coords], axis=-1)
    qs[:, 0] = 0.0
    qs[:, 1] = 0.0
    pz, _, _ = foot_kinematics(model, qs, np.zeros_like(qs))
    support = -pz.min(axis=-1) - stance_penetration
    basis = [np.ones_like(psi)]
    for h in range(1, 5):
        basis += [np.cos(h * psi), np.sin(h * psi)]
    coef, *_ = np.linalg.lstsq(np.stack(basis, -1), support, rcond=None)
    if amplitude == 0.0:
        coef[1:] = 0.0  # static pose: support is constant, drop roundoff harmonics
    z = coords[1]
    z.c0 = coef[0]
    for h in range(1, 5):
        z.a[h] = coef[2 * h - 1]
        z.b[h] = coef[2 * h]

    t = np.arange(int(round(duration * rate_hz))) / rate_hz
    cols = [c.eval(t, omega, psi0) for c in coords]
    q = np.stack([c[0] for c in cols], -1)
    qd = np.stack([c[1] for c in cols], -1)
    qdd = np.stack([c[2] for c in cols], -1)
    return Trajectory(t=t, q=q, qd=qd, qdd=qdd, mode=mode)


# --------------------------------------------------------------------- dataset

@dataclass
class DatasetConfig:
    seed: int = 0
    modes: tuple = MODES
    presets: tuple = tuple(FOOTWEAR_PRESETS)
    # many short sessions: every session is one randomly drawn gait, so the
    # session count sets how many distinct gaits each split covers
    session_seconds: float = 8.0
    sessions: dict = field(default_factory=lambda: {"train": 16, "val": 4, "test": 4})
    stance_load: float = 1.0
    force_noise_std: float = 0.0

    def __post_init__(self):
        self.modes = tuple(self.modes)
        self.presets = tuple(self.presets)
        for m in self.modes:
            if m not in MODES:
                raise ValueError(f"unknown motion mode {m!r}; expected one of {MODES}")
        for p in self.presets:
            if p not in FOOTWEAR_PRESETS:
                raise ValueError(f"unknown footwear preset {p!r}; expected one of {tuple(FOOTWEAR_PRESETS)}")


SPLITS = ("train", "val", "test")


@dataclass
class Dataset:
    """One split in memory; arrays are aligned per record."""

    n: int
    tick: np.ndarray
    mode: np.ndarray
    preset: np.ndarray
    q: np.ndarray
    qd: np.ndarray
    qdd: np.ndarray
    Jn: np.ndarray
    f: np.ndarray
    tau: np.ndarray
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.tick)

    @property
    def features(self) -> np.ndarray:
        return np.concatenate([self.q, self.qd, self.qdd], axis=1)

    def session_bounds(self) -> list[tuple[int, int]]:
        """[start, stop) index ranges; a session starts wherever tick == 0."""
        starts = list(np.nonzero(self.tick == 0)[0])
        if not starts or starts[0] != 0:
            starts = [0] + starts
        stops = starts[1:] + [len(self.tick)]
        return list(zip(starts, stops))

    def subset(self, idx) -> "Dataset":
        return Dataset(self.n, self.tick[idx], self.mode[idx], self.preset[idx], self.q[idx],
                       self.qd[idx], self.qdd[idx], self.Jn[idx], self.f[idx], self.tau[idx],
                       dict(self.meta))


def generate_session(mode: str, preset: str, seed: int, seconds: float,
                     model: BipedModel | None = None, stance_load: float = 1.0,
                     force_noise_std: float = 0.0) -> Dataset:
    base = model or BipedModel()
    fw = FOOTWEAR_PRESETS[preset]
    model = replace(base, foot_offset=fw.foot_offset)
    penetration = stance_load * model.total_mass * model.gravity / fw.contact.stiffness
    traj = sample_trajectory(mode, seconds, seed, model=model, stance_penetration=penetration)
    f, Jn = contact_force(model, fw.contact, traj.q, traj.qd)
    if force_noise_std > 0:
        noise_rng = np.random.default_rng([seed, 1])
        f = np.maximum(0.0, f + noise_rng.normal(0.0, force_noise_std, f.shape))
    M, C, G = true_dynamics(model, traj.q, traj.qd)
    tau = tau_eff_from_inverse_dynamics(M, C, G, traj.qd, traj.qdd, Jn, f)
    T = len(traj.t)
    ds = Dataset(model.n, np.arange(T), np.array([mode] * T, dtype=object),
                 np.array([preset] * T, dtype=object), traj.q, traj.qd, traj.qdd, Jn, f, tau)
    worst = max_record_residual(ds, base)
    if not worst < RESIDUAL_TOL:
        raise AssertionError(f"session {mode}/{preset}/{seed}: dynamics residual {worst:.3g} N.m")
    return ds


def record_residuals(ds: Dataset, model: BipedModel | None = None) -> np.ndarray:
    """|M q'' + C q' + G - tau_eff - J_n^T f| per record (inf-norm, N.m)."""
    if model is None:
        model = BipedModel(**ds.meta["model"]) if "model" in ds.meta else BipedModel()
    M, C, G = true_dynamics(model, ds.q, ds.qd)
    lhs = np.einsum("nij,nj->ni", M, ds.qdd) + np.einsum("nij,nj->ni", C, ds.qd) + G
    r = lhs - ds.tau - np.einsum("nfi,nf->ni", ds.Jn, ds.f)
    return np.abs(r).max(axis=1)


def max_record_residual(ds: Dataset, model: BipedModel | None = None) -> float:
    return float(record_residuals(ds, model).max()) if len(ds) else 0.0


def _concat(parts: list[Dataset]) -> Dataset:
    cat = lambda name: np.concatenate([getattr(p, name) for p in parts])  # noqa: E731
    return Dataset(parts[0].n, cat("tick"), cat("mode"), cat("preset"), cat("q"), cat("qd"),
                   cat("qdd"), cat("Jn"), cat("f"), cat("tau"))


def _session_seed(root: int, split: str, mode: str, preset: str, k: int) -> int:
    ss = np.random.SeedSequence([root, SPLITS.index(split), MODES.index(mode),
                                 list(FOOTWEAR_PRESETS).index(preset), k])
    return int(ss.generate_state(1)[0])


def build_splits(cfg: DatasetConfig, model: BipedModel | None = None) -> dict[str, Dataset]:
    out = {}
    for split in SPLITS:
        parts = []
        sessions = []
        for mode in cfg.modes:
            for preset in cfg.presets:
                for k in range(int(cfg.sessions.get(split, 0))):
                    s = _session_seed(cfg.seed, split, mode, preset, k)
                    parts.append(generate_session(mode, preset, s, cfg.session_seconds, model,
                                                  cfg.stance_load, cfg.force_noise_std))
                    sessions.append({"mode": mode, "preset": preset, "seed": s,
                                     "records": len(parts[-1])})
        if parts:
            ds = _concat(parts)
            ds.meta["sessions"] = sessions
            out[split] = ds
    if "train" not in out:
        raise ValueError("dataset config produces no training sessions")
    shared = _shared_meta(cfg, out["train"], model)
    for split, ds in out.items():
        ds.meta = {**shared, "split": split, "records": len(ds), "sessions": ds.meta["sessions"]}
    return out


def _shared_meta(cfg: DatasetConfig, train: Dataset, model: BipedModel | None) -> dict:
    """Metadata common to every split; statistics come from the training split only."""
    feats = train.features
    return {
        "n": train.n,
        "rate_hz": RATE_HZ,
        "norm_stats": norm_stats_from(train),
        "feature_min": feats.min(axis=0).tolist(),
        "feature_max": feats.max(axis=0).tolist(),
        "seed": cfg.seed,
        "config": {**asdict(cfg), "modes": list(cfg.modes), "presets": list(cfg.presets)},
        "model": asdict(model or BipedModel()),
        "footwear": {k: {"stiffness": v.contact.stiffness, "damping": v.contact.damping,
                         "foot_offset": v.foot_offset} for k, v in FOOTWEAR_PRESETS.items()},
    }


def norm_stats_from(ds: Dataset) -> dict:
    return {"mu_f": ds.f.mean(axis=0).tolist(), "sigma_f": ds.f.std(axis=0).tolist()}


def feature_columns(n: int) -> list[str]:
    cols = ["tick", "mode", "preset"]
    cols += [f"q_{i}" for i in range(n)] + [f"qd_{i}" for i in range(n)] + [f"qdd_{i}" for i in range(n)]
    cols += [f"Jn_{r}{i}" for r in range(2) for i in range(n)]
    cols += ["fz_L", "fz_R"] + [f"tau_{i}" for i in range(n)]
    return cols


def _write_csv(path: Path, ds: Dataset) -> None:
    n = ds.n
    numeric = np.concatenate([ds.q, ds.qd, ds.qdd, ds.Jn.reshape(len(ds), 2 * n), ds.f, ds.tau], axis=1)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(feature_columns(n))
        for i in range(len(ds)):
            w.writerow([int(ds.tick[i]), ds.mode[i], ds.preset[i]] + [repr(float(v)) for v in numeric[i]])


def emit_dataset(cfg: DatasetConfig, out_dir, model: BipedModel | None = None) -> dict[str, int]:
    """Write ``<split>.csv`` + ``<split>.json`` per split; returns record counts.

    Normalization statistics come from the training split only and are
    repeated in every split's metadata.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        if not os.access(out, os.W_OK):
            raise PermissionError(f"output directory {out} is not writable")
    except OSError as exc:
        raise OSError(f"cannot write dataset to {out}: {exc}") from exc
    splits = build_splits(cfg, model)
    counts = {}
    for split, ds in splits.items():
        _write_csv(out / f"{split}.csv", ds)
        meta = dict(ds.meta)
        with open(out / f"{split}.json", "w") as fh:
            json.dump(meta, fh, indent=1)
        counts[split] = len(ds)
    return counts


def load_split(data_dir, split: str) -> Dataset:
    """Read ``<split>.csv`` and its metadata sidecar."""
    data_dir = Path(data_dir)
    meta_path = data_dir / f"{split}.json"
    csv_path = data_dir / f"{split}.csv"
    if not meta_path.exists() or not csv_path.exists():
        raise FileNotFoundError(f"missing {csv_path.name} or {meta_path.name} in {data_dir}")
    with open(meta_path) as fh:
        meta = json.load(fh)
    n = int(meta["n"])
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != feature_columns(n):
            raise ValueError(f"{csv_path}: header does not match n={n}")
        rows = list(reader)
    tick = np.array([int(r[0]) for r in rows])
    mode = np.array([r[1] for r in rows], dtype=object)
    preset = np.array([r[2] for r in rows], dtype=object)
    num = np.array([r[3:] for r in rows], dtype=np.float64).reshape(len(rows), -1)
    q, qd, qdd = num[:, :n], num[:, n:2 * n], num[:, 2 * n:3 * n]
    Jn = num[:, 3 * n:5 * n].reshape(-1, 2, n)
    f = num[:, 5 * n:5 * n + 2]
    tau = num[:, 5 * n + 2:]
    return Dataset(n, tick, mode, preset, q, qd, qdd, Jn, f, tau, meta)
