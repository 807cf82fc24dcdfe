"""Acceptance suite: one test per primary criterion; a summary section lists PASS/FAIL lines.

The two training criteria are marked slow (about 17 min per 200-epoch run on one core);
deselect them with ``-m "not slow"``.
"""
import time

import numpy as np
import pytest

from grfpinn import diffcore as dc
from grfpinn import simgen, trainer
from grfpinn.cli import main
from grfpinn.config import load_config
from grfpinn.dynamics import (DlsConfig, InertiaHead, PotentialHead, assemble_inertia, coriolis_matrix,
                              dls_solve, inertia_derivatives, project_nonneg)
from grfpinn.kan import KanLayer
from grfpinn.metrics import P_REF, AudioSegment, a_weighting_db, mae, mnl, pnl, r2, rmse, spl_series
from grfpinn.predictor import LossWeights, ModelConfig, loss
from grfpinn.reward import PdGains, impact_reward, pd_torque
from grfpinn.seqnet import SequenceNet
from helpers import directional_error

POINTS = 100


def _worst_directional(params, objective_at, rng):
    """Max directional error over POINTS fresh (input, direction) draws."""
    worst = 0.0
    for _ in range(POINTS):
        obj = objective_at(rng)
        worst = max(worst, directional_error(params, obj, rng))
    return worst


# ------------------------------------------------------------------ gradients

@pytest.mark.acceptance("gradient correctness")
def test_gradient_correctness(record_property):
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    errs = {}

    layer = KanLayer(3, 4, rng=rng)

    def kan_obj(r):
        x, W = r.uniform(-1.2, 1.2, (5, 3)), r.normal(size=(5, 4))
        return lambda: dc.sum(dc.mul(layer.forward(x), W))
    errs["KanLayer"] = _worst_directional(layer.parameters(), kan_obj, rng)

    inertia = InertiaHead(4, hidden=(6,), rng=rng)

    def inertia_obj(r):
        q, W1, W2 = r.uniform(-1, 1, (2, 4)), r.normal(size=(2, 4, 4)), r.normal(size=(2, 4, 4, 4))

        def f():
            M, dM = inertia.evaluate(q)
            return dc.add(dc.sum(dc.mul(M, W1)), dc.sum(dc.mul(dM, W2)))
        return f
    errs["InertiaHead"] = _worst_directional(inertia.parameters(), inertia_obj, rng)

    potential = PotentialHead(4, hidden=(6,), rng=rng)

    def potential_obj(r):
        q, w1, W2 = r.uniform(-1, 1, (3, 4)), r.normal(size=3), r.normal(size=(3, 4))

        def f():
            V, G = potential.evaluate(q)
            return dc.add(dc.sum(dc.mul(V, w1)), dc.sum(dc.mul(G, W2)))
        return f
    errs["PotentialHead"] = _worst_directional(potential.parameters(), potential_obj, rng)

    net = SequenceNet(4, channels=8, rng=rng)

    def seq_obj(r):
        frames, W = r.normal(size=(2, 11, 12)), r.normal(size=(2, 6, 4))
        return lambda: dc.sum(dc.mul(net.forward_frames(frames), W))
    errs["SequenceNet"] = _worst_directional(net.parameters(), seq_obj, rng)

    splits = simgen.build_splits(simgen.DatasetConfig(seed=4, session_seconds=2.0,
                                                      sessions={"train": 1, "val": 1, "test": 1}))
    ds = splits["train"]
    pred = trainer.build_predictor(ModelConfig(kan_hidden=(4,), potential_hidden=(4,), seq_channels=8), ds.meta)
    starts = trainer.sequence_starts(ds)
    weights = LossWeights(1.0, 1e-4, 0.1, 1e-5)

    def loss_obj(r):
        batch = trainer.make_batch(ds, r.choice(starts, 2, replace=False))
        return lambda: loss(pred, batch, weights).total
    errs["full loss"] = _worst_directional(list(pred.parameters().values()), loss_obj, rng)

    seconds = time.perf_counter() - t0
    worst = max(errs.values())
    record_property("detail", f"worst rel err {worst:.1e} over {POINTS} points x 5 modules, {seconds:.0f} s")
    assert all(e < 1e-4 for e in errs.values()), errs
    assert seconds < 120


# -------------------------------------------------------------------- physics

@pytest.mark.acceptance("physics invariants")
def test_physics_invariants(record_property):
    rng = np.random.default_rng(202)
    t0 = time.perf_counter()
    head = InertiaHead(7, rng=rng)
    min_eig, worst_skew = np.inf, 0.0
    for _ in range(1000):
        q, qd, x = rng.uniform(-1, 1, 7), rng.normal(0, 2, 7), rng.normal(size=7)
        M = assemble_inertia(head, q)
        assert np.array_equal(M, M.T)
        min_eig = min(min_eig, np.linalg.eigvalsh(M).min())
        Mdot = np.einsum("kij,k->ij", inertia_derivatives(head, q), qd)
        C = coriolis_matrix(head, q, qd)
        skew = abs(x @ (Mdot - 2 * C) @ x) / ((x @ x) * (1 + np.linalg.norm(qd)))
        worst_skew = max(worst_skew, skew)
    splits = simgen.build_splits(simgen.DatasetConfig())
    residual = max(simgen.max_record_residual(ds) for ds in splits.values())
    records = sum(len(ds) for ds in splits.values())
    seconds = time.perf_counter() - t0
    record_property("detail", f"min eig {min_eig:.2e}, skew {worst_skew:.1e}, "
                              f"max residual {residual:.1e} over {records} records, {seconds:.0f} s")
    assert min_eig >= head.eps
    assert worst_skew <= 1e-8
    assert residual < 1e-8
    assert seconds < 120


# ------------------------------------------------------------------------ DLS

@pytest.mark.acceptance("DLS oracle")
def test_dls_oracle(record_property):
    rng = np.random.default_rng(303)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(2, 12))
        J = rng.normal(size=(2, n))
        tau = rng.normal(size=n)
        # minimum-norm least-squares solution of J^T f = tau, independent of the DLS formula
        oracle = np.linalg.lstsq(J.T, tau, rcond=None)[0]
        got = dls_solve(J, tau, DlsConfig(1e-9))
        worst = max(worst, np.linalg.norm(got - oracle) / np.linalg.norm(oracle))
        assert np.all(project_nonneg(got) >= 0)
    seconds = time.perf_counter() - t0
    record_property("detail", f"worst rel err {worst:.1e}, {seconds:.1f} s")
    assert worst < 1e-6
    assert seconds < 60


# -------------------------------------------------------------------- metrics

def _tone(freq, p_rms, rate=48000):
    t = np.arange(rate) / rate
    return np.sqrt(2) * p_rms * np.sin(2 * np.pi * freq * t)


@pytest.mark.acceptance("metric identities")
def test_metric_identities(record_property):
    rng = np.random.default_rng(404)
    t0 = time.perf_counter()
    for _ in range(1000):
        n = int(rng.integers(2, 200))
        t, p = rng.normal(0, 100, n), rng.normal(0, 100, n)
        assert r2(t, t) == 1.0
        assert abs(r2(np.full(n, t.mean()), t)) < 1e-12
        assert rmse(p, t) >= mae(p, t)
    assert abs(a_weighting_db(1000.0)) <= 0.01
    spl = spl_series(AudioSegment(_tone(1000, 0.2)))[0]
    tone_err = np.abs(spl - (20 * np.log10(0.2 / P_REF) + a_weighting_db(1000.0))).max()
    assert tone_err <= 0.1
    worst_shift = 0.0
    for c in (0.1, 0.5, 2.0, 7.0):
        x = rng.normal(0, 0.1, 48000)
        a, b = spl_series(AudioSegment(x))[0], spl_series(AudioSegment(c * x))[0]
        worst_shift = max(worst_shift, abs(mnl(b) - mnl(a) - 20 * np.log10(c)),
                          abs(pnl(b) - pnl(a) - 20 * np.log10(c)))
    assert worst_shift <= 0.05
    for _ in range(100):
        x = rng.normal(0, 1, 24000) * rng.uniform(0, 1, 24000)
        spl = spl_series(AudioSegment(x))[0]
        assert pnl(spl) >= mnl(spl)
    seconds = time.perf_counter() - t0
    record_property("detail", f"tone err {tone_err:.3f} dB, scaling err {worst_shift:.1e} dB, {seconds:.1f} s")
    assert seconds < 60


# --------------------------------------------------------------------- reward

@pytest.mark.acceptance("reward/PD contracts")
def test_reward_pd_contracts(record_property):
    rng = np.random.default_rng(505)
    t0 = time.perf_counter()
    assert impact_reward([100.0, 50.0], 1e-4) == -1.25
    gains = PdGains.uniform(7)
    dq = np.zeros(7)
    dq[0] = 0.1
    assert pd_torque(dq, np.zeros(7), np.zeros(7), gains)[0] == 10.0
    f = np.array([100.0, 50.0])
    for a in (0.0, 1e-4, 0.5, 2.0):
        assert impact_reward(f, a) == a * impact_reward(f, 1.0)
    for _ in range(100):
        d1, d2, v1, v2 = (rng.integers(-8, 8, 7) / 8 for _ in range(4))
        a, b = rng.integers(-4, 4, 2) / 4
        q = np.zeros(7)
        lhs = pd_torque(a * d1 + b * d2, q, a * v1 + b * v2, gains)
        rhs = a * pd_torque(d1, q, v1, gains) + b * pd_torque(d2, q, v2, gains)
        # dyadic inputs and gains keep every product exact
        assert np.array_equal(lhs, rhs)
    seconds = time.perf_counter() - t0
    record_property("detail", f"{seconds * 1e3:.0f} ms")
    assert seconds < 1.0


# ---------------------------------------------------------------- determinism

DET_CFG = """\
[data]
session_seconds = 2.0
sessions_train = 1
sessions_val = 1
sessions_test = 1

[model]
kan_hidden = 4
potential_hidden = 4
seq_channels = 8

[train]
epochs = 2
batch_size = 128
"""


@pytest.mark.acceptance("determinism")
def test_determinism(tmp_path, record_property):
    cfg = tmp_path / "det.cfg"
    cfg.write_text(DET_CFG)
    for run in ("a", "b"):
        d = tmp_path / run
        assert main(["gen-data", "--config", str(cfg), "--seed", "9", "--out", str(d / "data")]) == 0
        assert main(["train", "--config", str(cfg), "--seed", "9", "--data", str(d / "data"),
                     "--out", str(d / "run")]) == 0
        assert main(["eval", "--config", str(cfg), "--seed", "9", "--data", str(d / "data"), "--reward",
                     "--checkpoint", str(d / "run" / "checkpoint.json"), "--out", str(d / "eval")]) == 0
    compared = []
    for sub, names in {"data": ["train.csv", "val.csv", "test.csv", "train.json"],
                       "run": ["checkpoint.json", "history.csv", "report.json"],
                       "eval": ["eval_report.json", "predictions.csv"]}.items():
        for name in names:
            assert (tmp_path / "a" / sub / name).read_bytes() == (tmp_path / "b" / sub / name).read_bytes(), name
            compared.append(name)
    record_property("detail", f"{len(compared)} artifacts bitwise equal")


# ------------------------------------------------------------ end-to-end runs

@pytest.fixture(scope="session")
def default_run():
    """Default configuration end to end: data, model, loss weights and 200-epoch schedule."""
    cfg = load_config(None)
    splits = simgen.build_splits(cfg.data)
    cache = {}
    t0 = time.perf_counter()
    cache["C1"] = trainer.train(cfg.train, trainer.AblationConfig("C1"), splits["train"], splits["val"],
                                cfg.model, cfg.loss)
    return cfg, splits, cache, time.perf_counter() - t0


@pytest.mark.slow
@pytest.mark.acceptance("end-to-end learning")
def test_end_to_end_learning(default_run, record_property):
    cfg, splits, cache, seconds = default_run
    rep = trainer.evaluate(cache["C1"].predictor, splits["test"], per_mode=True)
    r2s = [rep["pooled"][f]["r2"] for f in ("L", "R")]
    fwd = [rep["modes"]["forward"][f]["r2"] for f in ("L", "R")]
    own = trainer.evaluate(cache["C1"].predictor, splits["train"])["pooled"]
    record_property("detail", f"test R2 L {r2s[0]:.4f} R {r2s[1]:.4f}, forward {min(fwd):.4f}, "
                              f"train R2 {own['L']['r2']:.4f}/{own['R']['r2']:.4f}, "
                              f"{len(splits['train'])} train records, {seconds / 60:.1f} min")
    assert own["L"]["r2"] >= r2s[0] and own["R"]["r2"] >= r2s[1]
    assert len(splits["train"]) >= 50_000 and cfg.train.epochs == 200 and cfg.model.n == 7
    assert min(r2s) >= 0.95
    assert min(fwd) >= 0.95
    assert seconds <= 30 * 60
    # every loss component ends below its epoch-1 value and never exceeds it by more than 10%
    res = cache["C1"]
    first = res.history[0]
    for k in ("train_grf", "train_dyn", "train_swing", "train_smooth"):
        assert res.history[res.best_epoch - 1][k] < first[k], k
        assert max(r[k] for r in res.history[:res.best_epoch]) <= 1.1 * first[k], k


@pytest.mark.slow
@pytest.mark.acceptance("ablation structure")
def test_ablation_structure(default_run, record_property):
    cfg, splits, cache, _ = default_run
    t0 = time.perf_counter()
    rows = trainer.run_ablation_suite(cfg.train, splits["train"], splits["val"], splits["test"],
                                      cfg.model, cfg.loss, results=cache)
    seconds = time.perf_counter() - t0
    r2 = {(r["config"], r["foot"]): r["r2"] for r in rows}
    table = ", ".join(f"{t} {r2[(t, 'L')]:.4f}/{r2[(t, 'R')]:.4f}" for t in trainer.ABLATIONS)
    record_property("detail", table)
    for foot in ("L", "R"):
        col = {t: r2[(t, foot)] for t in trainer.ABLATIONS}
        assert max(col, key=col.get) == "C1", (foot, col)
        assert min(col, key=col.get) == "C3", (foot, col)
        assert col["C1"] - col["C3"] >= 0.05, (foot, col)
    assert seconds <= 2.5 * 3600
