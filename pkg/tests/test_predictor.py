from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from grfpinn import diffcore as dc
from grfpinn.dynamics import coriolis_from_derivatives
from grfpinn.predictor import (LossWeights, ModelConfig, NormStats, SequenceBatch, contact_mask,
                               denormalize_force, loss, normalize_force)
from grfpinn.trainer import build_predictor, make_batch, sequence_starts
from helpers import directional_error

SMALL = ModelConfig(kan_hidden=(4,), potential_hidden=(4,), seq_channels=8)


@pytest.fixture
def pred(small_splits):
    return build_predictor(SMALL, small_splits["train"].meta)


@pytest.fixture
def batch(small_splits):
    ds = small_splits["train"]
    starts = sequence_starts(ds)[::97][:8]
    return make_batch(ds, starts)


# --------------------------------------------------------------- normalization

STATS = NormStats((400.0, 380.0), (150.0, 160.0))


def test_normalize_examples():
    np.testing.assert_array_equal(normalize_force(STATS.mu, STATS), [0.0, 0.0])
    np.testing.assert_allclose(normalize_force(STATS.mu + STATS.sigma, STATS), [1.0, 1.0])


@given(arrays(np.float64, 2, elements=st.floats(0, 2000)))
def test_normalize_round_trip(f):
    np.testing.assert_allclose(denormalize_force(normalize_force(f, STATS), STATS), f, rtol=1e-15, atol=1e-12)


def test_zero_sigma_rejected():
    with pytest.raises(ValueError):
        NormStats((1.0, 1.0), (0.0, 1.0))


# ---------------------------------------------------------------------- mask

def test_contact_mask_examples():
    np.testing.assert_array_equal(contact_mask([50.0, 3.0], 10.0), [1, 0])
    np.testing.assert_array_equal(contact_mask([10.0, 10.0], 10.0), [1, 1])
    np.testing.assert_array_equal(contact_mask([0.0, 0.0], 10.0), [0, 0])


def test_contact_mask_threshold_positive():
    with pytest.raises(ValueError):
        contact_mask([1.0, 1.0], 0.0)


# ------------------------------------------------------------------- predict

def test_auto_scales_resolve_to_mean_total_force(pred, small_splits):
    want = sum(small_splits["train"].meta["norm_stats"]["mu_f"])
    assert pred.cfg.torque_scale == pytest.approx(want)
    assert pred.cfg.potential_scale == pytest.approx(want)


def test_predict_nonnegative(pred, small_splits, rng):
    ds = small_splits["test"]
    for i in rng.integers(5, len(ds), 30):
        f = pred.predict(ds.features[i - 5:i + 1] + rng.normal(0, 0.5, (6, 21)), ds.Jn[i])
        assert f.shape == (2,) and np.all(f >= 0)


def test_predict_rejects_bad_shapes(pred):
    with pytest.raises(dc.ShapeError):
        pred.predict(np.zeros((5, 21)), np.zeros((2, 7)))
    with pytest.raises(dc.ShapeError):
        pred.predict(np.zeros((6, 21)), np.zeros((3, 7)))


def test_dls_inversion_oracle(small_splits, rng):
    """Seqnet forced to output tau_eff = M qdd + C qd + G - J^T f_true recovers f_true."""
    ds = small_splits["train"]
    p = build_predictor(replace(SMALL, dls_damping=1e-9), ds.meta)
    for _ in range(10):
        i = int(rng.integers(5, len(ds)))
        window = ds.features[i - 5:i + 1]
        J = rng.normal(size=(2, 7))
        f_true = rng.uniform(0, 800, 2)
        q, qd, qdd = window[-1, :7][None], window[-1, 7:14][None], window[-1, 14:][None]
        M, dM = p.inertia.evaluate(q)
        C = coriolis_from_derivatives(dM, qd).value[0]
        _, G = p.potential.evaluate(q)
        tau_eff = M.value[0] @ qdd[0] + C @ qd[0] + G.value[0] - J.T @ f_true
        for w in (p.seqnet.w1, p.seqnet.w2, p.seqnet.wh):
            w.value[...] = 0.0
        p.seqnet.bh.value[...] = tau_eff / p.seqnet.output_scale
        np.testing.assert_allclose(p.predict(window, J), f_true, atol=1e-5)


def test_predict_session_matches_predict(pred, small_splits):
    ds = small_splits["val"]
    lo, hi = ds.session_bounds()[0]
    seq = pred.predict_session(ds.features[lo:hi], ds.Jn[lo:hi], chunk=37)
    for t in (lo + 5, lo + 40, hi - 1):
        np.testing.assert_allclose(seq[t - lo - 5], pred.predict(ds.features[t - 5:t + 1], ds.Jn[t]),
                                   rtol=1e-12, atol=1e-9)


def test_freeze_blocks_gradients(pred, batch):
    pred.freeze()
    with dc.Tape() as tape:
        out = loss(pred, batch, LossWeights())
    assert len(tape) == 0 and not out.total.requires_grad
    pred.unfreeze()
    assert all(p.requires_grad for p in pred.parameters().values())


def test_frozen_reward_is_pure(pred, small_splits):
    from grfpinn.reward import impact_reward
    ds = small_splits["test"]
    pred.freeze()
    i = 40
    w = ds.features[i - 5:i + 1]
    first = impact_reward(pred.predict(w, ds.Jn[i]), 1e-4)
    for j in (10, 90, 40):  # interleave other queries
        pred.predict(ds.features[j - 5:j + 1], ds.Jn[j])
        assert impact_reward(pred.predict(w, ds.Jn[i]), 1e-4) == first


# ---------------------------------------------------------------------- loss

def test_components_nonnegative(pred, batch):
    t = loss(pred, batch, LossWeights())
    assert min(t.grf, t.dyn, t.swing, t.smooth) >= 0


def test_total_is_weighted_sum(pred, batch):
    w = LossWeights(1.0, 0.1, 0.2, 0.01)
    t = loss(pred, batch, w)
    want = w.grf * t.grf + w.dyn * t.dyn + w.swing * t.swing + w.smooth * t.smooth
    assert float(t.total.value) == pytest.approx(want, rel=1e-12)


def test_perfect_prediction_gives_zero_grf(pred, batch):
    f_pred = pred.forward(batch.frames, batch.Jn)["f_pred"].value
    assert loss(pred, SequenceBatch(batch.frames, batch.Jn, f_pred), LossWeights()).grf == 0.0


def test_time_constant_prediction_gives_zero_smooth(pred, batch):
    frames = np.repeat(batch.frames[:, -1:], batch.frames.shape[1], axis=1)
    Jn = np.repeat(batch.Jn[:, -1:], batch.Jn.shape[1], axis=1)
    assert loss(pred, SequenceBatch(frames, Jn, batch.f_gt), LossWeights()).smooth == 0.0


def test_full_contact_gives_zero_swing(pred, batch):
    f_gt = np.full_like(batch.f_gt, 200.0)
    assert loss(pred, SequenceBatch(batch.frames, batch.Jn, f_gt), LossWeights()).swing == 0.0


def test_single_tick_has_zero_smooth(pred, batch):
    b = SequenceBatch(batch.frames[:, :6], batch.Jn[:, :1], batch.f_gt[:, :1])
    assert loss(pred, b, LossWeights()).smooth == 0.0


def test_missing_inputs_rejected(pred, batch):
    with pytest.raises(ValueError):
        loss(pred, SequenceBatch(batch.frames, None, batch.f_gt), LossWeights())
    with pytest.raises(ValueError):
        loss(pred, SequenceBatch(batch.frames, batch.Jn, None), LossWeights())


def test_negative_weight_rejected():
    with pytest.raises(ValueError):
        LossWeights(dyn=-1.0)


@pytest.mark.parametrize("term", ["grf", "dyn", "swing", "smooth"])
def test_zeroed_weight_drops_term(pred, batch, term):
    d = LossWeights(1.0, 0.1, 0.1, 0.01).as_dict()
    d[term] = 0.0
    t = loss(pred, batch, LossWeights(**d))
    want = sum(d[k] * getattr(t, k) for k in d)
    assert float(t.total.value) == pytest.approx(want, rel=1e-12)


def test_loss_gradient_matches_fd(pred, batch, rng):
    params = list(pred.parameters().values())
    obj = lambda: loss(pred, batch, LossWeights(1.0, 1e-4, 0.1, 1e-5)).total  # noqa: E731
    errs = [directional_error(params, obj, rng) for _ in range(10)]
    assert max(errs) < 1e-4
