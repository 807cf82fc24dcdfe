import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from grfpinn import diffcore as dc
from grfpinn.seqnet import HISTORY, SequenceNet, seqnet_forward
from helpers import directional_error


def test_zero_parameters_give_zero_output(rng):
    net = SequenceNet(4, channels=8, rng=rng)
    for p in net.parameters():
        p.value[...] = 0.0
    np.testing.assert_array_equal(seqnet_forward(net, rng.normal(size=(6, 12))), 0.0)


@pytest.mark.parametrize("n", [4, 7, 29])
@pytest.mark.parametrize("arch", ["tcn", "mlp"])
def test_output_length(n, arch, rng):
    net = SequenceNet(n, channels=16, arch=arch, rng=rng)
    assert seqnet_forward(net, rng.normal(size=(6, 3 * n))).shape == (n,)


def test_wrong_window_rejected(rng):
    net = SequenceNet(4, channels=8, rng=rng)
    with pytest.raises(dc.ShapeError):
        seqnet_forward(net, np.zeros((5, 12)))
    with pytest.raises(dc.ShapeError):
        seqnet_forward(net, np.zeros((6, 11)))


def test_unknown_arch_rejected():
    with pytest.raises(ValueError):
        SequenceNet(4, arch="rnn")


@pytest.mark.parametrize("arch", ["tcn", "mlp"])
def test_gradients_match_fd(arch, rng):
    net = SequenceNet(3, channels=6, arch=arch, rng=rng)
    frames = rng.normal(size=(2, 8, 9))
    W = rng.normal(size=(2, 3, 3))
    obj = lambda: dc.sum(dc.mul(net.forward_frames(frames), W))  # noqa: E731
    errs = [directional_error(net.parameters(), obj, rng) for _ in range(20)]
    assert max(errs) < 1e-4


def test_sliding_output_matches_single_windows(rng):
    net = SequenceNet(3, channels=6, rng=rng)
    frames = rng.normal(size=(1, 10, 9))
    seq = net.forward_frames(frames).numpy()[0]
    for t in range(seq.shape[0]):
        np.testing.assert_allclose(seq[t], seqnet_forward(net, frames[0, t:t + HISTORY]), atol=1e-13)


@given(arrays(np.float64, 12, elements=st.floats(-3, 3)))
def test_constant_window_of_newest_frame(frame):
    net = SequenceNet(4, channels=8, rng=np.random.default_rng(2))
    win = np.random.default_rng(3).normal(size=(6, 12))
    win[-1] = frame
    dup = np.repeat(win[-1:], 6, axis=0)
    const = np.tile(frame, (6, 1))
    np.testing.assert_array_equal(seqnet_forward(net, dup), seqnet_forward(net, const))


@given(arrays(np.float64, (6, 12), elements=st.floats(-1e3, 1e3)))
def test_finite_and_lipschitz(win):
    net = SequenceNet(4, channels=8, rng=np.random.default_rng(2))
    y = seqnet_forward(net, win)
    assert np.all(np.isfinite(y))
    d = np.random.default_rng(0).normal(size=win.shape)
    d /= np.linalg.norm(d)
    h = 1e-4
    slope = np.linalg.norm(seqnet_forward(net, win + h * d) - y) / h
    # product of layer operator norms bounds the slope (silu' <= 1.1)
    bound = 1.0
    for w in (net.w1, net.w2, net.wh):
        bound *= 1.1 * np.linalg.norm(w.value, 2) * 3
    assert slope <= bound
