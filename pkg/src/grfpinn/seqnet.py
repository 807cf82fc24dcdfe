"""Sequence-Net: proprioceptive window -> effective generalized actuation.

Two valid temporal convolutions (kernel 3 along the frame axis) followed by a
linear head over the last two positions. A window of H = 6 frames therefore
yields exactly one output. Longer frame runs yield one output per complete
window, sharing the convolution work between overlapping windows.
"""
from __future__ import annotations

import numpy as np

from . import diffcore as dc
from .diffcore import ShapeError, Tensor

__all__ = ["HISTORY", "SequenceNet", "seqnet_forward"]

HISTORY = 6


def _stack_shifts(x: np.ndarray, k: int) -> np.ndarray:
    T = x.shape[1]
    return np.concatenate([x[:, i:T - k + 1 + i] for i in range(k)], axis=-1)


def _stack_shifts_t(h: Tensor, k: int) -> Tensor:
    T = h.shape[1]
    return dc.concat([dc.index(h, (slice(None), slice(i, T - k + 1 + i))) for i in range(k)], axis=-1)


class SequenceNet:
    """Temporal-conv net (``arch="tcn"``) or flat MLP fallback (``arch="mlp"``)."""

    def __init__(self, n: int, channels: int = 64, arch: str = "tcn",
                 rng: np.random.Generator | None = None, output_scale: float = 1.0):
        if arch not in ("tcn", "mlp"):
            raise ValueError(f"unknown sequence-net architecture {arch!r}")
        self.n = int(n)
        self.features = 3 * self.n
        self.channels = int(channels)
        self.arch = arch
        self.output_scale = float(output_scale)
        rng = rng if rng is not None else np.random.default_rng(0)
        F, C = self.features, self.channels

        def dense(fan_in, fan_out, name):
            bound = np.sqrt(3.0 / fan_in)
            return (dc.parameter(rng.uniform(-bound, bound, (fan_in, fan_out)), f"seq.{name}.w"),
                    dc.parameter(np.zeros(fan_out), f"seq.{name}.b"))

        if arch == "tcn":
            self.w1, self.b1 = dense(3 * F, C, "conv1")
            self.w2, self.b2 = dense(3 * C, C, "conv2")
            self.wh, self.bh = dense(2 * C, self.n, "head")
        else:
            self.w1, self.b1 = dense(HISTORY * F, C, "fc1")
            self.w2, self.b2 = dense(C, C, "fc2")
            self.wh, self.bh = dense(C, self.n, "head")
        # start near zero actuation
        self.wh.value *= 0.1

    def parameters(self) -> list[Tensor]:
        return [self.w1, self.b1, self.w2, self.b2, self.wh, self.bh]

    def forward_frames(self, frames: np.ndarray) -> Tensor:
        """Normalized frames (B, T, 3n), T >= 6 -> tau_eff (B, T - 5, n)."""
        x = np.asarray(frames, dtype=np.float64)
        if x.ndim != 3 or x.shape[2] != self.features or x.shape[1] < HISTORY:
            raise ShapeError(f"sequence net expects frames (B, T>={HISTORY}, {self.features}), got {x.shape}")
        if self.arch == "tcn":
            h = dc.silu(dc.add(dc.matmul(_stack_shifts(x, 3), self.w1), self.b1))
            h = dc.silu(dc.add(dc.matmul(_stack_shifts_t(h, 3), self.w2), self.b2))
            out = dc.add(dc.matmul(_stack_shifts_t(h, 2), self.wh), self.bh)
        else:
            h = dc.silu(dc.add(dc.matmul(_stack_shifts(x, HISTORY), self.w1), self.b1))
            h = dc.silu(dc.add(dc.matmul(h, self.w2), self.b2))
            out = dc.add(dc.matmul(h, self.wh), self.bh)
        return dc.scale(out, self.output_scale) if self.output_scale != 1.0 else out


def seqnet_forward(net: SequenceNet, window) -> np.ndarray:
    """One normalized (6, 3n) window -> tau_eff (n,)."""
    w = np.asarray(dc.tensor(window).value, dtype=np.float64)
    if w.shape != (HISTORY, net.features):
        raise ShapeError(f"window must have shape ({HISTORY}, {net.features}), got {w.shape}")
    return net.forward_frames(w[None]).value[0, 0]
