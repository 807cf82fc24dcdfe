"""Force-prediction accuracy and A-weighted acoustic levels."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "P_REF",
    "rmse",
    "mae",
    "r2",
    "grf_report",
    "AudioSegment",
    "a_weighting_db",
    "spl_series",
    "mnl",
    "pnl",
    "read_wav",
    "write_wav",
]

P_REF = 20e-6  # Pa
SILENT_DB = -np.inf
AUDIBLE_BAND = (20.0, 20000.0)


def _pair(pred, truth) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred, dtype=np.float64).ravel()
    t = np.asarray(truth, dtype=np.float64).ravel()
    if p.shape != t.shape:
        raise ValueError(f"prediction and truth lengths differ: {p.size} vs {t.size}")
    if p.size == 0:
        raise ValueError("empty series")
    return p, t


def rmse(pred, truth) -> float:
    p, t = _pair(pred, truth)
    e = np.abs(p - t)
    s = e.max()
    if s == 0.0:
        return 0.0
    # scale first so tiny errors do not underflow when squared
    return float(s * np.sqrt(np.mean((e / s) ** 2)))


def mae(pred, truth) -> float:
    p, t = _pair(pred, truth)
    return float(np.mean(np.abs(p - t)))


def r2(pred, truth) -> float:
    """1 - SS_res / SS_tot; undefined (ValueError) for constant truth."""
    p, t = _pair(pred, truth)
    if p.size < 2:
        raise ValueError("R^2 needs at least two samples")
    if np.all(t == t[0]):
        raise ValueError("R^2 is undefined for a constant ground-truth series")
    ss_tot = float(np.sum((t - t.mean()) ** 2))
    if ss_tot == 0.0:
        raise ValueError("R^2 is undefined for a constant ground-truth series")
    return 1.0 - float(np.sum((p - t) ** 2)) / ss_tot


def grf_report(pred: np.ndarray, truth: np.ndarray) -> dict:
    """Per-foot RMSE / MAE / R^2 for (N, 2) arrays."""
    out = {}
    for j, foot in enumerate(("L", "R")):
        out[foot] = {"rmse": rmse(pred[:, j], truth[:, j]), "mae": mae(pred[:, j], truth[:, j]),
                     "r2": r2(pred[:, j], truth[:, j])}
    return out


# --------------------------------------------------------------------- acoustic

@dataclass
class AudioSegment:
    """Mono samples in [-1, 1]; ``gain`` maps one digital unit to pascals."""

    samples: np.ndarray
    rate: float = 48000.0
    gain: float = 1.0

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError(f"audio must be mono, got shape {self.samples.shape}")
        if not self.rate > 0:
            raise ValueError("sample rate must be > 0")
        if not np.isfinite(self.samples).all():
            raise ValueError("audio samples must be finite")

    def scaled(self, c: float) -> "AudioSegment":
        return AudioSegment(self.samples * c, self.rate, self.gain)


def a_weighting_db(f) -> np.ndarray | float:
    """IEC 61672 A-weighting gain in dB (0 dB at 1 kHz)."""
    fa = np.asarray(f, dtype=np.float64)
    if np.any(fa <= 0):
        raise ValueError("A-weighting is defined for f > 0 only")
    f2 = fa * fa
    ra = (12194.0 ** 2 * f2 * f2) / ((f2 + 20.6 ** 2) * np.sqrt((f2 + 107.7 ** 2) * (f2 + 737.9 ** 2))
                                    * (f2 + 12194.0 ** 2))
    out = 20.0 * np.log10(ra) + 2.0
    return float(out) if np.ndim(out) == 0 else out


def _frame_weights(frame_len: int, rate: float) -> np.ndarray:
    freqs = np.fft.rfftfreq(frame_len, 1.0 / rate)
    w = np.zeros_like(freqs)
    band = (freqs >= AUDIBLE_BAND[0]) & (freqs <= AUDIBLE_BAND[1])
    w[band] = 10.0 ** (a_weighting_db(freqs[band]) / 20.0)
    return w


def spl_series(seg: AudioSegment, frame_ms: float = 125.0, hop_ms: float = 62.5):
    """Per-frame A-weighted SPL (dBA) and frame start times (s).

    Each frame is tapered with a periodic Hann window, weighted in the
    frequency domain (bins outside 20 Hz-20 kHz dropped), and its RMS
    pressure obtained by Parseval with the window power divided out, then
    20 log10(p / 20 uPa). The taper keeps off-bin tones from leaking into
    neighbouring bins with very different weights. Silent frames report
    ``-inf``.
    """
    L = int(round(frame_ms * 1e-3 * seg.rate))
    hop = int(round(hop_ms * 1e-3 * seg.rate))
    x = seg.samples * seg.gain
    if L < 2 or hop < 1:
        raise ValueError("frame and hop must span at least a couple of samples")
    if x.size < L:
        raise ValueError(f"segment of {x.size} samples is shorter than one {L}-sample frame")
    starts = np.arange(0, x.size - L + 1, hop)
    frames = np.stack([x[s:s + L] for s in starts])
    win = np.hanning(L + 1)[:-1]
    X = np.fft.rfft(frames * win, axis=1) * _frame_weights(L, seg.rate)
    power = np.abs(X) ** 2
    # one-sided spectrum: double every bin except DC and (for even L) Nyquist
    mult = np.full(power.shape[1], 2.0)
    mult[0] = 1.0
    if L % 2 == 0:
        mult[-1] = 1.0
    p_rms = np.sqrt((power * mult).sum(axis=1) / (L * np.sum(win * win)))
    with np.errstate(divide="ignore"):
        spl = np.where(p_rms > 0, 20.0 * np.log10(p_rms / P_REF), SILENT_DB)
    return spl, starts / seg.rate


def _finite(spl) -> np.ndarray:
    s = np.asarray(spl, dtype=np.float64).ravel()
    if s.size == 0:
        raise ValueError("empty SPL series")
    f = s[np.isfinite(s)]
    if f.size == 0:
        raise ValueError("every frame is silent; level undefined")
    return f


def mnl(spl, energy: bool = False) -> float:
    """Mean noise level: arithmetic mean of frame dB values (or energy mean)."""
    f = _finite(spl)
    if energy:
        return float(10.0 * np.log10(np.mean(10.0 ** (f / 10.0))))
    return float(f.mean())


def pnl(spl) -> float:
    """Peak noise level: the loudest frame."""
    return float(_finite(spl).max())


# ------------------------------------------------------------------------- WAV

def read_wav(path, gain: float = 1.0) -> AudioSegment:
    """RIFF/WAVE, PCM 16-bit or 32-bit float; stereo mixed down 0.5/0.5."""
    from scipy.io import wavfile

    rate, data = wavfile.read(path)
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        x = data.astype(np.float64)
    else:
        raise ValueError(f"unsupported WAV sample format {data.dtype} in {path}; "
                         "expected PCM 16-bit or 32-bit float")
    if x.ndim == 2:
        if x.shape[1] == 1:
            x = x[:, 0]
        elif x.shape[1] == 2:
            x = 0.5 * x[:, 0] + 0.5 * x[:, 1]
        else:
            raise ValueError(f"unsupported channel count {x.shape[1]} in {path}")
    return AudioSegment(x, float(rate), gain)


def write_wav(path, samples, rate: int = 48000, fmt: str = "float32") -> None:
    from scipy.io import wavfile

    x = np.asarray(samples, dtype=np.float64)
    if fmt == "float32":
        wavfile.write(path, rate, x.astype(np.float32))
    elif fmt == "pcm16":
        wavfile.write(path, rate, np.clip(np.round(x * 32767.0), -32768, 32767).astype(np.int16))
    else:
        raise ValueError(f"unknown WAV format {fmt!r}")
