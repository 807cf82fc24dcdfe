"""Write a calibrated test tone for the acoustics command.

usage: python3 scripts/make_tone.py out.wav [--freq 1000] [--db 94] [--seconds 2]
The level is the unweighted SPL for gain 1 Pa per full scale.
"""
import argparse

import numpy as np

from grfpinn.metrics import P_REF, write_wav


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("out")
    ap.add_argument("--freq", type=float, default=1000.0)
    ap.add_argument("--db", type=float, default=74.0)
    ap.add_argument("--seconds", type=float, default=2.0)
    ap.add_argument("--rate", type=int, default=48000)
    args = ap.parse_args()
    p_rms = P_REF * 10 ** (args.db / 20)
    t = np.arange(int(args.seconds * args.rate)) / args.rate
    x = np.sqrt(2) * p_rms * np.sin(2 * np.pi * args.freq * t)
    if np.abs(x).max() > 1:
        raise SystemExit(f"{args.db} dB exceeds full scale at gain 1 Pa/FS")
    write_wav(args.out, x, args.rate)


if __name__ == "__main__":
    main()
