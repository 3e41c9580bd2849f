#!/usr/bin/env python3
"""Check the analytic pixel gradient of the full matching loss against
central finite differences, at both precisions.

Usage: python3 scripts/check_gradients.py [--classes 2] [--size 8] [--width 8]
"""
import argparse
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from attndistill import tensor as T
from attndistill.encoder import EncoderConfig, forward, sample_params
from attndistill.losses import mmd_loss, sam_loss, total_loss
from attndistill.tensor import Tensor


def build_loss(params, reals, pixels, shape):
    syn = Tensor(pixels.reshape(shape), requires_grad=True)
    k = shape[0]
    real_traces = [forward(params, rb, record_grad=False) for rb in reals]
    syn_traces = [forward(params, T.slice_rows(syn, i, i + 1)) for i in range(k)]
    s, per_layer = sam_loss(real_traces, syn_traces, 4.0)
    m = mmd_loss(real_traces, syn_traces)
    tot, _ = total_loss(s, m, 0.01, per_layer)
    return tot, syn


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--classes", type=int, default=2)
    parser.add_argument("--size", type=int, default=8)
    parser.add_argument("--width", type=int, default=8)
    parser.add_argument("--batch", type=int, default=4)
    parser.add_argument("--seed", type=int, default=33)
    args = parser.parse_args()

    cfg = EncoderConfig(depth=3, width=args.width, input_channels=1,
                        input_size=args.size, num_classes=args.classes)
    rng = np.random.default_rng(5)
    shape = (args.classes, 1, args.size, args.size)
    real64 = [rng.normal(size=(args.batch, 1, args.size, args.size))
              for _ in range(args.classes)]
    pixels = rng.normal(size=shape).ravel()

    params64 = sample_params(cfg, args.seed, dtype=np.float64)
    reals64 = [Tensor(r) for r in real64]

    for dtype, h, tol in ((np.float32, 1e-3, 1e-3), (np.float64, 1e-4, 1e-6)):
        t0 = time.time()
        params = sample_params(cfg, args.seed, dtype=dtype)
        reals = [Tensor(r.astype(dtype)) for r in real64]
        tot, syn = build_loss(params, reals, pixels.astype(dtype), shape)
        T.backward(tot)
        analytic = syn.grad.ravel().astype(np.float64)

        numeric = np.zeros_like(pixels)
        for i in range(pixels.size):
            up, down = pixels.copy(), pixels.copy()
            up[i] += h
            down[i] -= h
            fu, _ = build_loss(params64, reals64, up, shape)
            fd, _ = build_loss(params64, reals64, down, shape)
            numeric[i] = (fu.item() - fd.item()) / (2 * h)

        gmax = max(np.abs(analytic).max(), np.abs(numeric).max())
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-4 * gmax)
        worst = float((np.abs(analytic - numeric) / denom).max())
        verdict = "OK" if worst < tol else "TOO LARGE"
        print(f"{np.dtype(dtype).name:8s} max rel err {worst:.3e} "
              f"(tolerance {tol:g}) [{verdict}] in {time.time() - t0:.1f}s")


if __name__ == "__main__":
    main()
