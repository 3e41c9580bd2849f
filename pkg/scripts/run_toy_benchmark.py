#!/usr/bin/env python3
"""Run the desk-scale relational benchmark and print a comparison table.

Distills a synthetic set on the benchmark toy dataset, evaluates it against
the random-coreset and unoptimized-noise baselines plus the two single-loss
ablations, all under one shared evaluation protocol.

Usage: python3 scripts/run_toy_benchmark.py [--skip-ablations]
"""
import argparse
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from attndistill import benchmark


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--skip-ablations", action="store_true",
                        help="only run distilled vs the two selection baselines")
    parser.add_argument("--iters", type=int, default=None,
                        help="override the benchmark's distillation iterations")
    parser.add_argument("--models", type=int, default=None,
                        help="override the number of evaluation models")
    args = parser.parse_args()

    if args.models is not None:
        benchmark.EVAL.num_models = args.models
    over = {} if args.iters is None else {"iterations": args.iters}

    train, test = benchmark.load_benchmark_data()
    print(f"toy benchmark: {benchmark.TOY_SPEC}")
    print(f"encoder: {benchmark.ENCODER}")
    print(f"eval protocol: {benchmark.EVAL}\n")

    runs = [
        ("distilled (joint)", benchmark.distill_config(**over)),
        ("random coreset", "coreset"),
        ("noise (unoptimized)", "noise"),
    ]
    if not args.skip_ablations:
        runs += [
            ("attention-only", benchmark.distill_config(use_mmd=False, **over)),
            ("feature-mean-only", benchmark.distill_config(use_sam=False, lam=1.0, **over)),
        ]

    results = []
    for label, what in runs:
        t0 = time.time()
        if isinstance(what, str):
            res = benchmark.run_pipeline(what, train, test)
        else:
            config = what or benchmark.distill_config()
            last = [None]

            def sink(i, brk, last=last):
                last[0] = brk
                if i % 200 == 0:
                    print(f"  [{label}] iter {i}: total {brk.total:.5f} "
                          f"(sam {brk.l_sam:.5f}, mmd {brk.l_mmd:.5f})")

            res = benchmark.run_pipeline(label, train, test, config=config, sink=sink)
        results.append((label, res, time.time() - t0))
        accs = " ".join(f"{a:.3f}" for a in res.accuracies)
        print(f"{label:22s} mean {res.mean:.3f}  models [{accs}]  ({time.time() - t0:.0f}s)\n")

    print(f"{'pipeline':24s}{'mean acc':>10s}{'time':>8s}")
    for label, res, dt in results:
        print(f"{label:24s}{res.mean:>10.3f}{dt:>7.0f}s")
    base = results[0][1].mean
    print(f"\ndistilled - coreset: {base - results[1][1].mean:+.3f}  "
          f"distilled - noise: {base - results[2][1].mean:+.3f}")


if __name__ == "__main__":
    main()
