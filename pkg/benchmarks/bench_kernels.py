#!/usr/bin/env python3
"""Benchmark the compiled kernel lane against the pure-numpy fallback.

Times the per-batch chain the training loop leans on (row softmax, row
entropies, and both backward passes) across representative batch/class
shapes, plus one full optimizer step on the bundled synthetic benchmark.

Usage:
    python benchmarks/bench_kernels.py [--repeats 7]
"""

import argparse
import time

import numpy as np

from protogzsl.kernels import _pykern

try:
    from protogzsl.kernels import _ckern
except ImportError:
    _ckern = None


def chain(mod, logits, dprobs, floor=1e-12):
    probs = mod.softmax_rows(logits)
    h = mod.entropy_rows(probs, floor)
    dp = mod.entropy_rows_grad(probs, floor)
    ds = mod.softmax_backward_rows(probs, dp + dprobs)
    return probs, h, ds


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def bench_shapes(repeats):
    rng = np.random.default_rng(0)
    shapes = [(512, 4), (512, 16), (512, 50), (512, 200), (512, 717),
              (2048, 50)]
    print(f"{'shape':>12} {'numpy (ms)':>12} {'cython (ms)':>12} "
          f"{'speedup':>8}")
    for n, k in shapes:
        logits = rng.normal(0, 3, (n, k))
        dprobs = rng.normal(0, 1, (n, k))
        t_py = best_of(lambda: chain(_pykern, logits, dprobs), repeats)
        if _ckern is None:
            print(f"{n}x{k:>5} {1e3 * t_py:>12.3f} {'n/a':>12} {'':>8}")
            continue
        t_cy = best_of(lambda: chain(_ckern, logits, dprobs), repeats)
        print(f"{n}x{k:>6} {1e3 * t_py:>12.3f} {1e3 * t_cy:>12.3f} "
              f"{t_py / t_cy:>7.2f}x")


def bench_train_step(repeats):
    """One full epoch of the synthetic benchmark per lane."""
    import importlib
    import os

    from protogzsl.data import synth_benchmark
    from protogzsl.losses import LossConfig
    from protogzsl.train import TrainConfig, train_deterministic

    bundle = synth_benchmark(42)
    cfg = TrainConfig(max_epochs=20, min_epochs=0, patience=10 ** 6,
                      eval_every=10 ** 6)

    results = {}
    for lane, env in (("numpy", "1"), ("cython", "")):
        if lane == "cython" and _ckern is None:
            continue
        os.environ["PROTOGZSL_PURE_PYTHON"] = env
        import protogzsl.kernels
        import protogzsl.losses
        import protogzsl.proto
        import protogzsl.evaluation
        import protogzsl.train
        importlib.reload(protogzsl.kernels)
        importlib.reload(protogzsl.proto)
        importlib.reload(protogzsl.losses)
        importlib.reload(protogzsl.evaluation)
        importlib.reload(protogzsl.train)
        from protogzsl.train import train_deterministic as run

        def once():
            run(bundle, cfg)

        results[lane] = best_of(once, max(2, repeats // 3))
    os.environ.pop("PROTOGZSL_PURE_PYTHON", None)

    print("\n20 training epochs on the bundled synthetic benchmark:")
    for lane, t in results.items():
        print(f"  {lane:>7}: {t:.3f} s")
    if len(results) == 2:
        print(f"  speedup: {results['numpy'] / results['cython']:.2f}x")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=7)
    args = parser.parse_args()
    if _ckern is None:
        print("compiled kernels unavailable; showing numpy lane only\n")
    bench_shapes(args.repeats)
    bench_train_step(args.repeats)


if __name__ == "__main__":
    main()
