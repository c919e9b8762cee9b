#!/usr/bin/env python3
"""Benchmark the compiled kernel backend against the numpy fallback.

Times each kernel on training-realistic shapes, then an end-to-end
training-step comparison driven through the selected backend.

Usage:
    python benchmarks/bench_kernels.py [--steps 200] [--repeat 2000]
"""
import argparse
import time

import numpy as np

from dispgan.kernels import _numpy

try:
    from dispgan.kernels import _native
except ImportError:
    _native = None


def time_call(fn, args, repeat):
    fn(*args)  # warm up
    t0 = time.perf_counter()
    for _ in range(repeat):
        fn(*args)
    return (time.perf_counter() - t0) / repeat


def bench_kernels(repeat):
    rng = np.random.default_rng(0)
    b, w = 25, 64
    x = rng.normal(size=(b, w))
    g = rng.normal(size=(b, w))
    gamma = rng.normal(size=(b, w))
    beta = rng.normal(size=(b, w))
    p = rng.normal(size=w * w)
    pg = rng.normal(size=w * w)
    m = np.zeros(w * w)
    v = np.zeros(w * w)
    shadow = rng.normal(size=w * w)
    cloud_a = rng.normal(size=(256, 8))
    cloud_b = rng.normal(size=(256, 8))

    cases = [
        ("leaky_relu_fwd", (x, 0.2)),
        ("leaky_relu_bwd", (x, g, 0.2)),
        ("softplus_fwd", (x,)),
        ("hinge_fwd", (x, 1.0)),
        ("scale_shift_fwd", (x, gamma, beta)),
        ("scale_shift_bwd", (x, gamma, g)),
        ("batchnorm_fwd", (x, 1e-5)),
        ("adam_update", (p, pg, m, v, 3, 2e-4, 0.0, 0.999, 1e-8)),
        ("ema_update", (shadow, p, 0.999)),
        ("pairwise_sqdist", (cloud_a, cloud_b)),
    ]
    print(f"{'kernel':<18}{'numpy (us)':>12}{'native (us)':>13}{'speedup':>9}")
    for name, args in cases:
        t_np = time_call(getattr(_numpy, name), args, repeat) * 1e6
        if _native is None:
            print(f"{name:<18}{t_np:>12.2f}{'-':>13}{'-':>9}")
            continue
        t_nat = time_call(getattr(_native, name), args, repeat) * 1e6
        print(f"{name:<18}{t_np:>12.2f}{t_nat:>13.2f}{t_np / t_nat:>8.1f}x")


def bench_train_step(steps):
    import importlib
    import os
    import subprocess
    import sys

    script = (
        "import time, numpy as np\n"
        "from dispgan.data import TransferProtocol, make_transfer\n"
        "from dispgan.nets import ExtractorSpec, pretrain_extractor\n"
        "from dispgan.prior import extract_priors\n"
        "from dispgan.train import TrainConfig, TrainState, train_step\n"
        "import dispgan.kernels as K\n"
        "splits = make_transfer(TransferProtocol(n_target=128, source_n=1000), seed=0)\n"
        "ext = pretrain_extractor(splits.source, ExtractorSpec(out_dim=8, steps=200, seed=0))\n"
        "priors = extract_priors(splits.target_train, ext)\n"
        f"cfg = TrainConfig(total_steps={steps}, log_every=0, fid_every=0, seed=0)\n"
        "state = TrainState(cfg, splits.target_train, splits.target_val, priors)\n"
        "train_step(state, cfg)\n"
        "t0 = time.perf_counter()\n"
        f"for _ in range({steps}):\n"
        "    train_step(state, cfg)\n"
        f"dt = (time.perf_counter() - t0) / {steps}\n"
        "print(f'{K.BACKEND}: {dt * 1e3:.2f} ms/step')\n"
    )
    print(f"\nend-to-end training step ({steps} steps, batch 25, d_steps 4):")
    for backend in ("python", "native"):
        env = dict(os.environ, DISPGAN_KERNELS=backend)
        proc = subprocess.run([sys.executable, "-c", script], env=env,
                              capture_output=True, text=True)
        line = proc.stdout.strip() or proc.stderr.strip().splitlines()[-1]
        print(f"  {line}")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=2000)
    ap.add_argument("--steps", type=int, default=200)
    args = ap.parse_args()
    if _native is None:
        print("compiled backend unavailable; showing numpy timings only\n")
    bench_kernels(args.repeat)
    bench_train_step(args.steps)


if __name__ == "__main__":
    main()
