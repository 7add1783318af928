"""Compare the compiled kernels with the numpy fallback.

    python benchmarks/bench_kernels.py [--repeats 20] [--json out.json]

Times each hot kernel on shapes taken from the default 64x64 network, plus
one full training step (forward, joint loss, backward) per backend.
"""
import argparse
import json
import sys
import timeit

import numpy as np

from duedl import kernels
from duedl.dualnet import DualNet
from duedl.losses import ScribbleMask
from duedl.train import TrainConfig, training_step


def cases(rng):
    x = rng.normal(size=(8, 16, 32, 32))
    cols = kernels.BACKENDS["python"].im2col(x, 3, 3, 1, 1)
    pooled_idx = kernels.BACKENDS["python"].maxpool2_forward(x)[1]
    grad = rng.normal(size=pooled_idx.shape)
    feat = rng.random((64, 64)) < 0.05
    return {
        "im2col 8x16x32x32 k3": lambda b: b.im2col(x, 3, 3, 1, 1),
        "col2im 8x16x32x32 k3": lambda b: b.col2im(cols, x.shape, 3, 3, 1, 1),
        "maxpool2 fwd 8x16x32x32": lambda b: b.maxpool2_forward(x),
        "maxpool2 bwd 8x16x32x32": lambda b: b.maxpool2_backward(grad, pooled_idx),
        "edt 64x64": lambda b: b.edt_sq(feat),
    }


def train_step_case(rng):
    images = rng.random((8, 1, 64, 64))
    labels = rng.integers(0, 4, size=(8, 64, 64))
    labels[rng.random((8, 64, 64)) > 0.03] = 4
    scribble = ScribbleMask(labels, 4)
    cfg = TrainConfig()

    def run(_):
        net = DualNet(cfg.net_config(4))
        loss, _ = training_step(net, images, scribble, cfg, 1)
        from duedl import tensor as T
        T.backward(loss)

    return run


def best_of(fn, backend, repeats):
    fn(backend)  # warm-up
    return min(timeit.repeat(lambda: fn(backend), number=1, repeat=repeats))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=20)
    ap.add_argument("--step-repeats", type=int, default=3)
    ap.add_argument("--json", help="also write results to this file")
    args = ap.parse_args(argv)
    if "cython" not in kernels.BACKENDS:
        print("compiled extension not built; only the fallback is available", file=sys.stderr)
    rng = np.random.default_rng(0)
    results = {}
    names = sorted(kernels.BACKENDS)
    for label, fn in cases(rng).items():
        results[label] = {n: best_of(fn, kernels.BACKENDS[n], args.repeats) for n in names}
    step = train_step_case(rng)
    prev = kernels.backend
    results["training step (batch 8, 64x64)"] = {}
    for n in names:
        kernels.use(n)
        results["training step (batch 8, 64x64)"][n] = best_of(step, None, args.step_repeats)
    kernels.backend = prev

    width = max(len(k) for k in results)
    header = f"{'kernel':<{width}}  " + "  ".join(f"{n + ' ms':>11}" for n in names)
    if len(names) == 2:
        header += "  speedup"
    print(header)
    for label, row in results.items():
        line = f"{label:<{width}}  " + "  ".join(f"{row[n] * 1e3:11.3f}" for n in names)
        if len(names) == 2:
            line += f"  {row['python'] / row['cython']:7.2f}x"
        print(line)
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=1)


if __name__ == "__main__":
    main()
