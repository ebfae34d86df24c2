"""Time the LSTM recurrence on the compiled and the numpy backend.

    python benchmarks/bench_lstm.py [--batch 32] [--steps 22] [--input 100] [--units 256]

Reports the best of ``--repeat`` runs of one forward and one backward pass
through ``vqa_forge.layers.LSTM`` for each available backend.
"""
import argparse
import time

import numpy as np

from vqa_forge import kernels
from vqa_forge.layers import LSTM


def time_backend(backend, batch, steps, d_in, units, repeat, dtype=np.float32):
    rng = np.random.default_rng(0)
    layer = LSTM("bench", d_in, units, rng, dtype)
    x = rng.normal(size=(batch, steps, d_in)).astype(dtype)
    mask = np.arange(steps)[None, :] >= rng.integers(0, steps // 2 + 1, size=(batch, 1))
    dh = rng.normal(size=(batch, units)).astype(dtype)
    fwd, bwd = [], []
    with kernels.use_backend(backend):
        for _ in range(repeat):
            t0 = time.perf_counter()
            out = layer.forward(x, mask)
            t1 = time.perf_counter()
            layer.backward(dh)
            t2 = time.perf_counter()
            fwd.append(t1 - t0)
            bwd.append(t2 - t1)
    return min(fwd), min(bwd), out


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--steps", type=int, default=22)
    p.add_argument("--input", type=int, default=100)
    p.add_argument("--units", type=int, default=256)
    p.add_argument("--repeat", type=int, default=20)
    args = p.parse_args(argv)

    backends = ["python"] + (["cython"] if kernels.compiled_kernels is not None else [])
    print(f"LSTM batch={args.batch} steps={args.steps} input={args.input} units={args.units} float32")
    print(f"{'backend':<8} {'forward ms':>11} {'backward ms':>12}")
    rows = {}
    for name in backends:
        f, b, out = time_backend(name, args.batch, args.steps, args.input, args.units, args.repeat)
        rows[name] = (f, b, out)
        print(f"{name:<8} {1e3 * f:>11.3f} {1e3 * b:>12.3f}")
    if len(rows) == 2:
        (pf, pb, po), (cf, cb, co) = rows["python"], rows["cython"]
        print(f"speedup  {pf / cf:>10.2f}x {pb / cb:>11.2f}x   (max |diff| {np.abs(po - co).max():.1e})")
    else:
        print("compiled extension not built; only the numpy backend was timed")
    return rows


if __name__ == "__main__":
    main()
