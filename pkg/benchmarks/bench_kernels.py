"""Time the compiled kernels against the numpy fallback.

Shapes follow the 300px autoencoder at batch 32 (plus one small case).
Run from the repository root after building the extension::

    python3 benchmarks/bench_kernels.py [--repeat 5] [--batch 32]
"""

import argparse
import time

import numpy as np

from cishmap import kernels

# (label, channels in, channels out, side, kernel, pad)
CONV_CASES = [
    ("conv1 1->4 @300", 1, 4, 300, 3, 1),
    ("conv2 4->8 @150", 4, 8, 150, 3, 1),
    ("conv3 8->16 @75", 8, 16, 75, 3, 1),
    ("conv4 16->32 @25", 16, 32, 25, 3, 1),
]
POOL_CASES = [("pool2 4ch @300", 4, 300, 2), ("pool5 32ch @25", 32, 25, 5)]


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(batch, rng):
    for label, cin, cout, side, k, pad in CONV_CASES:
        x = rng.random((batch, cin, side, side), dtype=np.float32)
        w = rng.standard_normal((cout, cin, k, k)).astype(np.float32)
        gy = rng.standard_normal((batch, cout, side, side)).astype(np.float32)
        yield label + " fwd", lambda m, x=x, w=w, pad=pad: m.conv2d_forward(x, w, 1, pad)
        yield label + " d/dx", lambda m, gy=gy, w=w, side=side, pad=pad: m.conv2d_backward_input(
            gy, w, (side, side), 1, pad)
        yield label + " d/dw", lambda m, x=x, gy=gy, k=k, pad=pad: m.conv2d_backward_weight(x, gy, k, 1, pad)
    for label, ch, side, win in POOL_CASES:
        x = rng.random((batch, ch, side, side), dtype=np.float32)
        yield label + " fwd", lambda m, x=x, win=win: m.maxpool_forward(x, win)
    mask = rng.random((250, 300)) < 0.6
    seed = mask & (rng.random(mask.shape) < 0.001)
    yield "reconstruct 250x300", lambda m: m.reconstruct(seed, mask)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--batch", type=int, default=32)
    args = parser.parse_args(argv)

    names = kernels.available_backends()
    mods = {n: kernels.get(n) for n in names}
    if "cython" not in mods:
        print("compiled kernels are not built; only the numpy fallback is available")
    rng = np.random.default_rng(0)
    header = f"{'case':28s}" + "".join(f"{n:>12s}" for n in names)
    if len(names) == 2:
        header += f"{'speedup':>10s}"
    print(header)
    for label, fn in cases(args.batch, rng):
        t = {n: best_of(lambda: fn(m), args.repeat) for n, m in mods.items()}
        line = f"{label:28s}" + "".join(f"{t[n] * 1e3:10.2f}ms" for n in names)
        if len(names) == 2:
            line += f"{t['python'] / t['cython']:9.2f}x"
        print(line)


if __name__ == "__main__":
    main()
