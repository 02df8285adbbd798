"""Time the numba kernels against the pure-numpy fallback.

Shapes follow one training step of the default network (batch 256,
27x27 patches, 3x3 convolutions, 2x2 pooling) and one inference chunk of
vote accumulation. Outputs of both backends are compared before timing.

    python3 benchmarks/bench_kernels.py --repeat 5
"""

import argparse
import timeit

import numpy as np

from cracknet.kernels import _numba, _numpy


def cases(rng, batch, s):
    x1 = rng.standard_normal((batch, 29, 29, 3)).astype(np.float32)
    x3 = rng.standard_normal((batch, 15, 15, 16)).astype(np.float32)
    col = rng.standard_normal((batch, 13, 13, 3, 3, 16)).astype(np.float32)
    act = rng.standard_normal((batch, 27, 27, 16)).astype(np.float32)
    _, argmax = _numpy.maxpool_forward(act, 2, 2)
    dpool = rng.standard_normal(argmax.shape).astype(np.float32)
    windows = rng.random((4096, s, s))
    ys = rng.integers(0, 128, 4096)
    xs = rng.integers(0, 128, 4096)

    def votes(mod):
        vs, vc = np.zeros((128, 128)), np.zeros((128, 128), np.int64)
        mod.accumulate_votes(vs, vc, windows, ys, xs)
        return vs, vc

    return {
        "im2col conv1": lambda mod: mod.im2col(x1, 3, 3, 1, 27, 27),
        "im2col conv3": lambda mod: mod.im2col(x3, 3, 3, 1, 13, 13),
        "col2im conv3": lambda mod: mod.col2im(col, (batch, 15, 15, 16), 1),
        "maxpool fwd": lambda mod: mod.maxpool_forward(act, 2, 2),
        "maxpool bwd": lambda mod: mod.maxpool_backward(dpool, argmax, act.shape, 2, 2),
        "votes 4096": votes,
    }


def _same(a, b):
    if isinstance(a, tuple):
        return all(_same(u, v) for u, v in zip(a, b))
    return np.allclose(a, b, rtol=1e-6, atol=1e-6)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, default=256)
    ap.add_argument("--s", type=int, default=5)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    table = cases(np.random.default_rng(args.seed), args.batch, args.s)
    print(f"{'kernel':<14} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8}")
    for name, fn in table.items():
        if not _same(fn(_numpy), fn(_numba)):  # also triggers compilation
            raise SystemExit(f"{name}: backends disagree")
        t_np = min(timeit.repeat(lambda: fn(_numpy), number=1, repeat=args.repeat)) * 1e3
        t_nb = min(timeit.repeat(lambda: fn(_numba), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<14} {t_np:10.2f} {t_nb:10.2f} {t_np / t_nb:8.1f}x")


if __name__ == "__main__":
    main()
