"""Time the compiled resampling kernels against the pure-Python fallback.

    python benchmarks/bench_resample.py [--repeats N]

Workloads are the hot paths of a full-size forward/backward pass: the image
polar transform (3 x 352 x 352 -> 3 x 176 x 224) and the stage-1 feature
warps (32 channels, table forward and adjoint).
"""

import argparse
import timeit

import numpy as np

from arcnet import _resample_py, geometry

try:
    from arcnet import _resample
except ImportError:
    _resample = None


def workloads(rng):
    H = W = 352
    rho, theta = 176, 224
    image = rng.random((3, H, W))
    ys, xs = geometry.polar_coords(H, W, rho, theta)
    idx, w = geometry.polar_table(H // 2, W // 2, rho // 2, theta // 2)
    feats = rng.random((32, (H // 2) * (W // 2)))
    grads = rng.random((32, idx.shape[0]))

    def table_forward(k):
        out = np.empty((feats.shape[0], idx.shape[0]))
        return lambda: k.apply_table(feats, idx, w, out)

    def table_adjoint(k):
        # the adjoint accumulates, so each call gets a fresh zeroed buffer
        return lambda: k.apply_table_adjoint(grads, idx, w, np.zeros_like(feats))

    return {
        "to_polar 3x352x352": lambda k: (lambda: k.sample(image, ys, xs, 0, 0)),
        "warp forward 32ch": table_forward,
        "warp adjoint 32ch": table_adjoint,
    }


def best_ms(fn, repeats):
    fn()
    return 1000 * min(timeit.repeat(fn, number=1, repeat=repeats))


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=7)
    args = parser.parse_args(argv)
    if _resample is None:
        print("compiled extension not built; run `python setup.py build_ext --inplace`")
        return 1
    rng = np.random.default_rng(0)
    print(f"{'workload':24s} {'cython ms':>10s} {'python ms':>10s} {'speed-up':>9s}")
    for name, make in workloads(rng).items():
        fast, slow = make(_resample), make(_resample_py)
        a, b = fast(), slow()
        if a is not None and not np.allclose(a, b, atol=1e-12):
            raise SystemExit(f"{name}: backends disagree")
        t_fast, t_slow = best_ms(fast, args.repeats), best_ms(slow, args.repeats)
        print(f"{name:24s} {t_fast:10.2f} {t_slow:10.2f} {t_slow / t_fast:8.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
