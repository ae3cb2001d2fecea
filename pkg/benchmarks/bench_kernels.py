"""Time each kernel under both backends and check they agree.

    python benchmarks/bench_kernels.py [--repeat N]

Both implementations are always importable from ``ehexit._accel``; the
``EHEXIT_DISABLE_NUMBA`` flag only picks which one the package uses.
"""
import argparse
import timeit

import numpy as np

from ehexit import _accel


def cases(rng):
    x = rng.normal(size=(200, 16, 7, 7))
    w = rng.normal(size=(16, 16, 3, 3))
    img = rng.normal(size=(200, 4, 14, 14))
    wt = rng.normal(size=20000)
    scales = np.geomspace(1e-3, 1.0, 512)
    inc = rng.uniform(0, 0.2, size=20000)
    return {
        "conv2d": (lambda f: f(x, w, 1), _accel.conv2d_numpy, _accel.conv2d_numba),
        "maxpool2d": (lambda f: f(img, 2, 2), _accel.maxpool2d_numpy, _accel.maxpool2d_numba),
        "quant_sq_errors": (lambda f: f(wt, scales, -8, 7), _accel.quant_sq_errors_numpy,
                            _accel.quant_sq_errors_numba),
        "charge_capped": (lambda f: f(0.0, 10.0, inc), _accel.charge_capped_numpy,
                          _accel.charge_capped_numba),
    }


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    print(f"package backend: {_accel.BACKEND} (numba available: {_accel.HAVE_NUMBA})")
    print(f"{'kernel':<16} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8}  max abs diff")
    for name, (call, f_np, f_nb) in cases(np.random.default_rng(0)).items():
        a, b = call(f_np), call(f_nb)  # also warms the jit
        diff = float(np.max(np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float))))
        t_np = min(timeit.repeat(lambda: call(f_np), number=1, repeat=args.repeat)) * 1e3
        t_nb = min(timeit.repeat(lambda: call(f_nb), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<16} {t_np:>10.2f} {t_nb:>10.2f} {t_np / t_nb:>8.2f}  {diff:.2e}")


if __name__ == "__main__":
    main()
