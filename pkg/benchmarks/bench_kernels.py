"""Compare the compiled and pure-Python kernels on the hot loops.

    python benchmarks/bench_kernels.py [--repeat 3]

Prints the best wall time per kernel and backend, the speed-up, and the
largest difference between the two backends' outputs.  Rounding differences
grow chaotically along the base orbit, so event states are compared over the
first 10 returns only.
"""

import argparse
import timeit

import numpy as np

from cocyclelab import kernels
from cocyclelab.cocycles import CocycleGenerator
from cocyclelab.flows import DEFAULT_CONFIG, VectorFieldSpec, kernel_model


def cases():
    lorenz = VectorFieldSpec.lorenz()
    y0 = np.array([1.0, 1.0, 20.0])
    gen = CocycleGenerator.random(2, seed=0)
    gmodel = gen.kernel_model(lorenz)
    gy0 = np.concatenate([y0, np.eye(2).ravel()])
    tmodel = kernel_model(lorenz, block=1, m=3)
    ty0 = np.concatenate([y0, np.eye(3).ravel()])
    opts = DEFAULT_CONFIG.opts()
    B = np.random.default_rng(0).standard_normal((3, 3))
    return {
        "integrate (base, T=20)":
            (lambda be: be.integrate(kernel_model(lorenz), y0, 20.0, opts, False), 1),
        "integrate (tangent, T=5)":
            (lambda be: be.integrate(tmodel, ty0, 5.0, opts, False), 1),
        "integrate_events (cocycle, 50 returns)":
            (lambda be: be.integrate_events(gmodel, gy0, 200.0, [0, 0, 27.0], [0, 0, 1.0], -1,
                                            0.05, 50, opts, True), 2),
        "lyapunov_flow (cocycle, T=20)":
            (lambda be: be.lyapunov_flow(gmodel, gy0, 0.5, 40, opts), 1),
        "qr (3x3)": (lambda be: be.qr(B), 0),
    }


def first_array(out, idx, rows=10):
    return np.asarray(out[idx][:rows], dtype=float).ravel()


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    py = kernels.get_backend("python")
    try:
        cy = kernels.get_backend("compiled")
    except ImportError:
        print("compiled kernel not available; build it with `pip install -e . --no-build-isolation`")
        return 1
    print(f"{'kernel':42s} {'python s':>10s} {'compiled s':>11s} {'speed-up':>9s} {'max diff':>9s}")
    for name, (fn, idx) in cases().items():
        number = 200 if name.startswith("qr") else 1
        tp = min(timeit.repeat(lambda: fn(py), number=number, repeat=args.repeat)) / number
        tc = min(timeit.repeat(lambda: fn(cy), number=number, repeat=args.repeat)) / number
        a, b = fn(py), fn(cy)
        if idx == 0:
            diff = max(np.max(np.abs(x - y)) for x, y in zip(a, b))
        else:
            diff = np.max(np.abs(first_array(a, idx) - first_array(b, idx)))
        print(f"{name:42s} {tp:10.4f} {tc:11.5f} {tp / tc:8.1f}x {diff:9.1e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
