"""Time the compiled kernels against the numpy fallback.

Run with ``python3 benchmarks/bench_kernels.py [--batch 64] [--repeat 5]``.
Both backends are fed identical inputs and their outputs are compared
before any timing is reported.
"""
import argparse
import timeit

import numpy as np

from reasonlayers import _pykernels as py

try:
    from reasonlayers import _ckernels as cy
except ImportError:  # extension not built
    cy = None


def _problems(rng, batch, d, mu=0.1, L=1.0):
    V = np.linalg.qr(rng.normal(size=(batch, d, d)))[0]
    lam = rng.uniform(mu, L, size=(batch, d))
    Q = np.einsum("bij,bj,bkj->bik", V, lam, V)
    b = rng.uniform(-5, 5, size=(batch, d))
    return np.ascontiguousarray(Q), b


def _cases(rng, batch, d, k):
    Q, b = _problems(rng, batch, d)
    up = rng.normal(size=(batch, d))
    phi, beta = 1.0, 0.5
    ys_gd = py.gd_forward(Q, b, phi, k)
    ys, zs = py.nag_forward(Q, b, phi, beta, k)
    A = Q[0]
    return {
        f"gd_forward  k={k}": lambda m: m.gd_forward(Q, b, phi, k),
        f"gd_backward k={k}": lambda m: m.gd_backward(Q, b, phi, ys_gd, up),
        f"nag_forward k={k}": lambda m: m.nag_forward(Q, b, phi, beta, k),
        f"nag_backward k={k}": lambda m: m.nag_backward(Q, b, phi, beta, ys, zs, up),
        f"jacobi_eig d={d}": lambda m: m.jacobi_eig(A, 1e-14, 50)[0],
    }


def _same(a, b):
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    if np.ndim(a) == 1 and np.ndim(b) == 1 and np.size(a) == np.size(b) and np.size(a) > 1:
        a, b = np.sort(a), np.sort(b)
    return np.allclose(a, b, rtol=1e-10, atol=1e-12)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--dim", type=int, default=5)
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)
    if cy is None:
        print("compiled extension not built; run `pip install -e . --no-build-isolation` first")
        return 1
    rng = np.random.default_rng(args.seed)
    print(f"batch={args.batch} d={args.dim} best of {args.repeat}")
    print(f"{'kernel':<20}{'python ms':>12}{'cython ms':>12}{'speedup':>10}")
    for k in (10, 100):
        for label, fn in _cases(rng, args.batch, args.dim, k).items():
            if label.startswith("jacobi") and k != 10:
                continue
            if not _same(fn(py), fn(cy)):
                raise SystemExit(f"backends disagree on {label}")
            n = max(1, int(0.05 / max(timeit.timeit(lambda: fn(py), number=1), 1e-6)))
            tp = min(timeit.repeat(lambda: fn(py), number=n, repeat=args.repeat)) / n
            tc = min(timeit.repeat(lambda: fn(cy), number=n, repeat=args.repeat)) / n
            print(f"{label:<20}{tp * 1e3:>12.3f}{tc * 1e3:>12.3f}{tp / tc:>9.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
