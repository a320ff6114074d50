"""Compare the compiled kernels with the NumPy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Both backends receive identical inputs; outputs are checked for agreement
before timings are reported.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from core_ecg._kernels import _fallback

try:
    from core_ecg._kernels import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def _stdm_inputs(count, C=12, N=30, k=4, seed=0):
    rng = np.random.default_rng(seed)
    return rng.random((count, N)), rng.random((count, N, k)), rng.random((count, N, C))


def _bench(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def run(repeat: int = 5) -> list[dict]:
    rows = []
    for count in (1, 256, 10_000):
        ut, up, ud = _stdm_inputs(count)
        call = lambda mod: mod.stdm_codes(ut, up, ud, 0.5, 0.2, 4, 12)  # noqa: E731
        row = {"kernel": "stdm_codes", "size": f"{count} plans", "python_s": _bench(lambda: call(_fallback), repeat)}
        if _ckernels is not None:
            assert np.array_equal(call(_fallback), call(_ckernels))
            row["cython_s"] = _bench(lambda: call(_ckernels), repeat)
        rows.append(row)
    for C, K in ((12, 1126), (12 * 64, 1126)):
        A = np.random.default_rng(1).random((C, K))
        row = {"kernel": "fda_noise_scale", "size": f"{C}x{K}",
               "python_s": _bench(lambda: _fallback.fda_noise_scale(A, 1e-6), repeat)}
        if _ckernels is not None:
            lp, tp = _fallback.fda_noise_scale(A, 1e-6)
            lc, tc = _ckernels.fda_noise_scale(A, 1e-6)
            np.testing.assert_allclose(lc, lp, rtol=1e-12, atol=1e-12)
            np.testing.assert_array_equal(tc, tp)
            row["cython_s"] = _bench(lambda: _ckernels.fda_noise_scale(A, 1e-6), repeat)
        rows.append(row)
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if _ckernels is None:
        print("compiled extension not available; timing the fallback only")
    print(f"{'kernel':<16} {'size':<14} {'python ms':>10} {'cython ms':>10} {'speedup':>8}")
    for r in run(args.repeat):
        c = r.get("cython_s")
        cy = f"{1e3 * c:10.3f}" if c else f"{'-':>10}"
        sp = f"{r['python_s'] / c:8.1f}" if c else f"{'-':>8}"
        print(f"{r['kernel']:<16} {r['size']:<14} {1e3 * r['python_s']:10.3f} {cy} {sp}")


if __name__ == "__main__":
    main()
