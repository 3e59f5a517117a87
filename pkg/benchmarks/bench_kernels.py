"""Benchmark the compiled Jacobi eigensolver against the numpy fallback.

Times the hot kernel of the pipeline (batched 8x8 Hermitian eigenvalues for
partial-transpose labeling) and the end-to-end labeling throughput, for both
backends, and checks that they agree.

Run:  python3 benchmarks/bench_kernels.py [--batch 5000] [--repeats 5]
"""
import argparse
import time

import numpy as np

from ptqq import kernels_np, states
from ptqq._backend import BACKEND, _compiled


def _hermitian_batch(batch, n, seed=0):
    g = np.random.default_rng(seed)
    z = g.standard_normal((batch, n, n)) + 1j * g.standard_normal((batch, n, n))
    return z + z.conj().transpose(0, 2, 1)


def _time(fn, repeats):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--batch", type=int, default=5000)
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()

    if _compiled is None:
        print("compiled extension not built; only the numpy fallback is timed")
        backends = [("numpy", kernels_np.eigh_batch)]
    else:
        backends = [("numpy", kernels_np.eigh_batch),
                    ("compiled", _compiled.jacobi_eigh_batch)]
        a = _hermitian_batch(64, 8)
        v_np = kernels_np.eigh_batch(a, False)[0]
        v_cy = _compiled.jacobi_eigh_batch(a, 0)[0]
        print(f"backend agreement (64x8x8): {np.max(np.abs(v_np - v_cy)):.3e}")
    print(f"active backend: {BACKEND}\n")

    print(f"{'kernel':34s} " + " ".join(f"{n:>12s}" for n, _ in backends))
    for n in (4, 8, 16):
        mats = _hermitian_batch(args.batch, n)
        row = []
        for _, fn in backends:
            fn(mats[:8], False)
            row.append(_time(lambda: fn(mats, False), args.repeats))
        label = f"eigvals {args.batch}x{n}x{n}"
        print(f"{label:34s} " + " ".join(f"{t * 1e3:10.2f}ms" for t in row))

    spec = states.EnsembleSpec("hilbert_schmidt", seed=0)
    rhos = states.sample_states(spec, args.batch)
    t = _time(lambda: states.label_states(rhos), args.repeats)
    print(f"\nlabel_states {args.batch} states ({BACKEND}): {t * 1e3:.1f}ms "
          f"({args.batch / t:.0f} states/s)")


if __name__ == "__main__":
    main()
