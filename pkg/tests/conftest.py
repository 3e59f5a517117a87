"""Shared test configuration.

Pin the pure-numpy eigensolver backend for the suite: on this single-core
box LAPACK's batched path is the faster one at 8x8 (see
benchmarks/bench_kernels.py), and the acceptance criteria label millions
of states.  The compiled kernel itself is still exercised directly by the
backend-agreement test in test_linalg.py.
"""
import os

os.environ.setdefault("PTQQ_BACKEND", "numpy")
