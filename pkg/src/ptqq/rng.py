"""Reproducible random streams.

Streams are derived counter-based (Philox) from (master seed, stream index),
so sample i is the same no matter how work is split across workers.
"""
import numpy as np

_STREAM_SALT = 0x9E3779B97F4A7C15


def stream(seed, index=0):
    """Independent generator for sample/run `index` under `seed`."""
    key = np.array([(seed ^ _STREAM_SALT) & 0xFFFFFFFFFFFFFFFF,
                    index & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def substreams(seed, start, count):
    """Streams for indices start..start+count-1."""
    return [stream(seed, start + i) for i in range(count)]
