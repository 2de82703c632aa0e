"""Seed derivation.

Realization seeds come from a splitmix64 jump of the master seed, so batch
``i`` always gets the same seed regardless of scheduling.  Per-walk streams
are Philox generators keyed by ``(mixed master seed, walk index)``: the key is
the walk's identity, so walks can be simulated in any order or thread.
"""

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .errors import ParameterError

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15


def splitmix64(x):
    z = (x + GOLDEN_GAMMA) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def check_seed(seed):
    seed = int(seed)
    if not 0 <= seed <= MASK64:
        raise ParameterError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return seed


def derive_seed(master, index):
    """Seed of realization ``index`` under ``master``: ``index+1`` splitmix jumps."""
    return splitmix64((check_seed(master) + int(index) * GOLDEN_GAMMA) & MASK64)


def stream(seed, index=0):
    """Independent counter-based generator for item ``index`` of a batch."""
    key = (splitmix64(check_seed(seed)) << 64) | (int(index) & MASK64)
    return np.random.Generator(np.random.Philox(key=key))


def thread_count():
    try:
        return max(1, int(os.environ.get("RCM_THREADS", "1")))
    except ValueError:
        return 1


def map_ordered(fn, items, threads=None):
    """``[fn(x) for x in items]`` on a bounded pool, results in input order."""
    items = list(items)
    threads = thread_count() if threads is None else threads
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
