"""Small shared helpers: deterministic parallel map and seeded streams."""

import os
from concurrent.futures import ProcessPoolExecutor

import numpy as np

__all__ = ["parallel_map", "rep_rng", "resolve_threads"]


def resolve_threads(threads=None):
    """Thread-count resolution: explicit value, PLTF_THREADS, else 1."""
    if threads is not None:
        return max(1, int(threads))
    env = os.environ.get("PLTF_THREADS")
    if env:
        return max(1, int(env))
    return 1


def parallel_map(fn, items, threads=1):
    """Map preserving input order; results are independent of worker count."""
    items = list(items)
    threads = min(resolve_threads(threads), len(items)) if items else 1
    if threads <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def rep_rng(seed, rep_index):
    """Independent generator for one replication, derived from (seed, rep)."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(rep_index,)))
