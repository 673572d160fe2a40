"""Time-slab partitioning and the worker pool that executes slab-local work.

Space-time arrays have shape (m, n). A pool with ``w`` workers splits the
m time blocks into ``w`` contiguous slabs (surplus workers idle when
``m < w``). Work is submitted per slab and results are always combined in
slab order, so outputs are bitwise reproducible for a fixed worker count.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, TypeVar

import numpy as np

T = TypeVar("T")


def slab_bounds(m: int, workers: int) -> list[tuple[int, int]]:
    """Contiguous, non-overlapping cover of range(m) with at most ``workers`` parts."""
    if m < 0 or workers < 1:
        raise ValueError("need m >= 0 and workers >= 1")
    k = min(workers, m) or 1
    edges = [(i * m) // k for i in range(k + 1)]
    return [(edges[i], edges[i + 1]) for i in range(k)]


class SlabPool:
    def __init__(self, workers: int = 1):
        if workers < 1:
            raise ValueError("workers must be >= 1")
        self.workers = workers
        self._executor = ThreadPoolExecutor(workers) if workers > 1 else None

    def map(self, fn: Callable[[int, int], T], m: int) -> list[T]:
        bounds = slab_bounds(m, self.workers)
        if self._executor is None or len(bounds) == 1:
            return [fn(a, b) for a, b in bounds]
        return list(self._executor.map(lambda ab: fn(*ab), bounds))

    def close(self) -> None:
        if self._executor is not None:
            self._executor.shutdown()
            self._executor = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def __repr__(self):
        return f"SlabPool(workers={self.workers})"


SERIAL = SlabPool(1)


def prefix_sum(X: np.ndarray, pool: SlabPool = SERIAL) -> np.ndarray:
    """Inclusive prefix sum over the leading (time) axis.

    Two phases: each slab scans locally, then a sequential pass over slab
    totals produces the carry added to every later slab.
    """
    X = np.asarray(X)
    out = np.empty_like(X, dtype=np.result_type(X, float))
    if len(X) == 0:
        return out

    def local(a, b):
        np.cumsum(X[a:b], axis=0, out=out[a:b])
        return a, b

    bounds = pool.map(local, len(X))
    carries = {}
    carry = np.zeros(X.shape[1:], dtype=out.dtype)
    for a, b in bounds:
        carries[a] = carry
        carry = carry + out[b - 1]

    def offset(a, b):
        if a:
            out[a:b] += carries[a]

    pool.map(offset, len(X))
    return out
