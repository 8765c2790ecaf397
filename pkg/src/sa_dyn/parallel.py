"""Ordered fan-out of independent jobs over a thread pool."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

THREADS_ENV = "SA_DYN_THREADS"


def worker_count(default=None):
    """Worker cap from ``SA_DYN_THREADS`` (falls back to the CPU count)."""
    raw = os.environ.get(THREADS_ENV)
    if raw:
        try:
            n = int(raw)
        except ValueError:
            n = 1
        return max(1, n)
    return default or os.cpu_count() or 1


def ordered_map(fn, items, threads=None):
    """``[fn(x) for x in items]``, possibly concurrent, results in input order."""
    items = list(items)
    n = min(threads or worker_count(), max(1, len(items)))
    if n <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
