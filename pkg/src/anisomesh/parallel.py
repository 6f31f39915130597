"""Thread pool helpers; ANISOMESH_THREADS caps the worker count."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor


def max_workers() -> int:
    env = os.environ.get("ANISOMESH_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return max(1, min(8, os.cpu_count() or 1))


def ordered_map(fn, items):
    """``list(map(fn, items))`` on a thread pool, results in input order."""
    items = list(items)
    n = max_workers()
    if n == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as ex:
        return list(ex.map(fn, items))
