"""Thread-count control for the data-parallel kernels.

Work is always split into fixed-size chunks whose results are combined in chunk
order, so every result is bit-identical regardless of the worker count.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

# numba fixes its pool size at import time; leave room for oversubscription.
os.environ.setdefault("NUMBA_NUM_THREADS", str(max(8, os.cpu_count() or 1)))
os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")

import numba  # noqa: E402

CHUNK = 8192

_threads = 1


def _env_threads() -> int:
    v = os.environ.get("KNPEMI_THREADS")
    return int(v) if v else 1


def get_threads() -> int:
    return _threads


def set_threads(n: int) -> None:
    global _threads
    n = int(n)
    if n < 1:
        raise ValueError(f"thread count must be >= 1, got {n}")
    _threads = n
    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def chunked_map(fn, n_items: int, chunk: int = CHUNK) -> list:
    """Apply ``fn(start, stop)`` over fixed chunks; results in chunk order."""
    bounds = [(s, min(s + chunk, n_items)) for s in range(0, n_items, chunk)]
    if _threads == 1 or len(bounds) <= 1:
        return [fn(a, b) for a, b in bounds]
    with ThreadPoolExecutor(max_workers=_threads) as pool:
        return list(pool.map(lambda ab: fn(*ab), bounds))


set_threads(_env_threads())
