"""Thread-pool map with deterministic, order-preserving aggregation."""

import os
from concurrent.futures import ThreadPoolExecutor

_ENV_VAR = "MIRRORSELECT_THREADS"


def resolve_threads(threads=None):
    """Number of worker threads: explicit arg, else env var, else CPU count."""
    if threads is not None:
        n = int(threads)
    elif os.environ.get(_ENV_VAR):
        n = int(os.environ[_ENV_VAR])
    else:
        n = os.cpu_count() or 1
    if n < 1:
        raise ValueError(f"thread count must be >= 1, got {n}")
    return n


def parallel_map(fn, items, threads=None):
    """Map ``fn`` over ``items``, preserving input order in the result.

    Results are identical for any thread count: every item is independent
    and the output list is assembled in submission order.
    """
    items = list(items)
    n = resolve_threads(threads)
    if n == 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=min(n, len(items))) as pool:
        return list(pool.map(fn, items))
