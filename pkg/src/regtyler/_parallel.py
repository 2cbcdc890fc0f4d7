"""Deterministic fan-out of independent tasks.

Solver loops are dominated by interpreter overhead on small matrices, so
threads do not help; workers are separate processes. Results come back in
input order, which keeps every reduction order fixed.
"""

from concurrent.futures import ProcessPoolExecutor


def parallel_map(fn, items, workers=1):
    """``[fn(*args) for args in items]``, optionally on ``workers`` processes."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(*args) for args in items]
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(fn, *zip(*items)))
