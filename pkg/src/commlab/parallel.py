"""Sample-level parallelism.

Samples are independent, so work is distributed per sample index and the
results are returned in index order; output never depends on the worker count.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor


def worker_count(workers: int | None = None) -> int:
    """Explicit value, else ``COMMLAB_WORKERS``, else the number of usable cores."""
    if workers is None:
        env = os.environ.get("COMMLAB_WORKERS")
        workers = int(env) if env else len(os.sched_getaffinity(0))
    return max(1, int(workers))


def map_samples(func, args, workers: int | None = None) -> list:
    """``[func(x) for x in args]``, possibly evaluated in a process pool."""
    args = list(args)
    n = worker_count(workers)
    if n == 1 or len(args) < 2:
        return [func(x) for x in args]
    with ProcessPoolExecutor(max_workers=min(n, len(args))) as pool:
        return list(pool.map(func, args))
