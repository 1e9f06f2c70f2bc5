"""Fixed-chunk replica scheduling.

Replicas are split into chunks whose size depends only on the problem shape,
never on the number of workers.  Chunks run on a thread pool (the numba
kernels release the GIL) and their partial results come back in chunk order,
so every reduction sees the same operands in the same order.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

WORKERS_ENV = "ARRATIA_LAB_WORKERS"
_BUDGET = 2**22  # floats per path array in one chunk


def worker_count(workers: int | None = None) -> int:
    if workers is None:
        raw = os.environ.get(WORKERS_ENV, "").strip()
        workers = int(raw) if raw else 1
    if workers < 1:
        raise ValueError(f"worker count must be positive, got {workers}")
    return workers


def chunk_size(n: int, m: int) -> int:
    return max(16, min(4096, _BUDGET // (n * (m + 1))))


def chunks(total: int, size: int) -> list[tuple[int, int]]:
    return [(a, min(a + size, total)) for a in range(0, total, size)]


def map_chunks(fn, total: int, size: int, workers: int | None = None) -> list:
    """``[fn(start, stop) for each chunk]`` in chunk order."""
    spans = chunks(total, size)
    workers = worker_count(workers)
    if workers == 1 or len(spans) <= 1:
        return [fn(a, b) for a, b in spans]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda span: fn(*span), spans))
