"""Frame-parallel helpers whose results never depend on the worker count."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence, TypeVar

T = TypeVar("T")


def default_jobs() -> int:
    return os.cpu_count() or 1


def map_ordered(fn: Callable[[int], T], n: int, workers: int = 1) -> list[T]:
    """Evaluate ``fn(0..n-1)`` on up to ``workers`` threads, results in index order."""
    if workers <= 1 or n <= 1:
        return [fn(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=min(workers, n)) as pool:
        return list(pool.map(fn, range(n)))


def chunks(n: int, workers: int) -> Sequence[tuple[int, int]]:
    """Split ``range(n)`` into at most ``workers`` contiguous ``(start, stop)`` spans."""
    workers = max(1, min(workers, n))
    bounds = [round(i * n / workers) for i in range(workers + 1)]
    return [(a, b) for a, b in zip(bounds, bounds[1:]) if b > a]
