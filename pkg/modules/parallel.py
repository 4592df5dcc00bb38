"""
SurfMorph Parallel Helpers
Deterministic chunked execution over a thread pool
"""

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Optional, Sequence

THREADS_ENV = "SURFMORPH_THREADS"


def default_threads() -> int:
    """Thread count from the environment, falling back to 1"""
    value = os.environ.get(THREADS_ENV, "")
    try:
        return max(1, int(value))
    except ValueError:
        return 1


def chunk_bounds(n_items: int, chunk_size: int) -> List[Sequence[int]]:
    """Split range(n_items) into contiguous (start, stop) chunks"""
    chunk_size = max(1, int(chunk_size))
    return [(start, min(start + chunk_size, n_items)) for start in range(0, n_items, chunk_size)]


def chunked_map(func: Callable[[int, int], object], n_items: int,
                threads: Optional[int] = None, chunk_size: int = 2048) -> List[object]:
    """Apply func(start, stop) to every chunk and return results in chunk order.

    The partition into chunks depends only on n_items and chunk_size, so the
    concatenated result is identical for any thread count.
    """
    bounds = chunk_bounds(n_items, chunk_size)
    if threads is None:
        threads = default_threads()
    if threads <= 1 or len(bounds) <= 1:
        return [func(start, stop) for start, stop in bounds]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(func, start, stop) for start, stop in bounds]
        return [future.result() for future in futures]
