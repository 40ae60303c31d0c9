"""
Parallel helpers — chunked thread maps and fixed-shape reductions.

Work is always cut into chunks of a fixed size that does not depend on the
number of threads, so every chunk performs the same floating point operations
whatever the worker count and results are bit-identical across thread counts.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List

import numpy as np

logger = logging.getLogger(__name__)

DEFAULT_CHUNK_SIZE = 512
SOURCE_BLOCK = 256


def chunked_map(fn: Callable[[np.ndarray], np.ndarray], points: np.ndarray,
                threads: int = 1, chunk_size: int = DEFAULT_CHUNK_SIZE) -> np.ndarray:
    """Apply ``fn`` to fixed-size chunks of ``points`` and concatenate in order."""
    points = np.asarray(points, dtype=float)
    n = points.shape[0]
    if n == 0:
        return fn(points)
    bounds = [(start, min(start + chunk_size, n)) for start in range(0, n, chunk_size)]
    if threads <= 1 or len(bounds) == 1:
        parts = [fn(points[a:b]) for a, b in bounds]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda ab: fn(points[ab[0]:ab[1]]), bounds))
    return np.concatenate(parts, axis=0)


def blocked_source_sum(contribution: Callable[[slice], np.ndarray], n_sources: int,
                       block: int = SOURCE_BLOCK, compensated: bool = False) -> np.ndarray:
    """Sum per-block partial results over source blocks in a fixed order.

    ``contribution(slice)`` returns the partial sum of one source block. Partials
    are stacked and reduced with numpy's pairwise summation, or accumulated
    with Kahan compensation when ``compensated`` is set.
    """
    slices: List[slice] = [slice(a, min(a + block, n_sources)) for a in range(0, n_sources, block)]
    if not compensated:
        return np.sum(np.stack([contribution(sl) for sl in slices]), axis=0)

    total = None
    carry = None
    for sl in slices:
        part = contribution(sl)
        if total is None:
            total = np.array(part, dtype=float)
            carry = np.zeros_like(total)
            continue
        y = part - carry
        t = total + y
        carry = (t - total) - y
        total = t
    return total
