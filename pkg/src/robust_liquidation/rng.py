"""Counter-based random streams for reproducible, thread-count independent Monte Carlo.

Paths are processed in blocks of fixed size.  Block ``j`` of stream ``s``
always draws from the same Philox key, derived from ``(seed, s, j)``, so the
result does not depend on how blocks are scheduled across threads.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence

import numpy as np

BLOCK_SIZE = 4096


def block_generator(seed: int, stream: int, block: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(stream), int(block)))
    return np.random.Generator(np.random.Philox(ss))


def block_sizes(n_paths: int, block_size: int = BLOCK_SIZE) -> list[int]:
    full, rest = divmod(int(n_paths), block_size)
    return [block_size] * full + ([rest] if rest else [])


def map_blocks(fn: Callable[[int, int], object], n_paths: int, threads: int = 1,
               block_size: int = BLOCK_SIZE) -> list:
    """Call ``fn(block_index, block_len)`` for every block, results in block order."""
    sizes = block_sizes(n_paths, block_size)
    if threads <= 1 or len(sizes) <= 1:
        return [fn(j, n) for j, n in enumerate(sizes)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda jn: fn(*jn), enumerate(sizes)))


def mean_and_stderr(x: np.ndarray) -> tuple[float, float]:
    """Sample mean and standard error (pairwise summation, fixed order)."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if n == 0:
        return float("nan"), float("nan")
    m = float(np.sum(x) / n)
    if n == 1:
        return m, float("nan")
    var = float(np.sum((x - m) ** 2) / (n - 1))
    return m, float(np.sqrt(var / n))


def concat(parts: Sequence[np.ndarray]) -> np.ndarray:
    return np.concatenate(list(parts)) if parts else np.empty(0)
