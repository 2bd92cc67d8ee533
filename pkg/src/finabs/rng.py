"""Reproducible sample streams that do not depend on the worker count.

Samples are produced in fixed-size blocks; block ``b`` of a run seeded with
``seed`` always comes from ``Philox`` keyed on ``(seed, b)``. Workers pick up
whole blocks and results are reassembled in block order, so any worker count
yields the same arrays bit for bit.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence, TypeVar

import numpy as np

from .geometry import BoxRegion

BLOCK_SIZE = 4096

T = TypeVar("T")


def block_generator(seed: int, block: int) -> np.random.Generator:
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, int(block)])
    return np.random.Generator(np.random.Philox(ss))


def block_sizes(samples: int, block_size: int = BLOCK_SIZE) -> list[int]:
    full, rest = divmod(int(samples), block_size)
    return [block_size] * full + ([rest] if rest else [])


def uniform_block(domain: BoxRegion, seed: int, block: int, size: int) -> np.ndarray:
    u = block_generator(seed, block).random((size, domain.dim))
    lo = np.asarray(domain.lo)
    return lo + u * domain.widths


def map_ordered(fn: Callable[[int], T], count: int, workers: int = 1) -> list[T]:
    """``[fn(0), ..., fn(count-1)]``, optionally evaluated on a thread pool."""
    if workers <= 1 or count <= 1:
        return [fn(i) for i in range(count)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(count)))


def sample_map(
    domain: BoxRegion,
    samples: int,
    seed: int,
    fn: Callable[[np.ndarray], np.ndarray],
    workers: int = 1,
    block_size: int = BLOCK_SIZE,
) -> np.ndarray:
    """Apply ``fn`` to uniform sample blocks and concatenate the per-sample results."""
    sizes = block_sizes(samples, block_size)

    def run(b: int) -> np.ndarray:
        return np.asarray(fn(uniform_block(domain, seed, b, sizes[b])))

    parts: Sequence[np.ndarray] = map_ordered(run, len(sizes), workers)
    return np.concatenate(parts, axis=0)


def mean_and_stderr(values: np.ndarray) -> tuple[float, float]:
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        raise ValueError("need at least two samples for a standard error")
    # np.sum uses a fixed pairwise order for a given array, so this is bit-stable.
    mean = float(np.sum(v) / v.size)
    var = float(np.sum((v - mean) ** 2) / (v.size - 1))
    return mean, float(np.sqrt(var / v.size))
