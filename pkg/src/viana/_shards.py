"""Deterministic sharding for Monte Carlo drivers.

Shard ``i`` of a run seeded with ``seed`` draws from
``SeedSequence([seed, i])``; results are concatenated in shard order, so a
run is bit-identical for a fixed ``(seed, shards)`` whatever the number of
worker threads.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np


def shard_sizes(total: int, shards: int) -> list[int]:
    if shards < 1:
        raise ValueError("shards must be >= 1")
    base, extra = divmod(int(total), int(shards))
    return [base + (i < extra) for i in range(shards)]


def shard_rng(seed: int, shard: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed) & (2 ** 64 - 1), int(shard)]))


def map_shards(fn, seed: int, total: int, shards: int = 1, workers: int = 1) -> list:
    """Call ``fn(rng, size, shard_index)`` for every shard; results in shard order."""
    sizes = shard_sizes(total, shards)
    jobs = [(shard_rng(seed, i), n, i) for i, n in enumerate(sizes)]
    if workers <= 1 or shards == 1:
        return [fn(*job) for job in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda job: fn(*job), jobs))
