"""Counter-based random streams.

Every stochastic routine draws from Philox generators keyed by
``(seed, stream index)``. Work is split into fixed-size blocks of trials and
block ``b`` always uses stream ``b``, so results do not depend on how many
workers process the blocks or in which order they finish.
"""

from concurrent.futures import ThreadPoolExecutor

import numpy as np

BLOCK_SIZE = 4096


def stream(seed, index=0):
    """Return an independent generator for ``(seed, index)``."""
    if seed is None:
        raise ValueError("a seed is required for reproducible streams")
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(index),))
    return np.random.Generator(np.random.Philox(ss))


def blocks(trials, block_size=BLOCK_SIZE):
    """Split ``trials`` into ``(block index, size)`` pairs."""
    if trials < 0:
        raise ValueError("trials must be nonnegative")
    out = []
    start = 0
    b = 0
    while start < trials:
        n = min(block_size, trials - start)
        out.append((b, n))
        start += n
        b += 1
    return out


def map_blocks(fn, trials, seed, threads=1, block_size=BLOCK_SIZE):
    """Apply ``fn(rng, n)`` to each block and return results in block order."""
    work = blocks(trials, block_size)
    if threads is None or threads <= 1 or len(work) <= 1:
        return [fn(stream(seed, b), n) for b, n in work]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(fn, stream(seed, b), n) for b, n in work]
        return [f.result() for f in futures]
