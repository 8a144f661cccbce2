"""Counter-based random streams.

All randomness derives from one integer seed. A stream is addressed by a
path of names and integers, e.g. ``stream(seed, "haar", trial)``; names are
hashed to stable 32-bit words, so adding a consumer never shifts another
consumer's numbers. The bit generator is Philox, keyed by the seed
sequence, which makes chunk-wise parallel work independent of the number
of workers.
"""
from __future__ import annotations

import hashlib

import numpy as np


def _word(part) -> int:
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError("stream indices must be non-negative")
        return int(part)
    digest = hashlib.blake2b(str(part).encode(), digest_size=4).digest()
    return int.from_bytes(digest, "little")


def seed_sequence(seed: int, *path) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_word(p) for p in path))


def stream(seed: int, *path) -> np.random.Generator:
    """Independent generator for the sub-stream named by `path`."""
    return np.random.Generator(np.random.Philox(seed_sequence(seed, *path)))


def chunks(n: int, chunk_size: int) -> list[tuple[int, int, int]]:
    """Split ``range(n)`` into ``(index, start, stop)`` chunks of fixed size.

    Chunk boundaries depend only on `n` and `chunk_size`, never on the
    number of workers.
    """
    out = []
    for idx, start in enumerate(range(0, n, chunk_size)):
        out.append((idx, start, min(n, start + chunk_size)))
    return out


def map_chunks(fn, tasks, workers: int = 1):
    """Apply `fn` to each task, optionally in a process pool; order preserved."""
    tasks = list(tasks)
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))
