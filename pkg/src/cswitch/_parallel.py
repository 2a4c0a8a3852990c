"""Fixed-size chunking with an optional thread pool.

Chunk boundaries never depend on the worker count, so the same numpy
operations run on the same slices whatever ``workers`` is.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor


def resolve_workers(workers: int | None) -> int:
    """``None`` -> 1, ``0`` -> all cores."""
    if workers is None:
        return 1
    if workers == 0:
        return os.cpu_count() or 1
    return max(1, int(workers))


def chunks(n: int, size: int) -> list[slice]:
    return [slice(lo, min(lo + size, n)) for lo in range(0, n, size)]


def run_chunks(fn, n: int, size: int, workers: int | None = 1) -> None:
    """Call ``fn(slice)`` for every chunk of ``range(n)``; ``fn`` writes its own output."""
    parts = chunks(n, size)
    workers = resolve_workers(workers)
    if workers == 1 or len(parts) == 1:
        for sl in parts:
            fn(sl)
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        for fut in [pool.submit(fn, sl) for sl in parts]:
            fut.result()
