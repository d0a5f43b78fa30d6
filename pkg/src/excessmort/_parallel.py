"""Deterministic chunked fan-out over a process pool.

Work is split into contiguous index chunks and results are concatenated in
chunk order, so the output is identical for any worker count as long as the
per-item computation depends only on its index and arguments.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor


def run_chunked(worker, n_items: int, n_workers: int, args: tuple = ()) -> list:
    """Run ``worker(start, stop, *args)`` over chunks of ``range(n_items)``.

    ``worker`` must be a module-level callable returning a list of one result
    per index in ``[start, stop)``. Returns the concatenated results in index
    order regardless of ``n_workers``.
    """
    if n_items == 0:
        return []
    n_workers = max(1, min(n_workers, n_items))
    if n_workers == 1:
        return list(worker(0, n_items, *args))
    bounds = [(n_items * k) // n_workers for k in range(n_workers + 1)]
    chunks = [(bounds[k], bounds[k + 1]) for k in range(n_workers)]
    out: list = []
    with ProcessPoolExecutor(max_workers=n_workers) as pool:
        futures = [pool.submit(worker, start, stop, *args) for start, stop in chunks]
        for fut in futures:
            out.extend(fut.result())
    return out
