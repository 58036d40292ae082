"""Deterministic fork-based task farm for independent model trainings.

Tasks are keyed by index and carry their own derived seeds, so results are
identical for any worker count. Shared read-only inputs (datasets, configs)
are published through a module global before the pool forks, avoiding
per-task pickling of large objects.
"""

from __future__ import annotations

import multiprocessing as mp
from typing import Any, Callable, Sequence

_FARM_CONTEXT: dict = {}


def farm_context() -> dict:
    return _FARM_CONTEXT


def farm_map(
    fn: Callable[[Any], Any],
    payloads: Sequence[Any],
    workers: int,
    context: dict | None = None,
) -> list:
    """Map fn over payloads, in order, optionally across forked workers."""
    global _FARM_CONTEXT
    previous = _FARM_CONTEXT
    _FARM_CONTEXT = context if context is not None else {}
    try:
        if workers <= 1 or len(payloads) <= 1:
            return [fn(p) for p in payloads]
        with mp.get_context("fork").Pool(processes=workers) as pool:
            return pool.map(fn, payloads, chunksize=1)
    finally:
        _FARM_CONTEXT = previous
