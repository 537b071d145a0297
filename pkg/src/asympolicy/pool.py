"""Bounded process pool used by sweeps and replications."""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor

WORKERS_ENV = "ASYMPOLICY_WORKERS"


def default_workers() -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        return max(1, int(env))
    try:
        return max(1, len(os.sched_getaffinity(0)))
    except AttributeError:
        return os.cpu_count() or 1


def _guard(fn, item):
    try:
        return fn(item)
    except Exception as exc:  # noqa: BLE001 - handed back to the caller
        return exc


def parallel_map(fn, items, workers: int = 1, return_exceptions: bool = False) -> list:
    """Ordered ``map``; runs in-process when ``workers <= 1``."""
    items = list(items)
    call = (lambda it: _guard(fn, it)) if return_exceptions else fn
    if workers <= 1 or len(items) <= 1:
        return [call(it) for it in items]
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as ex:
        if return_exceptions:
            return list(ex.map(_guard, [fn] * len(items), items))
        return list(ex.map(fn, items))
