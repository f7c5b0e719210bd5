"""Order-preserving parallel map capped by the ``QSI_THREADS`` environment variable."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, TypeVar

T = TypeVar("T")
R = TypeVar("R")


def thread_count() -> int:
    try:
        return max(1, int(os.environ.get("QSI_THREADS", "1")))
    except ValueError:
        return 1


def ordered_map(fn: Callable[[T], R], items: Iterable[T]) -> list[R]:
    """``[fn(x) for x in items]``, possibly evaluated concurrently."""
    items = list(items)
    workers = min(thread_count(), max(len(items), 1))
    if workers == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
