"""Ordered task execution over a bounded thread pool."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, TypeVar

T = TypeVar("T")
R = TypeVar("R")


def run_ordered(fn: Callable[[T], R], items: Iterable[T], threads: int = 1) -> list[R]:
    """``[fn(item) for item in items]``, optionally on ``threads`` workers.

    Results are returned in input order. Every task derives its randomness
    from its own arguments, so the output does not depend on ``threads``.
    """
    items = list(items)
    threads = max(1, int(threads or 1))
    if threads == 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=min(threads, len(items))) as pool:
        return list(pool.map(fn, items))
