# services/worker.py
from __future__ import annotations

import logging
from concurrent.futures import Future, ThreadPoolExecutor, as_completed
from typing import Callable, Iterable, Iterator, List, Sequence, Tuple, TypeVar

T = TypeVar("T")
R = TypeVar("R")

log = logging.getLogger("avan.worker")


def chunk_evenly(indexed: Sequence[T], workers: int) -> List[List[T]]:
    """Contiguous shards whose sizes differ by at most one; no empty shards."""
    n = max(1, min(workers, len(indexed))) if indexed else 1
    k, m = divmod(len(indexed), n)
    chunks: List[List[T]] = []
    start = 0
    for i in range(n):
        end = start + k + (1 if i < m else 0)
        if start < end:
            chunks.append(list(indexed[start:end]))
        start = end
    return chunks


def _run_shard(fn: Callable[[T], R], shard: List[Tuple[int, T]]) -> List[Tuple[int, R]]:
    return [(idx, fn(item)) for idx, item in shard]


def parallel_map(fn: Callable[[T], R], items: Sequence[T], workers: int, label: str = "map") -> List[R]:
    """
    Ordered map over a thread pool. Items are sharded with chunk_evenly and
    results are put back in input order, so the output never depends on
    scheduling. The first worker failure is re-raised after the pool drains.
    """
    items = list(items)
    if not items:
        return []
    if workers <= 1 or len(items) == 1:
        return [fn(x) for x in items]

    shards = chunk_evenly(list(enumerate(items)), workers)
    out: List[Tuple[int, R]] = []
    errors: List[BaseException] = []
    with ThreadPoolExecutor(max_workers=len(shards), thread_name_prefix=f"avan-{label}") as pool:
        futures = [pool.submit(_run_shard, fn, shard) for shard in shards]
        for fut in as_completed(futures):
            try:
                out.extend(fut.result())
            except Exception as e:
                log.error("[%s] worker crashed: %s: %s", label, type(e).__name__, e)
                errors.append(e)
    if errors:
        raise errors[0]
    out.sort(key=lambda p: p[0])
    return [r for _, r in out]


def prefetch(make: Callable[[int], R], count: int, depth: int = 2) -> Iterator[R]:
    """
    Yields make(0), make(1), ... make(count - 1) in order while up to `depth`
    later items are built on a background thread. Each make(i) must depend
    only on i for the stream to be reproducible.
    """
    if count <= 0:
        return
    with ThreadPoolExecutor(max_workers=1, thread_name_prefix="avan-prefetch") as pool:
        pending: List[Future] = []
        nxt = 0
        while nxt < count and len(pending) < depth:
            pending.append(pool.submit(make, nxt))
            nxt += 1
        while pending:
            fut = pending.pop(0)
            if nxt < count:
                pending.append(pool.submit(make, nxt))
                nxt += 1
            yield fut.result()


def run_each(fn: Callable[[T], R], items: Iterable[T], workers: int, label: str = "run") -> List[Tuple[T, R | None, str | None]]:
    """
    Like parallel_map but never raises: returns (item, result, error) per item,
    in input order, with `error` in the `Type: message` form.
    """
    items = list(items)

    def guarded(x: T):
        try:
            return fn(x), None
        except Exception as e:
            log.error("[%s] item=%s failed: %s: %s", label, x, type(e).__name__, e)
            return None, f"{type(e).__name__}: {e}"

    results = parallel_map(guarded, items, workers, label=label)
    return [(x, r, err) for x, (r, err) in zip(items, results)]
