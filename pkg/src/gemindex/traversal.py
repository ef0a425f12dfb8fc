"""Multi-entry best-first traversal shared by index construction and search.

Paths advance in synchronous rounds. In each round every live path pops its
closest queued vertex, checks it against the shared result heap, and
proposes its unvisited neighbors; proposals are claimed into the shared
visited set in entry order, scored (optionally on a thread pool), and
merged back in entry order. The outcome therefore does not depend on the
number of worker threads.
"""

from __future__ import annotations

import heapq
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence


@dataclass
class TraversalStats:
    distance_evals: int = 0
    hops: int = 0
    pruned: int = 0
    discovered_at: dict[int, int] | None = None


@dataclass(order=True)
class Candidate:
    dist: float
    id: int


class _ResultHeap:
    """Bounded set of the ``ef`` closest (dist, id) pairs; furthest evicted first."""

    def __init__(self, ef: int):
        self.ef = ef
        self._heap: list[tuple[float, int]] = []  # (-dist, -id)

    def __len__(self):
        return len(self._heap)

    def push(self, dist: float, vid: int) -> None:
        heapq.heappush(self._heap, (-dist, -vid))
        if len(self._heap) > self.ef:
            heapq.heappop(self._heap)

    def tau(self) -> float:
        if len(self._heap) < self.ef:
            return math.inf
        return -self._heap[0][0]

    def sorted(self) -> list[Candidate]:
        return sorted(Candidate(-d, -v) for d, v in self._heap)


def beam_traverse(
    entries: Sequence[int],
    score: Callable[[int], float],
    neighbors: Callable[[int], Iterable[int]],
    ef: int,
    admit: Callable[[int], bool] | None = None,
    returnable: Callable[[int], bool] | None = None,
    max_threads: int = 1,
    stats: TraversalStats | None = None,
) -> list[Candidate]:
    """Return up to ``ef`` returnable vertices closest under ``score``, sorted
    by (distance, id)."""
    stats = stats if stats is not None else TraversalStats()
    entries = list(dict.fromkeys(entries))
    if not entries:
        return []
    pool = ThreadPoolExecutor(max_threads) if max_threads > 1 else None
    try:
        def score_all(ids: list[int]) -> list[float]:
            stats.distance_evals += len(ids)
            if pool is not None and len(ids) > 1:
                return list(pool.map(score, ids))
            return [score(v) for v in ids]

        results = _ResultHeap(ef)
        visited = set(entries)
        queues: list[list[tuple[float, int]]] = []
        for ep, d in zip(entries, score_all(entries)):
            queues.append([(d, ep)])
            if returnable is None or returnable(ep):
                results.push(d, ep)
            if stats.discovered_at is not None:
                stats.discovered_at.setdefault(ep, 0)

        while any(queues):
            tau = results.tau()
            proposals: list[tuple[int, list[int]]] = []
            for qi, queue in enumerate(queues):
                if not queue:
                    continue
                d, vid = heapq.heappop(queue)
                if d > tau:
                    queue.clear()
                    continue
                stats.hops += 1
                proposals.append((qi, list(neighbors(vid))))

            claimed: list[tuple[int, int]] = []
            for qi, nbrs in proposals:
                for nb in nbrs:
                    if nb in visited:
                        continue
                    if admit is not None and not admit(nb):
                        stats.pruned += 1
                        continue
                    visited.add(nb)
                    claimed.append((qi, nb))
                    if stats.discovered_at is not None:
                        stats.discovered_at[nb] = stats.hops

            if not claimed:
                continue
            dists = score_all([nb for _, nb in claimed])
            for (qi, nb), d in zip(claimed, dists):
                heapq.heappush(queues[qi], (d, nb))
                if returnable is None or returnable(nb):
                    results.push(d, nb)
        return results.sorted()
    finally:
        if pool is not None:
            pool.shutdown(wait=True)
