"""Subscription-to-worker assignment and online routing of churn."""

from __future__ import annotations

import heapq
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .core import Ball, Rect, Subscription, ball_bounding_rect
from .costmodel import dkm_subscription_cost, kop_cost, sop_region_probability
from .partition import PartitionResult
from .stats import InitStats, init_knn_radii

log = logging.getLogger(__name__)


@dataclass
class Assignment:
    members: List[List[str]]
    loads: List[float]
    trace: List[Tuple[str, int, float]] = field(default_factory=list)

    @property
    def m(self) -> int:
        return len(self.loads)

    def worker_of(self) -> Dict[str, int]:
        return {i: w for w, ids in enumerate(self.members) for i in ids}

    def report_lines(self) -> List[str]:
        return [f"worker {w}\tcost={self.loads[w]:.12g}\tn={len(ids)}\t{','.join(ids)}"
                for w, ids in enumerate(self.members)]


def _run_greedy(order: Iterable[Tuple[str, float]], m: int) -> Assignment:
    if m < 1:
        raise ValueError("need at least one worker")
    members: List[List[str]] = [[] for _ in range(m)]
    loads = [0.0] * m
    heap = [(0.0, w) for w in range(m)]
    trace = []
    for item, cost in order:
        load, w = heapq.heappop(heap)
        trace.append((item, w, load))
        members[w].append(item)
        loads[w] = load + cost
        heapq.heappush(heap, (loads[w], w))
    return Assignment(members, loads, trace)


def greedy_assign(items: Sequence[Tuple[str, float]], m: int) -> Assignment:
    """LPT greedy: descending cost (ties by id) onto the least-loaded worker (ties by index)."""
    return _run_greedy(sorted(items, key=lambda it: (-it[1], it[0])), m)


def dkm_assign(partition: PartitionResult, m: int) -> Assignment:
    """Costliest subset first; inside a subset, costliest member first, one member at a time."""
    def order():
        for node in sorted(partition.subsets, key=lambda n: (-n.cost, n.seq)):
            if node.member_costs is None:
                raise ValueError(f"subset {node.seq} carries no member costs")
            mc = node.member_costs
            for sid in sorted(mc, key=lambda i: (-mc[i], i)):
                yield sid, mc[sid]
    return _run_greedy(order(), m)


# every finite double is an integer multiple of 2**-1074
_SCALE_BITS = 1074


def _scaled(x: float) -> int:
    n, d = x.as_integer_ratio()
    return n << (_SCALE_BITS - d.bit_length() + 1)


class LoadBook:
    """Coordinator-side live loads C(w) and the subscription -> (worker, cost) registry.

    Loads accumulate exactly, as integers in units of 2**-1074, so any
    insert/delete sequence leaves them equal to the correctly rounded sum of
    live costs.
    """

    def __init__(self, m: int):
        self._exact = [0] * m
        self.registry: Dict[str, Tuple[int, float]] = {}

    @property
    def m(self) -> int:
        return len(self._exact)

    @property
    def loads(self) -> List[float]:
        # int / int is correctly rounded
        return [v / (1 << _SCALE_BITS) for v in self._exact]

    def add(self, sid: str, worker: int, cost: float) -> None:
        if sid in self.registry:
            raise KeyError(f"subscription {sid} is already registered")
        if not math.isfinite(cost):
            raise ValueError(f"subscription {sid}: cost must be finite, got {cost}")
        self.registry[sid] = (worker, cost)
        self._exact[worker] += _scaled(cost)

    def remove(self, sid: str) -> Optional[int]:
        entry = self.registry.pop(sid, None)
        if entry is None:
            return None
        worker, cost = entry
        self._exact[worker] -= _scaled(cost)
        return worker

    def argmin(self) -> int:
        return min(range(len(self._exact)), key=self._exact.__getitem__)


def _route(sid: str, cost: float, book: LoadBook) -> Tuple[int, float]:
    w = book.argmin()
    book.add(sid, w, cost)
    return w, cost


def new_subscription_rect(s: Subscription, stats: InitStats) -> Rect:
    """Rectangle of the ball of ``s`` computed from its kNN among the warm-up objects."""
    return new_subscription_rects([s], stats)[0]


def new_subscription_rects(subs: Sequence[Subscription], stats: InitStats) -> List[Rect]:
    """``new_subscription_rect`` for a batch, sharing the kNN searches."""
    radii = init_knn_radii(stats, [(s.x, s.y, s.psi, s.k) for s in subs])
    return [ball_bounding_rect(Ball(s.p, r), stats.space) for s, r in zip(subs, radii)]


def route_new_kop(s: Subscription, stats: InitStats, book: LoadBook) -> Tuple[int, float]:
    return _route(s.id, kop_cost(s, stats), book)


def route_new_sop(s: Subscription, stats: InitStats, book: LoadBook,
                  rn: Optional[Rect] = None) -> Tuple[int, float]:
    rn = rn if rn is not None else new_subscription_rect(s, stats)
    return _route(s.id, sop_region_probability(rn, stats), book)


def best_overlaps(rns: Sequence[Rect], rects: Sequence[Rect], points: Sequence[Tuple[float, float]]) -> List[int]:
    """Per ``rn``, index of the rect overlapping it the most.

    A degenerate or disjoint ``rn`` goes to the nearest centre among the rects
    it touches, or among all rects when it touches none.
    """
    arr = np.asarray(rects, dtype=float).reshape(-1, 4)
    q = np.asarray(rns, dtype=float).reshape(-1, 4)
    w = np.minimum(arr[None, :, 2], q[:, None, 2]) - np.maximum(arr[None, :, 0], q[:, None, 0])
    h = np.minimum(arr[None, :, 3], q[:, None, 3]) - np.maximum(arr[None, :, 1], q[:, None, 1])
    area = np.where((w > 0.0) & (h > 0.0), w * h, 0.0)
    best = np.argmax(area, axis=1)
    out = best.tolist()
    for i in np.flatnonzero(area[np.arange(len(q)), best] <= 0.0).tolist():
        x, y = points[i]
        d = np.hypot((arr[:, 0] + arr[:, 2]) / 2.0 - x, (arr[:, 1] + arr[:, 3]) / 2.0 - y)
        touching = (w[i] >= 0.0) & (h[i] >= 0.0)
        if touching.any():
            d = np.where(touching, d, np.inf)
        out[i] = int(np.argmin(d))
    return out


def best_overlap(rn: Rect, rects: Sequence[Rect], x: float, y: float) -> int:
    return best_overlaps([rn], rects, [(x, y)])[0]


def route_new_dkm(s: Subscription, stats: InitStats, rects: Sequence[Rect],
                  book: LoadBook, rn: Optional[Rect] = None,
                  caches: Optional[Dict[int, Dict[int, float]]] = None,
                  target: Optional[int] = None) -> Tuple[int, float]:
    """Route to the least-loaded worker with cost taken over the best-overlapping subset rect.

    ``caches`` keeps per-rect keyword probabilities across calls (rects are
    fixed after setup); ``target`` is a precomputed ``best_overlap`` index.
    """
    if len(rects) == 0:
        raise ValueError("no subset rectangles to route against")
    if target is None:
        rn = rn if rn is not None else new_subscription_rect(s, stats)
        target = best_overlap(rn, rects, s.x, s.y)
    cache = caches.setdefault(target, {}) if caches is not None else None
    return _route(s.id, dkm_subscription_cost(s, Rect(*rects[target]), stats, cache), book)


def delete_subscription(sid: str, book: LoadBook) -> Optional[int]:
    worker = book.remove(sid)
    if worker is None:
        log.warning("delete of unknown subscription %s ignored", sid)
    return worker
