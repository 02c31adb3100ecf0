"""A worker's online engine: a subscription index plus exact top-k maintenance.

Three index variants share one evaluation path:

* ``KopWorker`` - one inverted file keyword -> subscriptions.
* ``SopWorker`` - per assigned subset a frozen rectangle and its own inverted file.
* ``DkmWorker`` - a uniform grid whose cells hold inverted files of the
  subscriptions whose ball rectangle overlaps the cell.

Workers keep only each subscription's top-k buffer, never the object history:
the stream is insert-only, so an object that misses a result can never enter
it later.
"""

from __future__ import annotations

import bisect
import logging
import math
from typing import Dict, Hashable, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np

from .core import (
    UNBOUNDED,
    Ball,
    Rect,
    ResultSet,
    SKObject,
    Subscription,
    ball_bounding_rect,
    dist,
)
from .stats import Grid, InitStats, build_init_stats, init_knn_many

log = logging.getLogger(__name__)

# candidate sets at least this large go through the vectorised prefilter
VECTOR_MIN = 32
_SLACK = 1.0 + 1e-9


class TopKState:
    """Bounded ascending buffer of (distance, object id) entries."""

    __slots__ = ("k", "entries")

    def __init__(self, k: int, entries: Iterable[Tuple[float, str]] = ()):
        self.k = k
        self.entries: List[Tuple[float, str]] = list(entries)

    @property
    def full(self) -> bool:
        return len(self.entries) >= self.k

    @property
    def radius(self) -> float:
        return self.entries[-1][0] if len(self.entries) >= self.k else UNBOUNDED

    def offer(self, d: float, oid: str) -> bool:
        e = (d, oid)
        entries = self.entries
        if len(entries) < self.k:
            bisect.insort(entries, e)
            return True
        if e < entries[-1]:
            bisect.insort(entries, e)
            entries.pop()
            return True
        return False

    def snapshot(self) -> ResultSet:
        return tuple(self.entries)


class Worker:
    kind = "base"

    def __init__(self, space: Rect, name: str = "w"):
        self.space = space
        self.name = name
        self.subs: Dict[str, Subscription] = {}
        self.states: Dict[str, TopKState] = {}
        self.slot_of: Dict[str, int] = {}
        self._slot_ids: List[Optional[str]] = []
        # slot-indexed mirrors for the scalar path
        self._slot_sub: List[Optional[Subscription]] = []
        self._slot_state: List[Optional[TopKState]] = []
        self._r2: List[float] = []
        self._free: List[int] = []
        cap = 64
        self._sx = np.zeros(cap)
        self._sy = np.zeros(cap)
        self._sr2 = np.full(cap, -1.0)
        self._st = np.zeros(cap, dtype=np.int64)
        self._post: Dict[Hashable, Set[int]] = {}
        self._arrays: Dict[Hashable, np.ndarray] = {}
        self.last_t = -1
        self.evaluated = 0

    # -- slots and postings ------------------------------------------------
    def _alloc(self, s: Subscription) -> int:
        if self._free:
            slot = self._free.pop()
            self._slot_ids[slot] = s.id
            self._slot_sub[slot] = s
            self._slot_state[slot] = self.states[s.id]
            self._r2[slot] = math.inf
        else:
            slot = len(self._slot_ids)
            self._slot_ids.append(s.id)
            self._slot_sub.append(s)
            self._slot_state.append(self.states[s.id])
            self._r2.append(math.inf)
            if slot >= len(self._sx):
                n = 2 * len(self._sx)
                self._sx = np.resize(self._sx, n)
                self._sy = np.resize(self._sy, n)
                self._sr2 = np.resize(self._sr2, n)
                self._st = np.resize(self._st, n)
        self._sx[slot] = s.x
        self._sy[slot] = s.y
        self._sr2[slot] = np.inf
        self._st[slot] = s.t
        self.slot_of[s.id] = slot
        return slot

    def _release(self, sid: str) -> None:
        slot = self.slot_of.pop(sid)
        self._slot_ids[slot] = None
        self._slot_sub[slot] = None
        self._slot_state[slot] = None
        self._r2[slot] = -1.0
        self._sr2[slot] = -1.0
        self._free.append(slot)

    def _set_radius(self, slot: int, radius: float) -> None:
        r2 = radius * radius if radius != UNBOUNDED else math.inf
        self._r2[slot] = r2
        self._sr2[slot] = r2

    def _post_add(self, key: Hashable, slot: int) -> None:
        bucket = self._post.get(key)
        if bucket is None:
            self._post[key] = {slot}
        else:
            bucket.add(slot)
        self._arrays.pop(key, None)

    def _post_discard(self, key: Hashable, slot: int) -> None:
        bucket = self._post.get(key)
        if bucket is not None:
            bucket.discard(slot)
            if not bucket:
                del self._post[key]
        self._arrays.pop(key, None)

    def _array(self, key: Hashable) -> np.ndarray:
        arr = self._arrays.get(key)
        if arr is None:
            bucket = self._post[key]
            arr = self._arrays[key] = np.fromiter(bucket, dtype=np.int64, count=len(bucket))
        return arr

    # -- variant hooks -----------------------------------------------------
    def _index_add(self, s: Subscription, slot: int, **kw) -> None:
        raise NotImplementedError

    def _index_remove(self, s: Subscription, slot: int) -> None:
        raise NotImplementedError

    def _candidate_keys(self, o: SKObject) -> List[Hashable]:
        raise NotImplementedError

    def _radius_changed(self, s: Subscription, slot: int, old: float, new: float) -> None:
        pass

    def _candidates(self, o: SKObject) -> Tuple[List[Hashable], List[Set[int]]]:
        """Live posting keys ``o`` must probe, with their buckets."""
        post = self._post
        keys = [k for k in self._candidate_keys(o) if k in post]
        return keys, [post[k] for k in keys]

    # -- public operations -------------------------------------------------
    def register(self, s: Subscription, **kw) -> None:
        if s.id in self.subs:
            raise KeyError(f"{self.name}: subscription {s.id} already registered")
        self.subs[s.id] = s
        self.states[s.id] = TopKState(s.k)
        slot = self._alloc(s)
        self._index_add(s, slot, **kw)

    def remove(self, sid: str) -> bool:
        s = self.subs.get(sid)
        if s is None:
            log.warning("%s: remove of unknown subscription %s ignored", self.name, sid)
            return False
        self._index_remove(s, self.slot_of[sid])
        self._release(sid)
        del self.subs[sid]
        del self.states[sid]
        return True

    def __len__(self) -> int:
        return len(self.subs)

    def __contains__(self, sid: str) -> bool:
        return sid in self.subs

    def current_result(self, sid: str) -> ResultSet:
        return self.states[sid].snapshot()

    def ball(self, sid: str) -> Ball:
        s = self.subs[sid]
        return Ball(s.p, self.states[sid].radius)

    def process_object(self, o: SKObject) -> List[str]:
        if o.t < self.last_t:
            raise ValueError(f"{self.name}: object {o.id} at t={o.t} arrives after t={self.last_t}")
        self.last_t = o.t
        keys, buckets = self._candidates(o)
        if not keys:
            return []
        total = 0
        for b in buckets:
            total += len(b)
        if total < VECTOR_MIN:
            slots: Iterable[int] = buckets[0] if len(buckets) == 1 else set().union(*buckets)
        else:
            idx = self._array(keys[0]) if len(keys) == 1 else np.concatenate([self._array(k) for k in keys])
            dx = self._sx[idx] - o.x
            dy = self._sy[idx] - o.y
            keep = (self._st[idx] <= o.t) & (dx * dx + dy * dy <= self._sr2[idx] * _SLACK)
            slots = set(idx[keep].tolist())
        return self._evaluate(o, slots)

    def _evaluate(self, o: SKObject, slots: Iterable[int]) -> List[str]:
        changed = []
        slot_sub, slot_state, r2 = self._slot_sub, self._slot_state, self._r2
        ox, oy, ot, opsi, oid = o.x, o.y, o.t, o.psi, o.id
        # iterate over a snapshot: radius changes may edit the posting sets
        for slot in list(slots):
            s = slot_sub[slot]
            if ot < s.t:
                continue
            dx = ox - s.x
            dy = oy - s.y
            if dx * dx + dy * dy > r2[slot] * _SLACK or opsi.isdisjoint(s.psi):
                continue
            self.evaluated += 1
            st = slot_state[slot]
            old = st.radius
            if st.offer(dist(ox, oy, s.x, s.y), oid):
                changed.append(s.id)
                new = st.radius
                if new != old:
                    self._set_radius(slot, new)
                    self._radius_changed(s, slot, old, new)
        changed.sort()
        return changed

    def process_batch(self, objects: Sequence[SKObject]) -> int:
        n = 0
        for o in objects:
            n += len(self.process_object(o))
        return n

    def bulk_load(self, warmup: Sequence[SKObject], index: Optional[InitStats] = None) -> None:
        """Bring every registered subscription up to date with ``warmup``.

        Equivalent to ``process_object`` over ``warmup`` in timestamp order, but
        answered by one kNN search per subscription (honouring its ``t``).
        """
        if not warmup:
            return
        if index is None:
            if not all(self.space.contains_point(o.x, o.y) for o in warmup):
                for o in sorted(warmup, key=lambda o: o.t):
                    self.process_object(o)
                return
            index = build_init_stats(warmup, self.space, 64)
        ids = sorted(self.subs)
        subs = [self.subs[sid] for sid in ids]
        found = init_knn_many(index, [(s.x, s.y, s.psi, s.k) for s in subs], [s.t for s in subs])
        for s, res in zip(subs, found):
            st = self.states[s.id]
            slot = self.slot_of[s.id]
            before = st.radius
            st.entries = sorted(set(st.entries) | set(res))[: s.k]
            after = st.radius
            if after != before:
                self._set_radius(slot, after)
                self._radius_changed(s, slot, before, after)
        self.last_t = max(self.last_t, max(o.t for o in warmup))

    def audit(self) -> List[str]:
        """Differences between the live postings and the ones implied by current state."""
        expected: Dict[Hashable, Set[int]] = {}
        for sid, s in self.subs.items():
            for key in self._expected_keys(s):
                expected.setdefault(key, set()).add(self.slot_of[sid])
        problems = []
        for key in set(expected) | set(self._post):
            if expected.get(key, set()) != self._post.get(key, set()):
                problems.append(f"{self.name}: postings {key!r} differ")
        for sid, slot in self.slot_of.items():
            r = self.states[sid].radius
            want = r * r if r != UNBOUNDED else np.inf
            if self._sr2[slot] != want or self._r2[slot] != want:
                problems.append(f"{self.name}: radius cache of {sid} stale")
        return problems

    def _expected_keys(self, s: Subscription) -> Iterable[Hashable]:
        raise NotImplementedError

    def postings_snapshot(self) -> Dict[Hashable, frozenset]:
        return {k: frozenset(self._slot_ids[i] for i in v) for k, v in self._post.items()}


class KopWorker(Worker):
    kind = "kop"

    def _index_add(self, s, slot, **kw):
        for k in s.psi:
            self._post_add(k, slot)

    def _index_remove(self, s, slot):
        for k in s.psi:
            self._post_discard(k, slot)

    def _candidate_keys(self, o):
        return list(o.psi)

    def _expected_keys(self, s):
        return s.psi

    def inverted_file(self) -> Dict[int, Set[str]]:
        return {k: {self._slot_ids[i] for i in v} for k, v in self._post.items()}


class SopWorker(Worker):
    """Subsets keep the rectangle fixed when they were assigned.

    Subscriptions registered without a subset (online inserts) join an
    overflow subset whose rectangle is the whole space, since their ball is
    unbounded at registration.
    """

    kind = "sop"

    def __init__(self, space: Rect, name: str = "w"):
        super().__init__(space, name)
        self.rects: List[Rect] = [space]
        self.subset_of: Dict[str, int] = {}

    def add_subset(self, rect: Rect) -> int:
        self.rects.append(rect)
        return len(self.rects) - 1

    def _index_add(self, s, slot, subset: int = 0, **kw):
        if not 0 <= subset < len(self.rects):
            raise KeyError(f"{self.name}: unknown subset {subset}")
        self.subset_of[s.id] = subset
        for k in s.psi:
            self._post_add((subset, k), slot)

    def _index_remove(self, s, slot):
        j = self.subset_of.pop(s.id)
        for k in s.psi:
            self._post_discard((j, k), slot)

    def _candidate_keys(self, o):
        x, y = self.space.clamp(o.x, o.y)
        keys = []
        for j, r in enumerate(self.rects):
            if r.contains_point(x, y):
                keys.extend((j, k) for k in o.psi)
        return keys

    def _expected_keys(self, s):
        j = self.subset_of[s.id]
        return [(j, k) for k in s.psi]

    def audit(self) -> List[str]:
        problems = super().audit()
        for sid, j in self.subset_of.items():
            if not self.rects[j].contains_rect(ball_bounding_rect(self.ball(sid), self.space)):
                problems.append(f"{self.name}: subset {j} rectangle does not cover {sid}")
        return problems


class DkmWorker(Worker):
    """Grid of per-cell inverted files over subscription ball rectangles.

    Cells form a pyramid: level 0 is the G x G grid, each level above halves the
    resolution.  A subscription is posted at the finest level where its ball
    rectangle spans at most 2 x 2 cells, so a shrinking ball touches a handful
    of postings instead of every fine cell it once covered.  A lookup consults
    the object's cell on every level.  Subscriptions whose ball is still
    unbounded sit under the pseudo-level ``-1``, shared by every cell.
    """

    kind = "dkm"
    SPAN = 2

    def __init__(self, space: Rect, name: str = "w", grid: int = 64):
        super().__init__(space, name)
        self.grid = Grid(space, grid)
        self.levels = max(grid - 1, 1).bit_length() + 1
        self._place: Dict[int, Optional[Tuple[int, int, int, int, int]]] = {}
        self._boxes: Dict[int, Optional[Tuple[int, int, int, int]]] = {}
        # keyword -> {level: live posting keys}, so lookups skip empty levels
        self._levels_of: Dict[int, Dict[int, int]] = {}

    def _post_add(self, key, slot):
        if key not in self._post:
            lv = self._levels_of.setdefault(key[3], {})
            lv[key[0]] = lv.get(key[0], 0) + 1
        super()._post_add(key, slot)

    def _post_discard(self, key, slot):
        had = key in self._post
        super()._post_discard(key, slot)
        if had and key not in self._post:
            lv = self._levels_of[key[3]]
            lv[key[0]] -= 1
            if not lv[key[0]]:
                del lv[key[0]]
                if not lv:
                    del self._levels_of[key[3]]

    def _box(self, s: Subscription, radius: float):
        """Level-0 (col0, row0, col1, row1) of the ball rectangle; placement depends on nothing else."""
        if radius == UNBOUNDED:
            return None
        g, sp = self.grid, self.space
        return (g.col(max(s.x - radius, sp.x0)), g.row(max(s.y - radius, sp.y0)),
                g.col(min(s.x + radius, sp.x1)), g.row(min(s.y + radius, sp.y1)))

    def _placement(self, box):
        if box is None:
            return None
        c0, r0, c1, r1 = box
        lvl = 0
        while (c1 >> lvl) - (c0 >> lvl) >= self.SPAN or (r1 >> lvl) - (r0 >> lvl) >= self.SPAN:
            lvl += 1
        return lvl, c0 >> lvl, r0 >> lvl, c1 >> lvl, r1 >> lvl

    @staticmethod
    def _keys(s: Subscription, place):
        if place is None:
            return [(-1, 0, 0, k) for k in s.psi]
        lvl, c0, r0, c1, r1 = place
        return [(lvl, c, r, k) for r in range(r0, r1 + 1) for c in range(c0, c1 + 1) for k in s.psi]

    def _index_add(self, s, slot, **kw):
        box = self._boxes[slot] = self._box(s, self.states[s.id].radius)
        place = self._place[slot] = self._placement(box)
        for key in self._keys(s, place):
            self._post_add(key, slot)

    def _index_remove(self, s, slot):
        del self._boxes[slot]
        for key in self._keys(s, self._place.pop(slot)):
            self._post_discard(key, slot)

    def _radius_changed(self, s, slot, old, new):
        box = self._box(s, new)
        if box == self._boxes[slot]:
            return
        self._boxes[slot] = box
        old_place = self._place[slot]
        new_place = self._placement(box)
        if new_place == old_place:
            return
        self._place[slot] = new_place
        old_keys = set(self._keys(s, old_place))
        new_keys = set(self._keys(s, new_place))
        for key in old_keys - new_keys:
            self._post_discard(key, slot)
        for key in new_keys - old_keys:
            self._post_add(key, slot)

    def _candidates(self, o):
        c, r = self.grid.col(o.x), self.grid.row(o.y)
        post, levels_of = self._post, self._levels_of
        keys, buckets = [], []
        for k in o.psi:
            lv = levels_of.get(k)
            if not lv:
                continue
            for lvl in lv:
                key = (lvl, c >> lvl, r >> lvl, k) if lvl >= 0 else (-1, 0, 0, k)
                b = post.get(key)
                if b is not None:
                    keys.append(key)
                    buckets.append(b)
        return keys, buckets

    def _candidate_keys(self, o):
        c, r = self.grid.col(o.x), self.grid.row(o.y)
        keys = []
        for k in o.psi:
            lv = self._levels_of.get(k)
            if lv:
                keys.extend((lvl, c >> lvl, r >> lvl, k) if lvl >= 0 else (-1, 0, 0, k) for lvl in lv)
        return keys

    def _expected_keys(self, s):
        return self._keys(s, self._placement(self._box(s, self.states[s.id].radius)))

    def cell_postings(self, cell: int, kw: int) -> Set[str]:
        """Logical ``g.I[kw]`` of a level-0 cell: subscriptions with ``kw`` whose ball rectangle overlaps it."""
        r, c = divmod(cell, self.grid.g)
        out = set()
        keys = [(-1, 0, 0, kw)] + [(lvl, c >> lvl, r >> lvl, kw) for lvl in range(self.levels)]
        for key in keys:
            for slot in self._post.get(key, ()):
                sid = self._slot_ids[slot]
                radius = self.states[sid].radius
                if radius == UNBOUNDED:
                    out.add(sid)
                    continue
                c0, r0, c1, r1 = self.grid.cell_range(ball_bounding_rect(self.ball(sid), self.space))
                if c0 <= c <= c1 and r0 <= r <= r1:
                    out.add(sid)
        return out


WORKER_KINDS = {"kop": KopWorker, "sop": SopWorker, "dkm": DkmWorker}


def make_worker(kind: str, space: Rect, name: str = "w", grid: int = 64) -> Worker:
    kind = kind.lower()
    if kind == "dkm":
        return DkmWorker(space, name, grid)
    if kind in WORKER_KINDS:
        return WORKER_KINDS[kind](space, name)
    raise ValueError(f"unknown worker kind {kind!r}")
