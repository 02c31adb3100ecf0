"""Statistics over the warm-up object set.

Every cost model reads from an :class:`InitStats` built once from the objects
seen before the subscriptions are partitioned.  Region counts are exact:
points are kept in x-sorted coordinate arrays (one global, one per keyword) so
a rectangle count is a binary search on x plus a vectorised test on y.

kNN over the warm-up set has two routes.  ``init_knn_ring`` expands rings of
grid cells with per-cell keyword postings.  ``init_knn_many`` asks a single
k-d tree for candidates, re-ranks them with the exact distance and falls back
to the ring search whenever the tree's k-th and (k+1)-th distances are too
close to rule out a tie.  The tree holds one copy of each object per keyword,
lifted onto a third axis so that each keyword sits in its own layer further
from every other layer than the diameter of the space; a query at a keyword's
height therefore sees that keyword's objects first.
"""

from __future__ import annotations

import bisect
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree

from .core import (
    ConfigurationError,
    Entry,
    IngestError,
    Rect,
    ResultSet,
    SKObject,
    dist,
)


def bounding_space(objects: Sequence[SKObject], margin: float = 0.01) -> Rect:
    """Bounding box of ``objects`` expanded by ``margin`` of its extent on each side."""
    if not objects:
        raise ConfigurationError("cannot derive a data space from zero objects")
    xs = [o.x for o in objects]
    ys = [o.y for o in objects]
    x0, x1, y0, y1 = min(xs), max(xs), min(ys), max(ys)
    dx = (x1 - x0) * margin or 1.0
    dy = (y1 - y0) * margin or 1.0
    return Rect(x0 - dx, y0 - dy, x1 + dx, y1 + dy)


class Grid:
    """Uniform G x G cell addressing over ``space``; out-of-space points clamp to the border."""

    def __init__(self, space: Rect, g: int):
        if g < 1:
            raise ValueError(f"grid resolution must be >= 1, got {g}")
        self.space = space
        self.g = g
        self.cw = (space.x1 - space.x0) / g or 1.0
        self.ch = (space.y1 - space.y0) / g or 1.0

    def col(self, x: float) -> int:
        c = int((x - self.space.x0) / self.cw)
        return 0 if c < 0 else (self.g - 1 if c >= self.g else c)

    def row(self, y: float) -> int:
        r = int((y - self.space.y0) / self.ch)
        return 0 if r < 0 else (self.g - 1 if r >= self.g else r)

    def cell_of(self, x: float, y: float) -> int:
        return self.row(y) * self.g + self.col(x)

    def cell_range(self, rect: Rect) -> Tuple[int, int, int, int]:
        """Inclusive (col0, row0, col1, row1) of the cells a closed ``rect`` touches."""
        return self.col(rect.x0), self.row(rect.y0), self.col(rect.x1), self.row(rect.y1)

    def cell_rect(self, cell: int) -> Rect:
        r, c = divmod(cell, self.g)
        x0 = self.space.x0 + c * self.cw
        y0 = self.space.y0 + r * self.ch
        return Rect(x0, y0, x0 + self.cw, y0 + self.ch)


@dataclass
class InitStats:
    space: Rect
    grid: Grid
    objects: List[SKObject]
    keyword_count: Counter
    # per cell: keyword -> object indices (ascending)
    cell_postings: List[Dict[int, List[int]]]
    cell_objects: List[List[int]]
    _xs: np.ndarray = field(repr=False)
    _ys: np.ndarray = field(repr=False)
    _kw_xs: np.ndarray = field(repr=False)
    _kw_ys: np.ndarray = field(repr=False)
    _kw_slices: Dict[int, Tuple[int, int]] = field(repr=False)
    _kw_objs: np.ndarray = field(repr=False)
    _layer_z: Dict[int, float] = field(default_factory=dict, repr=False)
    _tree: Optional[cKDTree] = field(default=None, repr=False)
    min_t: int = 0

    @property
    def total(self) -> int:
        return len(self.objects)

    def cell_count(self, cell: int) -> int:
        return len(self.cell_objects[cell])

    def cell_keyword_count(self, cell: int, kw: int) -> int:
        return len(self.cell_postings[cell].get(kw, ()))


def build_init_stats(objects: Sequence[SKObject], space: Rect, g: int = 64) -> InitStats:
    grid = Grid(space, g)
    objects = list(objects)
    n = len(objects)
    cell_postings: List[Dict[int, List[int]]] = [dict() for _ in range(g * g)]
    cell_objects: List[List[int]] = [[] for _ in range(g * g)]
    keyword_count: Counter = Counter()
    kw_flat: List[int] = []
    obj_flat: List[int] = []
    xs = np.empty(n)
    ys = np.empty(n)
    for i, o in enumerate(objects):
        if not space.contains_point(o.x, o.y):
            raise IngestError(f"object {o.id} at ({o.x}, {o.y}) lies outside the data space {tuple(space)}")
        xs[i] = o.x
        ys[i] = o.y
        cell = grid.cell_of(o.x, o.y)
        cell_objects[cell].append(i)
        postings = cell_postings[cell]
        for kw in o.psi:
            lst = postings.get(kw)
            if lst is None:
                postings[kw] = [i]
            else:
                lst.append(i)
            kw_flat.append(kw)
            obj_flat.append(i)
        keyword_count.update(o.psi)

    order = np.argsort(xs, kind="stable")
    kw_arr = np.asarray(kw_flat, dtype=np.int64)
    obj_arr = np.asarray(obj_flat, dtype=np.int64)
    kw_order = np.lexsort((xs[obj_arr], kw_arr)) if len(kw_arr) else np.empty(0, dtype=np.int64)
    kw_sorted = kw_arr[kw_order]
    kw_objs = obj_arr[kw_order]
    slices: Dict[int, Tuple[int, int]] = {}
    if len(kw_sorted):
        bounds = np.flatnonzero(np.diff(kw_sorted)) + 1
        starts = np.concatenate(([0], bounds))
        ends = np.concatenate((bounds, [len(kw_sorted)]))
        for a, b in zip(starts.tolist(), ends.tolist()):
            slices[int(kw_sorted[a])] = (a, b)
    # layers are 2*diameter + 1 apart, so any other layer is out of reach
    sep = 2.0 * float(np.hypot(space.width, space.height)) + 1.0
    layer_z = {kw: j * sep for j, kw in enumerate(slices)}
    tree = None
    if len(kw_sorted):
        zs = np.repeat(np.arange(len(slices)) * sep, [b - a for a, b in slices.values()])
        tree = cKDTree(np.column_stack((xs[kw_objs], ys[kw_objs], zs)))

    return InitStats(
        space=space,
        grid=grid,
        objects=objects,
        keyword_count=keyword_count,
        cell_postings=cell_postings,
        cell_objects=cell_objects,
        _xs=xs[order],
        _ys=ys[order],
        _kw_xs=xs[kw_objs],
        _kw_ys=ys[kw_objs],
        _kw_slices=slices,
        _kw_objs=kw_objs,
        _layer_z=layer_z,
        _tree=tree,
        min_t=min((o.t for o in objects), default=0),
    )


def _count_in(xs: np.ndarray, ys: np.ndarray, r: Rect) -> int:
    lo = int(np.searchsorted(xs, r.x0, side="left"))
    hi = int(np.searchsorted(xs, r.x1, side="right"))
    if hi <= lo:
        return 0
    seg = ys[lo:hi]
    return int(np.count_nonzero((seg >= r.y0) & (seg <= r.y1)))


def keyword_probability(stats: InitStats, kw: int) -> float:
    if stats.total == 0:
        raise ConfigurationError("keyword probability needs a non-empty warm-up set")
    return stats.keyword_count.get(kw, 0) / stats.total


def region_count(stats: InitStats, r: Rect) -> int:
    """Number of warm-up objects inside the closed rectangle ``r``."""
    return _count_in(stats._xs, stats._ys, r)


def region_keyword_count(stats: InitStats, r: Rect, kw: int) -> int:
    """Number of warm-up objects inside ``r`` whose keyword set holds ``kw``."""
    sl = stats._kw_slices.get(kw)
    if sl is None:
        return 0
    a, b = sl
    return _count_in(stats._kw_xs[a:b], stats._kw_ys[a:b], r)


def init_knn(stats: InitStats, x: float, y: float, psi: FrozenSet[int], k: int,
             since: Optional[int] = None) -> ResultSet:
    """Exact k nearest warm-up objects sharing a keyword with ``psi`` (``t >= since`` if given)."""
    return init_knn_many(stats, [(x, y, psi, k)], None if since is None else [since])[0]


Query = Tuple[float, float, FrozenSet[int], int]


def init_knn_many(stats: InitStats, queries: Sequence[Query],
                  since: Optional[Sequence[int]] = None) -> List[ResultSet]:
    n = len(queries)
    # per query: object index -> tree distance of candidates
    cands: List[Dict[int, float]] = [{} for _ in range(n)]
    fallback = [False] * n
    rows: List[Tuple[int, int]] = []
    pts: List[Tuple[float, float, float]] = []
    min_t = stats.min_t
    layer_z = stats._layer_z
    for q, (x, y, psi, _) in enumerate(queries):
        if since is not None and since[q] > min_t:
            fallback[q] = True
            continue
        for kw in psi:
            z = layer_z.get(kw)
            if z is not None:
                rows.append((q, kw))
                pts.append((x, y, z))
    if rows:
        kk = min(max(queries[q][3] for q, _ in rows) + 1, len(stats._kw_objs))
        d, idx = stats._tree.query(np.array(pts), k=kk)
        d_rows = np.reshape(d, (len(rows), kk)).tolist()
        obj_rows = stats._kw_objs[np.reshape(idx, (len(rows), kk))].tolist()
        slices = stats._kw_slices
        for (q, kw), dr, objs in zip(rows, d_rows, obj_rows):
            if fallback[q]:
                continue
            k = queries[q][3]
            a, b = slices[kw]
            size = b - a
            # a tie across the k-th place could hide an equally near object
            if k < size and not dr[k] > dr[k - 1] * (1.0 + 1e-9):
                fallback[q] = True
                continue
            t = min(k, size)
            cands[q].update(zip(objs[:t], dr[:t]))
    out: List[ResultSet] = []
    objects = stats.objects
    for q, (x, y, psi, k) in enumerate(queries):
        if fallback[q]:
            out.append(init_knn_ring(stats, x, y, psi, k, None if since is None else since[q]))
            continue
        c = cands[q]
        if len(c) > k:
            cut = sorted(c.values())[k - 1] * (1.0 + 1e-9)
            pool = [i for i, dd in c.items() if dd <= cut]
        else:
            pool = list(c)
        found = sorted((dist(x, y, objects[i].x, objects[i].y), objects[i].id) for i in pool)
        out.append(tuple(found[:k]))
    return out


def init_knn_radii(stats: InitStats, queries: Sequence[Query]) -> List[float]:
    """Distance to the k-th nearest qualifying warm-up object per query, ``inf`` if fewer qualify.

    Same value as the last entry of a full ``init_knn_many`` result, but the
    candidate merge is vectorised and ids are never ranked.
    """
    out = [math.inf] * len(queries)
    slices, layer_z = stats._kw_slices, stats._layer_z
    rows_q, pts, sizes = [], [], []
    for q, (x, y, psi, _) in enumerate(queries):
        for kw in psi:
            sl = slices.get(kw)
            if sl is not None:
                rows_q.append(q)
                pts.append((x, y, layer_z[kw]))
                sizes.append(sl[1] - sl[0])
    if not rows_q:
        return out
    nr = len(rows_q)
    rq = np.array(rows_q)
    ks = np.array([queries[q][3] for q in rows_q])
    sizes = np.array(sizes)
    kk = int(min(ks.max() + 1, len(stats._kw_objs)))
    pts = np.array(pts)
    d = np.full((nr, kk), np.inf)
    idx = np.zeros((nr, kk), dtype=np.int64)
    # rows asking for fewer neighbours get a cheaper query
    for k in np.unique(ks).tolist():
        sel = np.flatnonzero(ks == k)
        kq = min(k + 1, kk)
        dq, iq = stats._tree.query(pts[sel], k=kq)
        d[sel, :kq] = np.reshape(dq, (len(sel), kq))
        idx[sel, :kq] = np.reshape(iq, (len(sel), kq))

    # a tie across the k-th place could hide an equally near object
    check = ks < sizes
    kc = np.minimum(ks, kk - 1)
    dk = np.take_along_axis(d, kc[:, None], 1)[:, 0]
    dk1 = np.take_along_axis(d, (kc - 1)[:, None], 1)[:, 0]
    ring = set(rq[check & ~(dk > dk1 * (1.0 + 1e-9))].tolist())

    # lay each query's rows side by side; entries past a row's own layer are dropped
    keep = np.arange(kk)[None, :] < np.minimum(ks, sizes)[:, None]
    d = np.where(keep, d, np.inf)
    obj = np.where(keep, stats._kw_objs[np.minimum(idx, len(stats._kw_objs) - 1)], -1)
    nq = len(queries)
    counts = np.bincount(rq, minlength=nq)
    start = np.concatenate(([0], np.cumsum(counts)[:-1]))
    slot = np.arange(nr) - start[rq]
    width = int(counts.max()) * kk
    D = np.full((nq, width), np.inf)
    O = np.full((nq, width), -1, dtype=np.int64)
    cols = slot[:, None] * kk + np.arange(kk)[None, :]
    D[rq[:, None], cols] = d
    O[rq[:, None], cols] = obj
    # an object found under two keywords counts once
    order = np.argsort(O, axis=1, kind="stable")
    O = np.take_along_axis(O, order, 1)
    D = np.take_along_axis(D, order, 1)
    D[:, 1:][(O[:, 1:] == O[:, :-1]) & (O[:, 1:] >= 0)] = np.inf
    order = np.argsort(D, axis=1, kind="stable")
    O = np.take_along_axis(O, order, 1)
    D = np.take_along_axis(D, order, 1)

    qk = np.minimum(np.array([k for _, _, _, k in queries]), width)
    kth = D[np.arange(nq), qk - 1]
    # the exact k-th distance lies among the candidates the tree cannot separate from it
    npool = (D <= (kth * (1.0 + 1e-9))[:, None]).sum(axis=1)
    # with a clear gap on both sides of the k-th candidate its own distance is the answer
    prev = D[np.arange(nq), np.maximum(qk - 2, 0)]
    alone = (npool == qk) & ((qk == 1) | (prev < kth * (1.0 - 1e-9)))
    kth_obj = O[np.arange(nq), qk - 1].tolist()
    npool, alone, kth = npool.tolist(), alone.tolist(), kth.tolist()
    objects = stats.objects
    for q, (x, y, psi, k) in enumerate(queries):
        if q in ring:
            found = init_knn_ring(stats, x, y, psi, k)
            out[q] = found[-1][0] if len(found) == k else math.inf
        elif k > width or kth[q] == math.inf:
            continue
        elif alone[q]:
            o = objects[kth_obj[q]]
            out[q] = dist(x, y, o.x, o.y)
        else:
            near = sorted(dist(x, y, objects[i].x, objects[i].y) for i in O[q, :npool[q]].tolist())
            out[q] = near[k - 1]
    return out


def init_knn_ring(stats: InitStats, x: float, y: float, psi: FrozenSet[int], k: int,
                  since: Optional[int] = None) -> ResultSet:
    """Exact k nearest warm-up objects sharing a keyword with ``psi``, by grid ring search.

    Expands square rings of grid cells around the query cell and stops once the
    nearest unexplored cell is farther than the current k-th distance.  With
    ``since`` set, objects with ``t < since`` are ignored.
    """
    grid = stats.grid
    g = grid.g
    objects = stats.objects
    postings = stats.cell_postings
    c0, r0 = grid.col(x), grid.row(y)
    sx0, sy0 = grid.space.x0, grid.space.y0
    slack = 1e-9 * (grid.cw + grid.ch)
    best: List[Entry] = []
    ring = 0
    while True:
        for cell in _ring_cells(c0, r0, ring, g):
            cand = postings[cell]
            if not cand:
                continue
            seen = None
            for kw in psi:
                lst = cand.get(kw)
                if lst is None:
                    continue
                for i in lst:
                    if seen is not None:
                        if i in seen:
                            continue
                        seen.add(i)
                    o = objects[i]
                    if since is not None and o.t < since:
                        continue
                    e = (dist(x, y, o.x, o.y), o.id)
                    if len(best) < k:
                        bisect.insort(best, e)
                    elif e < best[-1]:
                        bisect.insort(best, e)
                        best.pop()
                seen = seen if seen is not None else set(lst)
        # distance from the query to the outside of the explored block
        bound = float("inf")
        if c0 - ring > 0:
            bound = min(bound, x - (sx0 + (c0 - ring) * grid.cw))
        if c0 + ring + 1 < g:
            bound = min(bound, sx0 + (c0 + ring + 1) * grid.cw - x)
        if r0 - ring > 0:
            bound = min(bound, y - (sy0 + (r0 - ring) * grid.ch))
        if r0 + ring + 1 < g:
            bound = min(bound, sy0 + (r0 + ring + 1) * grid.ch - y)
        if bound == float("inf"):
            break
        if len(best) == k and bound - slack > best[-1][0]:
            break
        ring += 1
    return tuple(best)


def _ring_cells(c0: int, r0: int, ring: int, g: int) -> Iterable[int]:
    if ring == 0:
        yield r0 * g + c0
        return
    lo_c, hi_c = c0 - ring, c0 + ring
    lo_r, hi_r = r0 - ring, r0 + ring
    cs = range(max(lo_c, 0), min(hi_c, g - 1) + 1)
    if lo_r >= 0:
        for c in cs:
            yield lo_r * g + c
    if hi_r < g:
        for c in cs:
            yield hi_r * g + c
    for r in range(max(lo_r + 1, 0), min(hi_r - 1, g - 1) + 1):
        if lo_c >= 0:
            yield r * g + lo_c
        if hi_c < g:
            yield r * g + hi_c
