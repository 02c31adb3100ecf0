"""Subscription partitioning.

``sop_quadtree_partition`` repeatedly quarters the costliest subspace.
``dkm_partition`` splits the costliest subset either by quadrants of its
subspace or by LPT binning of per-subscription costs, whichever leaves the
smaller total cost.
"""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

from .core import Ball, Rect, Subscription
from .costmodel import SubsetNode, dkm_subset_cost, enclosing_rect, sop_subset_cost
from .stats import InitStats

MIN_EXTENT = 1e-9  # relative to the data-space extent


class UnsplittableSubset(Exception):
    """A subset cannot be refined further (co-located members or minimal region)."""


@dataclass
class SplitRecord:
    seq: int
    size: int
    method: str  # "space" or "hybrid"
    c_space: float
    c_hybrid: Optional[float] = None
    # hybrid total with member costs held at the parent rectangle
    c_hybrid_parent: Optional[float] = None

    def as_dict(self) -> dict:
        return {"seq": self.seq, "size": self.size, "method": self.method,
                "c_space": self.c_space, "c_hybrid": self.c_hybrid,
                "c_hybrid_parent": self.c_hybrid_parent}


@dataclass
class PartitionResult:
    subsets: List[SubsetNode]
    strategy_log: List[SplitRecord] = field(default_factory=list)

    def nonempty(self) -> List[SubsetNode]:
        return [n for n in self.subsets if n.members]

    def __len__(self) -> int:
        return len(self.subsets)


def _colocated(members: Sequence[Subscription]) -> bool:
    x, y = members[0].x, members[0].y
    return all(s.x == x and s.y == y for s in members)


def _splittable(node: SubsetNode, space: Rect) -> bool:
    if len(node.members) <= 1 or _colocated(node.members):
        return False
    return (node.region.width > MIN_EXTENT * space.width
            and node.region.height > MIN_EXTENT * space.height)


def space_only_partition(node: SubsetNode, balls: Dict[str, Ball], space: Rect,
                         seq=None) -> List[SubsetNode]:
    """Quarter the node's subspace; members follow their location. Always four children."""
    if not node.members or not _splittable(node, space):
        raise UnsplittableSubset(f"subset of {len(node.members)} cannot be quartered")
    seq = seq or itertools.count()
    quads = node.region.quadrants()
    groups: List[List[Subscription]] = [[], [], [], []]
    for s in node.members:
        groups[node.region.quadrant_of(s.x, s.y)].append(s)
    return [SubsetNode(g, quads[i], enclosing_rect(g, balls, space), seq=next(seq))
            for i, g in enumerate(groups)]


def lpt_bins(costs: Dict[str, float], n_bins: int = 4) -> List[List[str]]:
    """Greedy LPT: descending cost (ties by id), each item to the lightest bin (ties by index)."""
    order = sorted(costs, key=lambda i: (-costs[i], i))
    bins: List[List[str]] = [[] for _ in range(n_bins)]
    loads = [0.0] * n_bins
    for i in order:
        b = min(range(n_bins), key=loads.__getitem__)
        bins[b].append(i)
        loads[b] += costs[i]
    return bins


def hybrid_partition(node: SubsetNode, stats: InitStats, balls: Dict[str, Ball],
                     seq=None) -> List[SubsetNode]:
    """LPT binning of member costs into four subsets; child costs recomputed per child rect."""
    if node.member_costs is None:
        raise ValueError("hybrid partition needs member costs computed under the parent rectangle")
    seq = seq or itertools.count()
    by_id = {s.id: s for s in node.members}
    children = []
    for ids in lpt_bins(node.member_costs, 4):
        members = [by_id[i] for i in ids]
        child = SubsetNode(members, node.region, enclosing_rect(members, balls, stats.space), seq=next(seq))
        dkm_subset_cost(child, stats)
        children.append(child)
    return children


def sop_quadtree_partition(subs: Sequence[Subscription], balls: Dict[str, Ball], stats: InitStats,
                           theta: int, m: int) -> PartitionResult:
    if theta < 1 or m < 1:
        raise ValueError("theta and m must be >= 1")
    space = stats.space
    seq = itertools.count()
    root = SubsetNode(list(subs), space, enclosing_rect(subs, balls, space), seq=next(seq))
    root.cost = sop_subset_cost(root, stats)
    leaves = [root]
    log: List[SplitRecord] = []
    target = theta * m
    while len(leaves) < target:
        cands = [n for n in leaves if _splittable(n, space)]
        if not cands:
            break
        node = max(cands, key=lambda n: (n.cost, -n.seq))
        children = space_only_partition(node, balls, space, seq)
        for c in children:
            c.cost = sop_subset_cost(c, stats)
        log.append(SplitRecord(node.seq, len(node.members), "space", sum(c.cost for c in children)))
        leaves.remove(node)
        leaves.extend(children)
    leaves.sort(key=lambda n: (-n.cost, n.seq))
    return PartitionResult(leaves, log)


def dkm_partition(subs: Sequence[Subscription], balls: Dict[str, Ball], stats: InitStats,
                  m: int, gamma1: int, gamma2: int) -> PartitionResult:
    if gamma1 < 1 or gamma2 < 1 or m < 1:
        raise ValueError("m, gamma1 and gamma2 must be >= 1")
    space = stats.space
    seq = itertools.count()
    root = SubsetNode(list(subs), space, enclosing_rect(subs, balls, space), seq=next(seq))
    dkm_subset_cost(root, stats)
    heap = [(-root.cost, root.seq, root)]
    frozen: List[SubsetNode] = []
    log: List[SplitRecord] = []
    target = gamma1 * m
    while heap and len(heap) + len(frozen) < target:
        _, _, node = heapq.heappop(heap)
        if not _splittable(node, space):
            frozen.append(node)
            continue
        spaced = space_only_partition(node, balls, space, seq)
        for c in spaced:
            dkm_subset_cost(c, stats)
        c_s = sum(c.cost for c in spaced)
        if len(node.members) > gamma2:
            chosen = spaced
            log.append(SplitRecord(node.seq, len(node.members), "space", c_s))
        else:
            hybrid = hybrid_partition(node, stats, balls, seq)
            c_h = sum(c.cost for c in hybrid)
            c_hp = sum(sum(node.member_costs[s.id] for s in c.members) for c in hybrid)
            if c_s < c_h:
                chosen, method = spaced, "space"
            else:
                chosen, method = hybrid, "hybrid"
            log.append(SplitRecord(node.seq, len(node.members), method, c_s, c_h, c_hp))
        for c in chosen:
            heapq.heappush(heap, (-c.cost, c.seq, c))
    nodes = [n for _, _, n in heap] + frozen
    nodes.sort(key=lambda n: (-n.cost, n.seq))
    return PartitionResult(nodes, log)
