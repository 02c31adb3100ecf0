"""Subscription cost models: keyword-oriented, space-oriented and hybrid."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional

from .core import (
    Ball,
    ConfigurationError,
    Rect,
    ResultSet,
    Subscription,
    ball_bounding_rect,
    mbr,
    result_ball,
)
from .stats import InitStats, keyword_probability, region_count, region_keyword_count


@dataclass
class SubsetNode:
    """A subset of subscriptions with its enclosing rectangle and estimated cost.

    ``region`` is the subspace the subset was carved from (used for further
    quadrant splits); ``rect`` encloses the members' ball rectangles and is the
    area where a new object can touch any member.
    """

    members: List[Subscription]
    region: Rect
    rect: Optional[Rect]
    cost: float = 0.0
    member_costs: Optional[Dict[str, float]] = None
    seq: int = 0
    # keyword -> P(rect, keyword), filled by dkm_subset_cost
    kw_probs: Optional[Dict[int, float]] = field(default=None, repr=False)

    def __len__(self) -> int:
        return len(self.members)

    @property
    def ids(self) -> List[str]:
        return [s.id for s in self.members]


def current_ball(s: Subscription, result: ResultSet) -> Ball:
    return result_ball(s, result)


def enclosing_rect(members: Iterable[Subscription], balls: Dict[str, Ball], space: Rect) -> Optional[Rect]:
    return mbr(ball_bounding_rect(balls[s.id], space) for s in members)


def kop_cost(s: Subscription, stats: InitStats) -> float:
    return sum(keyword_probability(stats, kw) for kw in sorted(s.psi))


def sop_region_probability(r: Rect, stats: InitStats) -> float:
    if stats.total == 0:
        raise ConfigurationError("space cost needs a non-empty warm-up set")
    return region_count(stats, r) / stats.total


def sop_subset_cost(node: SubsetNode, stats: InitStats) -> float:
    if not node.members or node.rect is None:
        return 0.0
    return sop_region_probability(node.rect, stats) * len(node.members)


def dkm_region_keyword_probability(r: Rect, kw: int, stats: InitStats) -> float:
    if stats.total == 0:
        raise ConfigurationError("hybrid cost needs a non-empty warm-up set")
    return region_keyword_count(stats, r, kw) / stats.total


def dkm_subscription_cost(s: Subscription, r: Rect, stats: InitStats,
                          _cache: Optional[Dict[int, float]] = None) -> float:
    total = 0.0
    for kw in sorted(s.psi):
        if _cache is None:
            total += dkm_region_keyword_probability(r, kw, stats)
            continue
        p = _cache.get(kw)
        if p is None:
            p = _cache[kw] = dkm_region_keyword_probability(r, kw, stats)
        total += p
    return total


def dkm_subset_cost(node: SubsetNode, stats: InitStats) -> float:
    """Sum of member costs under the node's own rectangle; fills ``member_costs``."""
    if not node.members or node.rect is None:
        node.member_costs = {}
        node.cost = 0.0
        return 0.0
    cache: Dict[int, float] = {}
    costs = {s.id: dkm_subscription_cost(s, node.rect, stats, cache) for s in node.members}
    node.kw_probs = cache
    node.member_costs = costs
    node.cost = sum(costs[i] for i in sorted(costs))
    return node.cost
