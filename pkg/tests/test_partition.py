import random

import pytest

from skmonitor.core import UNBOUNDED, Ball, Point, Rect, SKObject, Subscription
from skmonitor.costmodel import SubsetNode, dkm_subset_cost, enclosing_rect
from skmonitor.partition import (
    UnsplittableSubset,
    dkm_partition,
    hybrid_partition,
    lpt_bins,
    sop_quadtree_partition,
    space_only_partition,
)
from skmonitor.stats import build_init_stats

from conftest import SPACE, random_objects, random_subs


def uniform_stats(n=400, seed=0):
    return build_init_stats(random_objects(random.Random(seed), n, vocab=4), SPACE, 16)


def balls_of(subs, radius):
    return {s.id: Ball(s.p, radius) for s in subs}


def test_lpt_bins():
    assert lpt_bins({"a": 8, "b": 7, "c": 6, "d": 5, "e": 4}) == [["a"], ["b"], ["c"], ["d", "e"]]
    assert lpt_bins({k: 1.0 for k in "wxyz"}) == [["w"], ["x"], ["y"], ["z"]]
    assert lpt_bins({"s": 3.0}) == [["s"], [], [], []]


def test_space_only_children():
    subs = [Subscription(f"s{i}", x, y, frozenset({0}), 1, 0)
            for i, (x, y) in enumerate([(10, 10), (90, 10), (10, 90), (90, 90)])]
    node = SubsetNode(subs, SPACE, SPACE)
    kids = space_only_partition(node, balls_of(subs, 1.0), SPACE)
    assert [len(k) for k in kids] == [1, 1, 1, 1]
    one = SubsetNode(subs[:1] + [Subscription("t", 11, 11, frozenset({0}), 1, 0)], SPACE, SPACE)
    kids = space_only_partition(one, balls_of(one.members, 1.0), SPACE)
    assert [len(k) for k in kids] == [2, 0, 0, 0]
    assert kids[1].rect is None
    with pytest.raises(UnsplittableSubset):
        space_only_partition(SubsetNode(subs[:1], SPACE, SPACE), {}, SPACE)


def test_space_split_shrinks_cost_for_compact_balls():
    st_ = uniform_stats()
    subs = [Subscription(f"s{i}", x, y, frozenset({0, 1}), 1, 0)
            for i, (x, y) in enumerate([(10, 10), (15, 12), (85, 80), (90, 88)])]
    balls = balls_of(subs, 3.0)
    node = SubsetNode(subs, SPACE, enclosing_rect(subs, balls, SPACE))
    parent = dkm_subset_cost(node, st_)
    kids = space_only_partition(node, balls, SPACE)
    assert sum(dkm_subset_cost(k, st_) for k in kids) < parent


def test_sop_uniform_four_leaves():
    rng = random.Random(2)
    st_ = uniform_stats()
    subs = random_subs(rng, 200)
    res = sop_quadtree_partition(subs, balls_of(subs, 2.0), st_, theta=1, m=4)
    assert len(res.subsets) == 4
    assert sorted(n.region for n in res.subsets) == sorted(SPACE.quadrants())


def test_sop_clustered_recursion_and_cost_order():
    st_ = uniform_stats()
    # everything in the SW corner: splitting follows it down
    subs = [Subscription(f"s{i}", 1 + i * 0.1, 1 + i * 0.05, frozenset({0}), 1, 0) for i in range(20)]
    res = sop_quadtree_partition(subs, balls_of(subs, 0.01), st_, theta=4, m=2)
    assert len(res.subsets) >= 8 and len(res.strategy_log) == 3
    assert max(n.region.width for n in res.nonempty()) < 50
    # two clusters: the costlier (bigger) one is split first
    big = [Subscription(f"b{i}", 20 + i % 5, 20 + i // 5, frozenset({0}), 1, 0) for i in range(25)]
    small = [Subscription(f"c{i}", 80 + i, 80, frozenset({0}), 1, 0) for i in range(3)]
    subs = big + small
    res = sop_quadtree_partition(subs, balls_of(subs, 2.0), st_, theta=7, m=1)
    first, second = res.strategy_log[0], res.strategy_log[1]
    assert first.size == 28 and second.size == 25


def test_dkm_unsplit_when_budget_is_one():
    st_ = uniform_stats()
    subs = random_subs(random.Random(0), 30)
    res = dkm_partition(subs, balls_of(subs, 5.0), st_, m=1, gamma1=1, gamma2=100)
    assert len(res.subsets) == 1 and not res.strategy_log
    assert {s.id for s in res.subsets[0].members} == {s.id for s in subs}


def test_dkm_regimes():
    st_ = uniform_stats()
    rng = random.Random(4)
    # compact balls spread over the space favour the spatial split
    compact = random_subs(rng, 80)
    res = dkm_partition(compact, balls_of(compact, 1.0), st_, m=1, gamma1=2, gamma2=1000)
    rec = res.strategy_log[0]
    assert rec.method == "space" and rec.c_space < rec.c_hybrid
    # balls covering the whole space: quartering cannot shrink anything
    wide = random_subs(rng, 80, start=100)
    res = dkm_partition(wide, balls_of(wide, UNBOUNDED), st_, m=1, gamma1=2, gamma2=1000)
    rec = res.strategy_log[0]
    assert rec.method == "hybrid" and rec.c_hybrid <= rec.c_space


def test_dkm_space_only_above_gamma2():
    st_ = uniform_stats()
    subs = random_subs(random.Random(8), 60)
    res = dkm_partition(subs, balls_of(subs, UNBOUNDED), st_, m=2, gamma1=3, gamma2=10)
    for rec in res.strategy_log:
        if rec.size > 10:
            assert rec.method == "space" and rec.c_hybrid is None


def test_hybrid_children_cover_members():
    st_ = uniform_stats()
    subs = random_subs(random.Random(9), 21)
    balls = balls_of(subs, 4.0)
    node = SubsetNode(subs, SPACE, enclosing_rect(subs, balls, SPACE))
    dkm_subset_cost(node, st_)
    kids = hybrid_partition(node, st_, balls)
    assert sorted(s.id for k in kids for s in k.members) == sorted(s.id for s in subs)
    assert all(k.member_costs is not None for k in kids)
    with pytest.raises(ValueError):
        hybrid_partition(SubsetNode(subs, SPACE, SPACE), st_, balls)


def test_colocated_subset_is_frozen():
    st_ = uniform_stats()
    subs = [Subscription(f"s{i}", 40, 40, frozenset({i % 3}), 1, 0) for i in range(10)]
    res = dkm_partition(subs, balls_of(subs, 3.0), st_, m=4, gamma1=2, gamma2=5)
    covered = sorted(s.id for n in res.subsets for s in n.members)
    assert covered == sorted(s.id for s in subs)
