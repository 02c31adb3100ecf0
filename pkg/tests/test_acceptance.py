"""Acceptance checks, one per criterion; each prints a PASS/FAIL line.

    pytest tests/test_acceptance.py -v        # lines appear in the terminal summary
    python tests/test_acceptance.py           # lines go straight to stdout

The timing trends (7 and 8) take several minutes on one core.
"""

import math
import random
import statistics
import sys
from fractions import Fraction
from functools import lru_cache

import pytest

from skmonitor.assign import greedy_assign
from skmonitor.core import Ball, Rect, SKObject, Subscription
from skmonitor.costmodel import (
    dkm_region_keyword_probability,
    dkm_subscription_cost,
    kop_cost,
    sop_region_probability,
)
from skmonitor.partition import dkm_partition
from skmonitor.runtime import ExperimentConfig, Tick, run_experiment, run_interleaved, summarize
from skmonitor.stats import build_init_stats, init_knn_many
from skmonitor.synth import generate_workload

RESULTS = {}


def report(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} ({detail})"
    RESULTS[n] = line
    print(line)
    assert ok, line


# -- shared runs ------------------------------------------------------------

EXACT = dict(m=4, warmup_size=10_000, initial_subs=500, ticks=20, objects_per_tick=250,
             inserts_per_tick=50, deletes_per_tick=50, k_max=5, vocab_size=200, verify=True, seed=1)

TREND = dict(m=4, warmup_size=100_000, initial_subs=20_000, ticks=10, objects_per_tick=1_000,
             inserts_per_tick=100, deletes_per_tick=100, k_max=10)
SEEDS = range(10)


@lru_cache(maxsize=None)
def exact_runs():
    wl = generate_workload(ExperimentConfig(**EXACT))
    out = {}
    for algo in ("kop", "sop", "dkm"):
        snaps = []
        metrics, coord = run_experiment(ExperimentConfig(algorithm=algo, **EXACT), wl,
                                        on_tick=lambda c, m: snaps.append(c.results()))
        out[algo] = (metrics, coord, snaps)
    return out


@lru_cache(maxsize=None)
def trend_runs(seed, **overrides):
    """Summaries for KOP, SOP, DKM and DKM on one worker, stepped side by side on one workload."""
    cfg = dict(TREND, seed=seed, **overrides)
    wl = generate_workload(ExperimentConfig(**cfg))
    variants = {"kop": dict(algorithm="kop"), "sop": dict(algorithm="sop"), "dkm": dict(algorithm="dkm"),
                "dkm_m1": dict(algorithm="dkm", m=1)}
    if overrides:
        variants = {"dkm": variants["dkm"]}
    configs = [ExperimentConfig(**dict(cfg, **v)) for v in variants.values()]
    runs = run_interleaved(configs, wl)
    return {name: summarize(metrics) for name, (metrics, _) in zip(variants, runs)}


# -- criteria -----------------------------------------------------------------

def test_c1_exactness():
    runs = exact_runs()
    bad = {a: sum(len(r.mismatches) for r in c.reports) for a, (_, c, _) in runs.items()}
    ticks = {a: len(c.reports) for a, (_, c, _) in runs.items()}
    audits = sum(len(w.audit()) for _, c, _ in runs.values() for w in c.workers)
    ok = all(v == 0 for v in bad.values()) and all(v == 20 for v in ticks.values()) and audits == 0
    report(1, ok, f"mismatches {bad}, verified timestamps {ticks}, index audit problems {audits}")


def test_c2_variant_equivalence():
    runs = exact_runs()
    ref = runs["kop"][2]
    diffs = 0
    for algo in ("sop", "dkm"):
        for a, b in zip(ref, runs[algo][2]):
            diffs += sum(a[sid] != b.get(sid) for sid in a) + len(set(b) - set(a))
    same_len = all(len(runs[a][2]) == len(ref) for a in runs)
    report(2, diffs == 0 and same_len, f"{diffs} differing result sets over {len(ref)} timestamps")


def _opt_makespan(costs, m):
    costs = sorted(costs, reverse=True)
    best = [sum(costs)]
    loads = [0.0] * m

    def place(i):
        if i == len(costs):
            best[0] = min(best[0], max(loads))
            return
        tried = set()
        for w in range(m):
            if loads[w] in tried or loads[w] + costs[i] >= best[0]:
                continue
            tried.add(loads[w])
            loads[w] += costs[i]
            place(i + 1)
            loads[w] -= costs[i]

    place(0)
    return best[0]


def test_c3_greedy_bound():
    rng = random.Random(2024)
    violations, worst = 0, 0.0
    for _ in range(1000):
        n, m = rng.randint(1, 12), rng.choice([2, 3])
        costs = [rng.random() for _ in range(n)]
        got = max(greedy_assign([(f"i{j}", c) for j, c in enumerate(costs)], m).loads)
        opt = _opt_makespan(costs, m)
        worst = max(worst, got / opt)
        violations += got > 1.5 * opt * (1 + 1e-12)
    report(3, violations == 0, f"{violations} violations, worst ratio {worst:.4f}")


def test_c4_example_golden():
    costs = [0.36, 0.11, 0.2, 0.28]
    a = greedy_assign([(f"S{i + 1}", c) for i, c in enumerate(costs)], 2)
    groups = [sorted((dict(zip(["S1", "S2", "S3", "S4"], costs))[i] for i in g), reverse=True)
              for g in a.members]
    ok = groups == [[0.36, 0.11], [0.28, 0.2]]
    report(4, ok, f"groups {groups}")


def test_c5_partition_law():
    violations, entries, both = 0, 0, set()
    for seed in range(100):
        rng = random.Random(seed)
        space = Rect(0, 0, 100, 100)
        objs = [SKObject(f"o{i}", rng.gauss(30 + 40 * (i % 2), 12) % 100, rng.gauss(50, 20) % 100,
                         frozenset(rng.sample(range(12), rng.randint(1, 3))), 0) for i in range(600)]
        st = build_init_stats(objs, space, 16)
        subs = [Subscription(f"s{i}", o.x, o.y, frozenset(rng.sample(sorted(o.psi), 1)), rng.randint(1, 6), 0)
                for i, o in enumerate(rng.sample(objs, rng.randint(40, 250)))]
        found = init_knn_many(st, [(s.x, s.y, s.psi, s.k) for s in subs])
        balls = {s.id: Ball(s.p, r[-1][0] if len(r) == s.k else math.inf) for s, r in zip(subs, found)}
        gamma2 = rng.randint(10, 200)
        res = dkm_partition(subs, balls, st, rng.randint(1, 4), rng.randint(1, 6), gamma2)
        for rec in res.strategy_log:
            entries += 1
            both.add(rec.method)
            if rec.size > gamma2:
                violations += rec.method != "space"
            else:
                want = "space" if rec.c_space < rec.c_hybrid else "hybrid"
                violations += rec.method != want
        ids = [s.id for n in res.subsets for s in n.members]
        violations += len(ids) != len(set(ids)) or set(ids) != {s.id for s in subs}
    ok = violations == 0 and entries > 0
    report(5, ok, f"{violations} violations over {entries} splits, methods seen {sorted(both)}")


def test_c6_cost_inequalities():
    rng = random.Random(6)
    space = Rect(0, 0, 100, 100)
    objs = [SKObject(f"o{i}", rng.uniform(0, 100), rng.uniform(0, 100),
                     frozenset(rng.sample(range(30), rng.randint(1, 4))), 0) for i in range(2000)]
    st = build_init_stats(objs, space, 16)
    bad = 0
    for i in range(10_000):
        s = Subscription(f"s{i}", rng.uniform(0, 100), rng.uniform(0, 100),
                         frozenset(rng.sample(range(34), rng.randint(1, 4))), 1, 0)
        xa, xb = sorted(rng.uniform(0, 100) for _ in range(2))
        ya, yb = sorted(rng.uniform(0, 100) for _ in range(2))
        r = Rect(xa, ya, xb, yb)
        grown = Rect(max(xa - rng.uniform(0, 20), 0), max(ya - rng.uniform(0, 20), 0),
                     min(xb + rng.uniform(0, 20), 100), yb)
        c, c2, k = dkm_subscription_cost(s, r, st), dkm_subscription_cost(s, grown, st), kop_cost(s, st)
        bad += not (0.0 <= c <= c2 <= k)
        p = sop_region_probability(r, st)
        bad += any(not (dkm_region_keyword_probability(r, kw, st) <= p <= 1.0) for kw in s.psi)
    report(6, bad == 0, f"{bad} violations over 10000 pairs")


@pytest.mark.slow
def test_c7_load_balance_and_time():
    lb_wins = time_wins = 0
    rows = []
    for seed in SEEDS:
        r = trend_runs(seed)
        lb_wins += r["dkm"]["mean_load_balance"] < r["sop"]["mean_load_balance"]
        time_wins += r["dkm"]["mean_combined_time"] <= r["kop"]["mean_combined_time"]
        rows.append(f"{r['dkm']['mean_combined_time'] * 1e3:.1f}/{r['kop']['mean_combined_time'] * 1e3:.1f}")
    ok = lb_wins >= 8 and time_wins >= 8
    report(7, ok, f"load balance below SOP on {lb_wins}/10 seeds; combined time at most KOP on "
                  f"{time_wins}/10 seeds (dkm/kop ms: {' '.join(rows)})")


@pytest.mark.slow
def test_c8_scaling():
    m_wins = 0
    for seed in SEEDS:
        r = trend_runs(seed)
        m_wins += r["dkm"]["mean_update_time"] < r["dkm_m1"]["mean_update_time"]
    ratios = [trend_runs(seed)["dkm"]["mean_update_time"]
              / trend_runs(seed, initial_subs=10_000)["dkm"]["mean_update_time"] for seed in range(5)]
    med = statistics.median(ratios)
    ok = m_wins == len(SEEDS) and med <= 2.5
    report(8, ok, f"m=4 faster than m=1 on {m_wins}/{len(SEEDS)} seeds; update time ratio 2e4/1e4 "
                  f"subscriptions median {med:.2f} ({' '.join(f'{x:.2f}' for x in ratios)})")


def test_c9_bookkeeping():
    worst = 0.0
    restore_ok = True
    for algo, (_, coord, _) in exact_runs().items():
        by_worker = [[] for _ in range(coord.config.m)]
        for sid, (w, cost) in coord.book.registry.items():
            by_worker[w].append(cost)
        for w, costs in enumerate(by_worker):
            worst = max(worst, abs(coord.book.loads[w] - math.fsum(costs)))
        exact = [float(sum(map(Fraction, c), Fraction(0))) for c in by_worker]
        restore_ok &= exact == coord.book.loads
        before = coord.book.loads
        s = Subscription("probe", coord.space.center.x, coord.space.center.y, frozenset({0, 1}), 3, 99)
        coord.step(Tick(99, inserts=[s]))
        coord.step(Tick(100, deletes=["probe"]))
        restore_ok &= coord.book.loads == before
    report(9, worst <= 1e-9 and restore_ok,
           f"max |C(w) - sum of live costs| = {worst:.3g}; insert then delete restores loads: {restore_ok}")


if __name__ == "__main__":
    failed = 0
    for name, fn in sorted(globals().items()):
        if name.startswith("test_c") and callable(fn):
            try:
                fn()
            except AssertionError:
                failed += 1
    sys.exit(1 if failed else 0)
