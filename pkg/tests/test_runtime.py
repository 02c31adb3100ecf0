import random

import pytest

from skmonitor.core import SKObject, Subscription
from skmonitor.runtime import (
    Coordinator,
    ExperimentConfig,
    HistoryIndex,
    Tick,
    TimestampMetrics,
    Workload,
    measured_assignment_imbalance,
    oracle_knn,
    run_experiment,
    summarize,
    verify_against_oracle,
)
from skmonitor.synth import generate_workload

from conftest import random_objects, random_subs, scan_knn

SMALL = dict(warmup_size=2_000, initial_subs=150, ticks=6, objects_per_tick=150,
             inserts_per_tick=15, deletes_per_tick=15, k_max=4, vocab_size=60)


def counts(metrics):
    return [(m.t, m.changes, m.n_objects, m.n_inserts, m.n_deletes) for m in metrics]


@pytest.mark.parametrize("algo", ["kop", "sop", "dkm"])
def test_verified_run_is_clean(algo):
    cfg = ExperimentConfig(algorithm=algo, m=3, verify=True, seed=4, **SMALL)
    metrics, coord = run_experiment(cfg, generate_workload(cfg))
    assert len(metrics) == 6
    assert all(r.clean for r in coord.reports)
    assert coord.check_registry() == []
    assert all(w.audit() == [] for w in coord.workers)


def test_deterministic_replay():
    cfg = ExperimentConfig(algorithm="dkm", m=4, seed=9, **SMALL)
    wl = generate_workload(cfg)
    m1, c1 = run_experiment(cfg, wl)
    m2, c2 = run_experiment(cfg, wl)
    assert counts(m1) == counts(m2)
    assert c1.results() == c2.results()
    assert c1.book.loads == c2.book.loads


def test_threaded_mode_matches_inline():
    base = dict(algorithm="sop", m=3, seed=2, **SMALL)
    wl = generate_workload(ExperimentConfig(**base))
    _, inline = run_experiment(ExperimentConfig(**base), wl)
    metrics, threaded = run_experiment(ExperimentConfig(deterministic=False, **base), wl)
    assert inline.results() == threaded.results()
    assert all(len(m.worker_update) == 3 for m in metrics)


def test_single_worker_has_no_imbalance():
    cfg = ExperimentConfig(algorithm="kop", m=1, seed=1, **SMALL)
    metrics, _ = run_experiment(cfg, generate_workload(cfg))
    assert all(m.load_balance == 0.0 for m in metrics)


def test_idle_ticks_report_zero_work():
    rng = random.Random(0)
    warm = random_objects(rng, 200)
    wl = Workload(warm, random_subs(rng, 20), [Tick(1), Tick(2)])
    metrics, _ = run_experiment(ExperimentConfig(algorithm="dkm", m=2), wl)
    for m in metrics:
        assert (m.changes, m.n_objects, m.n_inserts, m.n_deletes) == (0, 0, 0, 0)
    s = summarize(metrics)
    assert s["total_changes"] == 0 and s["timestamps"] == 2


def test_metric_arithmetic():
    m = TimestampMetrics(1, [0.3, 0.1, 0.2], 0.05, 0.01, 0, 0, 0, 0)
    assert m.update_time == 0.3 and m.load_balance == pytest.approx(0.2)
    assert m.combined == pytest.approx(0.36) and m.update_sum == pytest.approx(0.6)
    assert measured_assignment_imbalance([0.47, 0.48]) == pytest.approx(0.01)
    assert measured_assignment_imbalance([2.0, 2.0]) == 0.0
    assert measured_assignment_imbalance([5.0]) == 0.0
    assert summarize([])["mean_update_time"] == 0.0


def test_oracle_small_instance():
    # s1 with keywords {a, b, c} and k = 2 among nine objects
    a, b, c, d, e = range(5)
    pts = [(2, 1, {a}), (9, 9, {d}), (8, 2, {e}), (1, 3, {b, d}), (7, 7, {e}),
           (6, 1, {c}), (5, 6, {a, e}), (9, 1, {d}), (4, 9, {e})]
    objs = [SKObject(f"o{i + 1}", x, y, frozenset(p), 0) for i, (x, y, p) in enumerate(pts)]
    s1 = Subscription("s1", 2, 2, frozenset({a, b, c}), 2, 0)
    matching = {o.id for o in objs if o.psi & s1.psi}
    assert matching == {"o1", "o4", "o6", "o7"}
    assert [i for _, i in oracle_knn(s1, objs)] == ["o1", "o4"]
    assert oracle_knn(s1, []) == ()


def test_history_index_matches_scan():
    rng = random.Random(6)
    objs = random_objects(rng, 400, grid=8) + random_objects(rng, 100, t=2, start=400)
    h = HistoryIndex()
    h.extend(objs[:250])
    h.extend(objs[250:])
    assert len(h) == 500
    for s in random_subs(rng, 80, t=rng.choice([0, 1, 2])):
        assert h.knn(s) == scan_knn(s, objs) == oracle_knn(s, objs)


def test_verification_detects_corruption():
    cfg = ExperimentConfig(algorithm="kop", m=2, verify=True, seed=3, **SMALL)
    coord = Coordinator(cfg)
    wl = generate_workload(cfg)
    try:
        coord.setup(wl.warmup, wl.initial_subs)
        coord.step(wl.ticks[0])
        assert verify_against_oracle(coord).clean
        sid = sorted(coord.book.registry)[0]
        coord.workers[coord.worker_of(sid)].states[sid].entries.append((0.0, "bogus"))
        rep = verify_against_oracle(coord)
        assert [m[0] for m in rep.mismatches] == [sid]
        explicit = verify_against_oracle(coord, history=wl.warmup + wl.ticks[0].objects)
        assert not explicit.clean
    finally:
        coord.shutdown()


def test_fresh_system_verifies_clean():
    cfg = ExperimentConfig(algorithm="dkm", m=2, verify=True)
    rng = random.Random(1)
    coord = Coordinator(cfg)
    coord.setup(random_objects(rng, 50), [])
    rep = verify_against_oracle(coord)
    assert rep.clean and rep.checked == 0
    coord.shutdown()


def test_insert_delete_restores_loads():
    rng = random.Random(3)
    cfg = ExperimentConfig(algorithm="dkm", m=3)
    coord = Coordinator(cfg)
    coord.setup(random_objects(rng, 300), random_subs(rng, 40))
    before = coord.book.loads
    fresh = random_subs(rng, 5, t=1, prefix="n")
    coord.step(Tick(1, inserts=fresh))
    assert coord.book.loads != before
    coord.step(Tick(2, deletes=[s.id for s in fresh]))
    assert coord.book.loads == before
    coord.shutdown()


def test_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig(algorithm="rtree")
    with pytest.raises(ValueError):
        ExperimentConfig(m=0)
    with pytest.raises(ValueError):
        ExperimentConfig(ticks=-1)
