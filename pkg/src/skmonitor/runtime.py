"""Coordinator and simulation loop.

The coordinator ingests the warm-up objects, partitions and assigns the
initial subscriptions, loads the workers, and then drives one timestamp at a
time: subscription deletions, insertions, and a broadcast of the timestamp's
objects, followed by a barrier.  Workers either run inline in index order
(deterministic mode) or each on its own thread fed by a message queue.
"""

from __future__ import annotations

import gc
import logging
import queue
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .assign import (
    Assignment,
    LoadBook,
    delete_subscription,
    dkm_assign,
    best_overlaps,
    greedy_assign,
    new_subscription_rects,
    route_new_dkm,
    route_new_kop,
    route_new_sop,
)
from .core import Ball, Entry, Rect, ResultSet, SKObject, Subscription, dist
from .costmodel import kop_cost, sop_region_probability
from .partition import PartitionResult, dkm_partition, sop_quadtree_partition
from .stats import InitStats, bounding_space, build_init_stats, init_knn_many
from .worker import SopWorker, Worker, make_worker

log = logging.getLogger(__name__)

ALGORITHMS = ("kop", "sop", "dkm")


@dataclass
class ExperimentConfig:
    algorithm: str = "dkm"
    m: int = 4
    theta: int = 20
    gamma1: int = 20
    gamma2: int = 100_000
    stats_grid: int = 64
    worker_grid: int = 64
    deterministic: bool = True
    space: Optional[Rect] = None
    verify: bool = False
    keep_history: bool = False
    # synthetic workload shape
    warmup_size: int = 10_000
    initial_subs: int = 1_000
    ticks: int = 10
    objects_per_tick: int = 1_000
    inserts_per_tick: int = 100
    deletes_per_tick: int = 100
    k_max: int = 10
    vocab_size: int = 1_000
    zipf: float = 1.2
    kw_min: int = 3
    kw_max: int = 6
    clusters: Tuple[Tuple[float, float, float, float], ...] = ((0.3, 0.3, 0.08, 0.5), (0.75, 0.7, 0.05, 0.5))
    seed: int = 0

    def __post_init__(self):
        self.algorithm = self.algorithm.lower()
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if self.m < 1:
            raise ValueError("m must be >= 1")
        counts = (self.warmup_size, self.initial_subs, self.ticks, self.objects_per_tick,
                  self.inserts_per_tick, self.deletes_per_tick)
        if min(counts) < 0:
            raise ValueError("workload counts must be non-negative")


@dataclass
class Tick:
    t: int
    objects: List[SKObject] = field(default_factory=list)
    inserts: List[Subscription] = field(default_factory=list)
    deletes: List[str] = field(default_factory=list)
    partial: bool = False


@dataclass
class Workload:
    warmup: List[SKObject]
    initial_subs: List[Subscription]
    ticks: List[Tick]


@dataclass
class TimestampMetrics:
    t: int
    worker_update: List[float]
    insert_time: float
    delete_time: float
    changes: int
    n_objects: int
    n_inserts: int
    n_deletes: int
    partial: bool = False

    @property
    def update_time(self) -> float:
        return max(self.worker_update) if self.worker_update else 0.0

    @property
    def update_sum(self) -> float:
        return sum(self.worker_update)

    @property
    def load_balance(self) -> float:
        if not self.worker_update:
            return 0.0
        return max(self.worker_update) - min(self.worker_update)

    @property
    def combined(self) -> float:
        return self.update_time + self.insert_time + self.delete_time


def measured_assignment_imbalance(loads: Sequence[float]) -> float:
    if not loads:
        return 0.0
    return max(loads) - min(loads)


# ---------------------------------------------------------------------------
# worker hosting


class WorkerHost:
    """Applies command messages to one worker and keeps per-category timers."""

    def __init__(self, worker: Worker, clock: Callable[[], float]):
        self.worker = worker
        self.clock = clock
        self.timers = {"register": 0.0, "remove": 0.0, "update": 0.0}
        self.changes = 0
        self.objects_seen = 0

    def apply(self, msg: tuple) -> None:
        op = msg[0]
        t0 = self.clock()
        if op == "register":
            _, s, kw = msg
            self.worker.register(s, **kw)
            self.timers["register"] += self.clock() - t0
        elif op == "remove":
            self.worker.remove(msg[1])
            self.timers["remove"] += self.clock() - t0
        elif op == "batch":
            self.changes += self.worker.process_batch(msg[1])
            self.objects_seen += len(msg[1])
            self.timers["update"] += self.clock() - t0
        elif op == "bulk":
            self.worker.bulk_load(msg[1], index=msg[2])
        else:
            raise ValueError(f"unknown command {op!r}")

    def drain(self) -> Tuple[Dict[str, float], int]:
        out, changes = dict(self.timers), self.changes
        for k in self.timers:
            self.timers[k] = 0.0
        self.changes = 0
        return out, changes


class _ThreadedHost(threading.Thread):
    def __init__(self, idx: int, host: WorkerHost, acks: "queue.Queue"):
        super().__init__(name=f"worker-{idx}", daemon=True)
        self.idx = idx
        self.host = host
        self.inbox: "queue.Queue" = queue.Queue()
        self.acks = acks

    def run(self):
        while True:
            msg = self.inbox.get()
            if msg[0] == "stop":
                return
            if msg[0] == "barrier":
                timers, changes = self.host.drain()
                self.acks.put((self.idx, msg[1], timers, changes, None))
                continue
            try:
                self.host.apply(msg)
            except Exception as exc:  # surfaced at the next barrier
                log.exception("worker %d failed on %s", self.idx, msg[0])
                self.acks.put((self.idx, None, {}, 0, exc))


class Coordinator:
    """The main server: routing state, worker handles, history and metrics."""

    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.stats: Optional[InitStats] = None
        self.space: Optional[Rect] = None
        self.workers: List[Worker] = []
        self.book = LoadBook(config.m)
        self.partition: Optional[PartitionResult] = None
        self.assignment: Optional[Assignment] = None
        self.rects: List[Rect] = []
        self._rect_arr: Optional[np.ndarray] = None
        self._rect_costs: Dict[int, Dict[int, float]] = {}
        self.history: Optional[HistoryIndex] = None
        self.metrics: List[TimestampMetrics] = []
        self.reports: List["VerificationReport"] = []
        self._hosts: List[WorkerHost] = []
        self._threads: List[_ThreadedHost] = []
        self._acks: "queue.Queue" = queue.Queue()
        self.barriers = 0

    # -- plumbing -----------------------------------------------------------
    def _start_workers(self, space: Rect) -> None:
        cfg = self.config
        clock = time.perf_counter if cfg.deterministic else time.thread_time
        for i in range(cfg.m):
            w = make_worker(cfg.algorithm, space, name=f"w{i}", grid=cfg.worker_grid)
            self.workers.append(w)
            self._hosts.append(WorkerHost(w, clock))
        if not cfg.deterministic:
            self._threads = [_ThreadedHost(i, h, self._acks) for i, h in enumerate(self._hosts)]
            for th in self._threads:
                th.start()

    def send(self, w: int, msg: tuple) -> None:
        if self._threads:
            self._threads[w].inbox.put(msg)
        else:
            self._hosts[w].apply(msg)

    def broadcast(self, msg: tuple) -> None:
        for w in range(len(self._hosts)):
            self.send(w, msg)

    def barrier(self, t: int) -> List[Tuple[Dict[str, float], int]]:
        """Wait until every worker has finished all commands of timestamp ``t``."""
        self.barriers += 1
        if not self._threads:
            return [h.drain() for h in self._hosts]
        for th in self._threads:
            th.inbox.put(("barrier", t))
        got: Dict[int, Tuple[Dict[str, float], int]] = {}
        while len(got) < len(self._threads):
            idx, tt, timers, changes, exc = self._acks.get()
            if exc is not None:
                raise RuntimeError(f"worker {idx} failed") from exc
            if tt != t:
                raise RuntimeError(f"worker {idx} acknowledged {tt} while waiting for {t}")
            got[idx] = (timers, changes)
        return [got[i] for i in range(len(self._threads))]

    def shutdown(self) -> None:
        for th in self._threads:
            th.inbox.put(("stop",))
        for th in self._threads:
            th.join()
        self._threads = []

    # -- phases ---------------------------------------------------------------
    def setup(self, warmup: Sequence[SKObject], subs: Sequence[Subscription]) -> None:
        cfg = self.config
        space = cfg.space or bounding_space(warmup)
        self.space = space
        self.stats = build_init_stats(warmup, space, cfg.stats_grid)
        self._start_workers(space)
        if cfg.keep_history or cfg.verify:
            self.history = HistoryIndex()
            self.history.extend(warmup)
        subs = sorted(subs, key=lambda s: s.id)
        by_id = {s.id: s for s in subs}
        if len(by_id) != len(subs):
            raise ValueError("duplicate initial subscription ids")

        placement: Dict[str, Tuple[int, dict]] = {}
        if cfg.algorithm == "kop":
            costs = {s.id: kop_cost(s, self.stats) for s in subs}
            self.assignment = greedy_assign(list(costs.items()), cfg.m)
            for w, ids in enumerate(self.assignment.members):
                for sid in ids:
                    self.book.add(sid, w, costs[sid])
                    placement[sid] = (w, {})
        else:
            balls = self._initial_balls(subs)
            if cfg.algorithm == "sop":
                self.partition = sop_quadtree_partition(subs, balls, self.stats, cfg.theta, cfg.m)
                nodes = self.partition.nonempty()
                labels = {f"S{n.seq}": n for n in nodes}
                self.assignment = greedy_assign([(k, n.cost) for k, n in labels.items()], cfg.m)
                for w, keys in enumerate(self.assignment.members):
                    for key in keys:
                        node = labels[key]
                        share = sop_region_probability(node.rect, self.stats)
                        j = self.workers[w].add_subset(node.rect)
                        for s in node.members:
                            self.book.add(s.id, w, share)
                            placement[s.id] = (w, {"subset": j})
            else:
                self.partition = dkm_partition(subs, balls, self.stats, cfg.m, cfg.gamma1, cfg.gamma2)
                self.assignment = dkm_assign(self.partition, cfg.m)
                costs = {}
                for node in self.partition.subsets:
                    costs.update(node.member_costs)
                for w, ids in enumerate(self.assignment.members):
                    for sid in ids:
                        self.book.add(sid, w, costs[sid])
                        placement[sid] = (w, {})
                nonempty = sorted(self.partition.nonempty(), key=lambda n: n.seq)
                self.rects = [n.rect for n in nonempty]
                # keyword probabilities already counted for each rectangle seed the routing cache
                self._rect_costs = {i: dict(n.kw_probs or {}) for i, n in enumerate(nonempty)}
        for s in subs:
            w, kw = placement[s.id]
            self.send(w, ("register", s, kw))
        self.broadcast(("bulk", list(warmup), self.stats))
        self.barrier(0)

    def _initial_balls(self, subs: Sequence[Subscription]) -> Dict[str, Ball]:
        found = init_knn_many(self.stats, [(s.x, s.y, s.psi, s.k) for s in subs], [s.t for s in subs])
        return {s.id: Ball(s.p, res[-1][0] if len(res) == s.k else float("inf"))
                for s, res in zip(subs, found)}

    @property
    def rect_array(self) -> np.ndarray:
        if self._rect_arr is None:
            # without initial subsets every ball covers the space
            self._rect_arr = np.asarray(self.rects or [self.space], dtype=float)
        return self._rect_arr

    def route(self, s: Subscription, rn: Optional[Rect] = None, target: Optional[int] = None) -> Tuple[int, float]:
        algo = self.config.algorithm
        if algo == "kop":
            return route_new_kop(s, self.stats, self.book)
        if algo == "sop":
            return route_new_sop(s, self.stats, self.book, rn)
        return route_new_dkm(s, self.stats, self.rects or [self.space], self.book, rn, self._rect_costs, target)

    def route_batch(self, subs: Sequence[Subscription]) -> List[int]:
        """Route new subscriptions in order; the kNN and overlap work is shared across the batch."""
        algo = self.config.algorithm
        if algo == "kop" or not subs:
            return [self.route(s)[0] for s in subs]
        rns = new_subscription_rects(subs, self.stats)
        if algo == "sop":
            return [self.route(s, rn)[0] for s, rn in zip(subs, rns)]
        targets = best_overlaps(rns, self.rect_array, [(s.x, s.y) for s in subs])
        return [self.route(s, target=j)[0] for s, j in zip(subs, targets)]

    def step(self, tick: Tick) -> TimestampMetrics:
        clock = time.perf_counter
        t0 = clock()
        for sid in tick.deletes:
            w = delete_subscription(sid, self.book)
            if w is not None:
                self.send(w, ("remove", sid))
        t_del = clock() - t0
        t0 = clock()
        fresh, seen = [], set()
        for s in tick.inserts:
            if s.id in self.book.registry or s.id in seen:
                log.warning("insert of live subscription %s ignored", s.id)
            else:
                fresh.append(s)
                seen.add(s.id)
        for s, w in zip(fresh, self.route_batch(fresh)):
            self.send(w, ("register", s, {}))
        t_ins = clock() - t0
        if tick.objects:
            self.broadcast(("batch", tick.objects))
        acks = self.barrier(tick.t)
        if self.history is not None:
            self.history.extend(tick.objects)
        if self._threads:
            t_del += max(a[0].get("remove", 0.0) for a in acks)
            t_ins += max(a[0].get("register", 0.0) for a in acks)
        else:
            # inline workers were timed inside the coordinator's own clock
            t_del -= sum(a[0].get("remove", 0.0) for a in acks)
            t_ins -= sum(a[0].get("register", 0.0) for a in acks)
            t_del += max(a[0].get("remove", 0.0) for a in acks)
            t_ins += max(a[0].get("register", 0.0) for a in acks)
        m = TimestampMetrics(
            t=tick.t,
            worker_update=[a[0].get("update", 0.0) for a in acks],
            insert_time=max(t_ins, 0.0),
            delete_time=max(t_del, 0.0),
            changes=sum(a[1] for a in acks),
            n_objects=len(tick.objects),
            n_inserts=len(tick.inserts),
            n_deletes=len(tick.deletes),
            partial=tick.partial,
        )
        self.metrics.append(m)
        if self.config.verify:
            self.reports.append(verify_against_oracle(self))
        return m

    # -- queries --------------------------------------------------------------
    def worker_of(self, sid: str) -> int:
        return self.book.registry[sid][0]

    def current_result(self, sid: str) -> ResultSet:
        return self.workers[self.worker_of(sid)].current_result(sid)

    def live_subscriptions(self) -> List[Subscription]:
        return [self.workers[w].subs[sid] for sid, (w, _) in sorted(self.book.registry.items())]

    def results(self) -> Dict[str, ResultSet]:
        return {sid: self.current_result(sid) for sid in sorted(self.book.registry)}

    def check_registry(self) -> List[str]:
        problems = []
        held = {}
        for w, worker in enumerate(self.workers):
            for sid in worker.subs:
                if sid in held:
                    problems.append(f"{sid} held by workers {held[sid]} and {w}")
                held[sid] = w
        for sid, (w, _) in self.book.registry.items():
            if held.get(sid) != w:
                problems.append(f"{sid} registered to worker {w} but held by {held.get(sid)}")
        for sid in held:
            if sid not in self.book.registry:
                problems.append(f"{sid} held by worker {held[sid]} but not registered")
        return problems


def run_experiment(config: ExperimentConfig, workload: Workload,
                   on_tick: Optional[Callable[[Coordinator, TimestampMetrics], None]] = None,
                   ) -> Tuple[List[TimestampMetrics], Coordinator]:
    coord = Coordinator(config)
    try:
        coord.setup(workload.warmup, workload.initial_subs)
        # keep the collector from rescanning the setup state inside timed ticks
        gc.collect()
        gc.freeze()
        last_t = 0
        for tick in workload.ticks:
            if tick.t < last_t:
                raise ValueError(f"timestamp {tick.t} after {last_t}")
            last_t = tick.t
            m = coord.step(tick)
            if on_tick is not None:
                on_tick(coord, m)
    finally:
        gc.unfreeze()
        coord.shutdown()
    return coord.metrics, coord


def run_interleaved(configs: Sequence[ExperimentConfig], workload: Workload,
                    ) -> List[Tuple[List[TimestampMetrics], Coordinator]]:
    """Run several configurations over one workload, alternating them tick by tick.

    A slow stretch of the host then lands on every configuration instead of
    one of them; the starting configuration rotates each tick.
    """
    coords = [Coordinator(cfg) for cfg in configs]
    try:
        for c in coords:
            c.setup(workload.warmup, workload.initial_subs)
        gc.collect()
        gc.freeze()
        last_t = 0
        for i, tick in enumerate(workload.ticks):
            if tick.t < last_t:
                raise ValueError(f"timestamp {tick.t} after {last_t}")
            last_t = tick.t
            n = len(coords)
            for j in range(n):
                coords[(i + j) % n].step(tick)
    finally:
        gc.unfreeze()
        for c in coords:
            c.shutdown()
    return [(c.metrics, c) for c in coords]


def summarize(metrics: Sequence[TimestampMetrics]) -> Dict[str, float]:
    n = len(metrics)

    def mean(vals):
        vals = list(vals)
        return sum(vals) / len(vals) if vals else 0.0

    return {
        "timestamps": n,
        "mean_update_time": mean(m.update_time for m in metrics),
        "mean_update_sum": mean(m.update_sum for m in metrics),
        "mean_load_balance": mean(m.load_balance for m in metrics),
        "mean_insert_time": mean(m.insert_time for m in metrics),
        "mean_delete_time": mean(m.delete_time for m in metrics),
        "mean_combined_time": mean(m.combined for m in metrics),
        "total_changes": sum(m.changes for m in metrics),
        "total_objects": sum(m.n_objects for m in metrics),
        "total_inserts": sum(m.n_inserts for m in metrics),
        "total_deletes": sum(m.n_deletes for m in metrics),
        "partial_final": bool(metrics and metrics[-1].partial),
    }


# ---------------------------------------------------------------------------
# oracle


def oracle_knn(s: Subscription, history: Iterable[SKObject]) -> ResultSet:
    """Top-k by linear scan over ``history``: keyword overlap, ``s.t <= o.t``, (distance, id) order."""
    found = [(dist(s.x, s.y, o.x, o.y), o.id) for o in history
             if o.t >= s.t and not o.psi.isdisjoint(s.psi)]
    found.sort()
    return tuple(found[: s.k])


class HistoryIndex:
    """Every broadcast object, with per-keyword columns for a fast exact scan."""

    def __init__(self):
        self.objects: List[SKObject] = []
        self._n = 0
        self._xs = np.empty(1024)
        self._ys = np.empty(1024)
        self._ts = np.empty(1024, dtype=np.int64)
        self._kw: Dict[int, List] = {}  # kw -> [array, length]

    def __len__(self) -> int:
        return self._n

    def extend(self, objects: Iterable[SKObject]) -> None:
        for o in objects:
            i = self._n
            if i >= len(self._xs):
                n = 2 * len(self._xs)
                self._xs = np.resize(self._xs, n)
                self._ys = np.resize(self._ys, n)
                self._ts = np.resize(self._ts, n)
            self._xs[i], self._ys[i], self._ts[i] = o.x, o.y, o.t
            self.objects.append(o)
            self._n += 1
            for kw in o.psi:
                slot = self._kw.get(kw)
                if slot is None:
                    slot = self._kw[kw] = [np.empty(16, dtype=np.int64), 0]
                arr, ln = slot
                if ln >= len(arr):
                    arr = slot[0] = np.resize(arr, 2 * len(arr))
                arr[ln] = i
                slot[1] = ln + 1

    def knn(self, s: Subscription) -> ResultSet:
        parts = [self._kw[kw][0][: self._kw[kw][1]] for kw in s.psi if kw in self._kw]
        if not parts:
            return ()
        idx = parts[0] if len(parts) == 1 else np.unique(np.concatenate(parts))
        idx = idx[self._ts[idx] >= s.t]
        if len(idx) == 0:
            return ()
        d2 = (self._xs[idx] - s.x) ** 2 + (self._ys[idx] - s.y) ** 2
        if len(idx) > s.k:
            kth = np.partition(d2, s.k - 1)[s.k - 1]
            idx = idx[d2 <= kth * (1 + 1e-9) + 1e-300]
        objs = self.objects
        found = sorted((dist(s.x, s.y, objs[i].x, objs[i].y), objs[i].id) for i in idx.tolist())
        return tuple(found[: s.k])


@dataclass
class VerificationReport:
    checked: int
    mismatches: List[Tuple[str, ResultSet, ResultSet]]

    @property
    def clean(self) -> bool:
        return not self.mismatches


def verify_against_oracle(coord: Coordinator, history: Optional[Iterable[SKObject]] = None,
                          sample: Optional[Iterable[str]] = None) -> VerificationReport:
    """Compare each sampled live subscription's result with an exact scan of the history."""
    ids = sorted(coord.book.registry) if sample is None else list(sample)
    if history is None:
        if coord.history is None:
            raise ValueError("coordinator keeps no history; pass one explicitly")
        scan = coord.history.knn
    else:
        hist = list(history)
        scan = lambda s: oracle_knn(s, hist)  # noqa: E731
    mismatches = []
    for sid in ids:
        s = coord.workers[coord.worker_of(sid)].subs[sid]
        got = coord.current_result(sid)
        want = scan(s)
        if got != want:
            mismatches.append((sid, got, want))
    return VerificationReport(len(ids), mismatches)
