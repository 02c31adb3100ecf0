"""Seeded synthetic workloads: clustered, Zipf-keyworded object streams and subscriptions."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .core import Rect, SKObject, Subscription, Vocabulary
from .runtime import ExperimentConfig, Tick, Workload


@dataclass(frozen=True)
class StreamShape:
    """Gaussian-mixture locations and Zipf-distributed keyword identities.

    ``clusters`` holds ``(cx, cy, sigma, weight)`` in coordinates relative to
    ``space`` (0..1 on each axis); sampled points are clipped into ``space``.
    """

    clusters: Tuple[Tuple[float, float, float, float], ...] = ((0.3, 0.3, 0.08, 0.5), (0.75, 0.7, 0.05, 0.5))
    zipf: float = 1.2
    vocab_size: int = 1_000
    kw_min: int = 3
    kw_max: int = 6
    space: Rect = Rect(0.0, 0.0, 1000.0, 1000.0)

    def validate(self) -> None:
        if not self.clusters:
            raise ValueError("stream shape needs at least one cluster")
        if self.zipf <= 0:
            raise ValueError(f"Zipf exponent must be positive, got {self.zipf}")
        if any(w < 0 or sig < 0 for _, _, sig, w in self.clusters) or sum(w for *_, w in self.clusters) <= 0:
            raise ValueError("cluster weights and sigmas must be non-negative with a positive total weight")
        if not 1 <= self.kw_min <= self.kw_max:
            raise ValueError(f"invalid keyword count range [{self.kw_min}, {self.kw_max}]")
        if self.vocab_size < self.kw_min:
            raise ValueError("vocabulary smaller than the minimum keywords per object")


def shape_from_config(cfg: ExperimentConfig) -> StreamShape:
    return StreamShape(clusters=tuple(tuple(c) for c in cfg.clusters), zipf=cfg.zipf,
                       vocab_size=cfg.vocab_size, kw_min=cfg.kw_min, kw_max=cfg.kw_max)


def vocabulary_for(shape: StreamShape) -> Vocabulary:
    """Token ``kw<i>`` interned to id ``i`` (rank ``i`` in the Zipf order)."""
    return Vocabulary(f"kw{i}" for i in range(shape.vocab_size))


def zipf_probabilities(n: int, exponent: float) -> np.ndarray:
    w = 1.0 / np.arange(1, n + 1, dtype=float) ** exponent
    return w / w.sum()


def generate_object_stream(shape: StreamShape, count: int, seed, t: int = 0,
                           id_start: int = 0) -> List[SKObject]:
    shape.validate()
    if count <= 0:
        return []
    rng = np.random.default_rng(seed)
    sp = shape.space
    cl = np.asarray(shape.clusters, dtype=float)
    which = rng.choice(len(cl), size=count, p=cl[:, 3] / cl[:, 3].sum())
    xs = cl[which, 0] + rng.standard_normal(count) * cl[which, 2]
    ys = cl[which, 1] + rng.standard_normal(count) * cl[which, 2]
    xs = sp.x0 + np.clip(xs, 0.0, 1.0) * sp.width
    ys = sp.y0 + np.clip(ys, 0.0, 1.0) * sp.height
    hi = min(shape.kw_max, shape.vocab_size)
    sizes = rng.integers(shape.kw_min, hi + 1, size=count)
    cdf = np.cumsum(zipf_probabilities(shape.vocab_size, shape.zipf))
    cdf[-1] = 1.0
    pool = np.searchsorted(cdf, rng.random(int(sizes.sum()) * 2 + 16), side="right").tolist()
    pos = 0
    out = []
    for i in range(count):
        need = int(sizes[i])
        kws = set()
        while len(kws) < need:
            if pos >= len(pool):
                pool = np.searchsorted(cdf, rng.random(4 * need + 16), side="right").tolist()
                pos = 0
            kws.add(pool[pos])
            pos += 1
        out.append(SKObject(f"o{id_start + i}", float(xs[i]), float(ys[i]), frozenset(kws), t))
    return out


def generate_subscriptions(pool: Sequence[SKObject], count: int, k_max: int, seed, t: int = 0,
                           id_start: int = 0) -> List[Subscription]:
    """Location copied from a random pool object; 1..min(5, |psi|) of its keywords; k in [1, k_max]."""
    if not pool:
        raise ValueError("subscription generation needs a non-empty object pool")
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    rng = np.random.default_rng(seed)
    picks = rng.integers(0, len(pool), size=count)
    ks = rng.integers(1, k_max + 1, size=count)
    out = []
    for i in range(count):
        o = pool[int(picks[i])]
        kws = sorted(o.psi)
        n = int(rng.integers(1, min(5, len(kws)) + 1))
        chosen = rng.choice(len(kws), size=n, replace=False)
        out.append(Subscription(f"s{id_start + i}", o.x, o.y, frozenset(kws[j] for j in chosen),
                                int(ks[i]), t))
    return out


def generate_workload(cfg: ExperimentConfig, shape: StreamShape = None) -> Workload:
    """Warm-up objects and initial subscriptions at t=0, then ``cfg.ticks`` timestamps of traffic."""
    shape = shape or shape_from_config(cfg)
    seeds = np.random.SeedSequence(cfg.seed).spawn(3 + 3 * cfg.ticks)
    warmup = generate_object_stream(shape, cfg.warmup_size, seeds[0], t=0)
    subs = generate_subscriptions(warmup, cfg.initial_subs, cfg.k_max, seeds[1], t=0) if warmup else []
    live = [s.id for s in subs]
    next_obj, next_sub = cfg.warmup_size, cfg.initial_subs
    del_rng = np.random.default_rng(seeds[2])
    ticks = []
    for t in range(1, cfg.ticks + 1):
        base = 3 + 3 * (t - 1)
        n_del = min(cfg.deletes_per_tick, len(live))
        gone = set(del_rng.choice(len(live), size=n_del, replace=False).tolist()) if n_del else set()
        deletes = [live[i] for i in sorted(gone)]
        live = [sid for i, sid in enumerate(live) if i not in gone]
        inserts = (generate_subscriptions(warmup, cfg.inserts_per_tick, cfg.k_max, seeds[base + 1],
                                          t=t, id_start=next_sub) if warmup else [])
        next_sub += len(inserts)
        live.extend(s.id for s in inserts)
        objects = generate_object_stream(shape, cfg.objects_per_tick, seeds[base], t=t, id_start=next_obj)
        next_obj += len(objects)
        ticks.append(Tick(t, objects, inserts, deletes))
    return Workload(warmup, subs, ticks)
