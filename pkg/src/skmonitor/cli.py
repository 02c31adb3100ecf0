"""Command-line driver: ``run``, ``verify``, ``partition-report`` and ``gen``.

Workloads come either from a record file (``--input``) or from the seeded
synthetic generator configured by the same flags.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict
from typing import IO, List, Optional, Sequence

from .core import IngestError, SKObject, Vocabulary
from .runtime import (
    ALGORITHMS,
    Coordinator,
    ExperimentConfig,
    TimestampMetrics,
    Workload,
    run_experiment,
    summarize,
)
from .streams import StreamFormatError, parse_records, records_to_workload, workload_records, write_records
from .synth import generate_object_stream, generate_workload, shape_from_config, vocabulary_for

log = logging.getLogger("skmonitor")


def _config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("experiment")
    g.add_argument("--algorithm", choices=ALGORITHMS, default="dkm")
    g.add_argument("--workers", type=int, default=4, help="number of workers m")
    g.add_argument("--kmax", type=int, default=10)
    g.add_argument("--theta", type=int, default=20, help="SOP leaves per worker")
    g.add_argument("--gamma1", type=int, default=20, help="DKM subsets per worker")
    g.add_argument("--gamma2", type=int, default=100_000, help="DKM hybrid-split size limit")
    g.add_argument("--warmup", type=int, default=10_000, help="warm-up objects")
    g.add_argument("--init-subs", type=int, default=1_000, help="initial subscriptions")
    g.add_argument("--ticks", type=int, default=10, help="streamed timestamps")
    g.add_argument("--objects-per-tick", type=int, default=1_000)
    g.add_argument("--churn-per-tick", type=int, default=100, help="inserts and deletes per timestamp")
    g.add_argument("--stats-grid", type=int, default=64)
    g.add_argument("--worker-grid", type=int, default=64)
    g.add_argument("--vocab", type=int, default=1_000, help="synthetic vocabulary size")
    g.add_argument("--zipf", type=float, default=1.2)
    g.add_argument("--seed", type=int, default=0)
    mode = g.add_mutually_exclusive_group()
    mode.add_argument("--deterministic", dest="deterministic", action="store_true", default=True,
                      help="run workers inline in index order (default)")
    mode.add_argument("--threaded", dest="deterministic", action="store_false",
                      help="run each worker on its own thread")
    g.add_argument("--input", help="record file instead of the synthetic generator")


def config_from_args(args: argparse.Namespace, **extra) -> ExperimentConfig:
    return ExperimentConfig(
        algorithm=args.algorithm, m=args.workers, theta=args.theta, gamma1=args.gamma1,
        gamma2=args.gamma2, stats_grid=args.stats_grid, worker_grid=args.worker_grid,
        deterministic=args.deterministic, warmup_size=args.warmup, initial_subs=args.init_subs,
        ticks=args.ticks, objects_per_tick=args.objects_per_tick, inserts_per_tick=args.churn_per_tick,
        deletes_per_tick=args.churn_per_tick, k_max=args.kmax, vocab_size=args.vocab, zipf=args.zipf,
        seed=args.seed, **extra)


def load_workload(path: str, objects_per_tick: Optional[int] = None) -> Workload:
    vocab = Vocabulary()
    with open(path) as fh:
        records = list(parse_records(fh, vocab, source=path))
    return records_to_workload(records, objects_per_tick)


def workload_for(args, cfg: ExperimentConfig) -> Workload:
    if args.input:
        return load_workload(args.input, cfg.objects_per_tick)
    return generate_workload(cfg)


def write_metrics(metrics: Sequence[TimestampMetrics], m: int, fh: IO[str]) -> None:
    w = csv.writer(fh, delimiter="\t", lineterminator="\n")
    w.writerow(["timestamp"] + [f"w{i}_update" for i in range(m)]
               + ["update_time", "load_balance", "insert_time", "delete_time", "combined_time", "partial"])
    for r in metrics:
        w.writerow([r.t] + [f"{x:.6f}" for x in r.worker_update]
                   + [f"{v:.6f}" for v in (r.update_time, r.load_balance, r.insert_time,
                                            r.delete_time, r.combined)]
                   + [int(r.partial)])


def _summary(cfg: ExperimentConfig, metrics, coord: Coordinator, **extra) -> dict:
    out = {"config": {k: v for k, v in asdict(cfg).items() if k != "space"}}
    out["summary"] = summarize(metrics)
    out["summary"]["estimated_loads"] = coord.book.loads
    out.update(extra)
    return out


def _emit(args, cfg, metrics, coord, **extra) -> dict:
    if args.metrics_out:
        with open(args.metrics_out, "w") as fh:
            write_metrics(metrics, cfg.m, fh)
    else:
        write_metrics(metrics, cfg.m, sys.stdout)
    summary = _summary(cfg, metrics, coord, **extra)
    text = json.dumps(summary, indent=2, sort_keys=True, default=list)
    if args.summary_out:
        with open(args.summary_out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text, file=sys.stderr if not args.metrics_out else sys.stdout)
    return summary


def cmd_run(args) -> int:
    cfg = config_from_args(args)
    metrics, coord = run_experiment(cfg, workload_for(args, cfg))
    _emit(args, cfg, metrics, coord)
    return 0


def cmd_verify(args) -> int:
    cfg = config_from_args(args, verify=True)
    metrics, coord = run_experiment(cfg, workload_for(args, cfg))
    bad = [(m.t, r) for m, r in zip(metrics, coord.reports) if not r.clean]
    problems = coord.check_registry()
    for w in coord.workers:
        problems.extend(w.audit())
    for t, rep in bad:
        for sid, got, want in rep.mismatches[:5]:
            print(f"t={t} {sid}: got {got} expected {want}", file=sys.stderr)
    for p in problems:
        print(p, file=sys.stderr)
    n_bad = sum(len(r.mismatches) for _, r in bad)
    _emit(args, cfg, metrics, coord, mismatches=n_bad, checked=sum(r.checked for r in coord.reports),
          index_problems=len(problems))
    return 1 if n_bad or problems else 0


def cmd_partition_report(args) -> int:
    cfg = config_from_args(args)
    wl = workload_for(args, cfg)
    coord = Coordinator(cfg)
    try:
        coord.setup(wl.warmup, wl.initial_subs)
    finally:
        coord.shutdown()
    report = {"algorithm": cfg.algorithm, "m": cfg.m, "subsets": [], "strategy_log": [],
              "assignment": coord.assignment.report_lines() if coord.assignment else [],
              "estimated_loads": coord.book.loads}
    if coord.partition is not None:
        for n in coord.partition.nonempty():
            report["subsets"].append({"seq": n.seq, "size": len(n.members), "cost": n.cost,
                                      "rect": list(n.rect) if n.rect else None})
        report["strategy_log"] = [r.as_dict() for r in coord.partition.strategy_log]
    text = json.dumps(report, indent=2)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return 0


def cmd_gen(args) -> int:
    cfg = config_from_args(args)
    shape = shape_from_config(cfg)
    vocab = vocabulary_for(shape)
    if args.count is not None:
        # a bare object stream, objects_per_tick objects per timestamp from t=1
        objs = generate_object_stream(shape, args.count, cfg.seed)
        per = max(cfg.objects_per_tick, 1)
        records = [SKObject(o.id, o.x, o.y, o.psi, 1 + i // per) for i, o in enumerate(objs)]
    else:
        records = workload_records(generate_workload(cfg, shape))
    fh = open(args.out, "w") if args.out else sys.stdout
    try:
        n = write_records(records, vocab, fh)
    finally:
        if fh is not sys.stdout:
            fh.close()
    log.info("wrote %d records", n)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="skmonitor", description="Distributed spatial-keyword kNN monitoring")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    for name, fn, text in (("run", cmd_run, "run an experiment and emit metrics"),
                           ("verify", cmd_verify, "run with an exact oracle check after every timestamp")):
        p = sub.add_parser(name, help=text)
        _config_flags(p)
        p.add_argument("--metrics-out", help="per-timestamp TSV (stdout if omitted)")
        p.add_argument("--summary-out", help="JSON summary (stderr if omitted)")
        p.set_defaults(fn=fn)

    p = sub.add_parser("partition-report", help="partition and assign the initial subscriptions only")
    _config_flags(p)
    p.add_argument("--out", help="JSON report path (stdout if omitted)")
    p.set_defaults(fn=cmd_partition_report)

    p = sub.add_parser("gen", help="write a synthetic workload as records")
    _config_flags(p)
    p.add_argument("--count", type=int, default=None,
                   help="emit only a stream of this many objects instead of a full workload")
    p.add_argument("--out", help="record file (stdout if omitted)")
    p.set_defaults(fn=cmd_gen)
    return ap


def main(argv: Optional[List[str]] = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "count", None) is not None and args.count < 0:
        ap.error("--count must be non-negative")
    try:
        return args.fn(args)
    except StreamFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (IngestError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
