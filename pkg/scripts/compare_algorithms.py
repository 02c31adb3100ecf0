"""Run KOP, SOP and DKM on the same seeded skewed workload and tabulate mean per-timestamp metrics.

The algorithms are stepped side by side, one timestamp at a time, so host
noise is shared between them.

    python scripts/compare_algorithms.py --seeds 0-9 --out results/compare.tsv
"""

import argparse
import csv
import sys
import time

from skmonitor.runtime import ExperimentConfig, run_interleaved, summarize
from skmonitor.synth import generate_workload

COLUMNS = ("seed", "algorithm", "mean_update_time", "mean_load_balance", "mean_insert_time",
           "mean_delete_time", "mean_combined_time", "wall_s")  # wall_s covers the whole seed


def seed_list(text):
    out = []
    for part in text.split(","):
        if "-" in part:
            a, b = part.split("-")
            out.extend(range(int(a), int(b) + 1))
        else:
            out.append(int(part))
    return out


def compare_seed(seed, algorithms=("kop", "sop", "dkm"), **overrides):
    base = dict(m=4, warmup_size=100_000, initial_subs=20_000, ticks=10, objects_per_tick=1_000,
                inserts_per_tick=100, deletes_per_tick=100, k_max=10, seed=seed)
    base.update(overrides)
    workload = generate_workload(ExperimentConfig(**base))
    t0 = time.perf_counter()
    runs = run_interleaved([ExperimentConfig(algorithm=a, **base) for a in algorithms], workload)
    wall = time.perf_counter() - t0
    rows = {}
    for algo, (metrics, _) in zip(algorithms, runs):
        rows[algo] = summarize(metrics)
        rows[algo]["wall_s"] = wall
    return rows


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", default="0-9")
    ap.add_argument("--workers", type=int, default=4)
    ap.add_argument("--init-subs", type=int, default=20_000)
    ap.add_argument("--warmup", type=int, default=100_000)
    ap.add_argument("--out", default=None, help="TSV path (stdout if omitted)")
    args = ap.parse_args(argv)

    lb_wins = time_wins = 0
    seeds = seed_list(args.seeds)
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    writer = csv.writer(fh, delimiter="\t")
    writer.writerow(COLUMNS)
    for seed in seeds:
        rows = compare_seed(seed, m=args.workers, initial_subs=args.init_subs, warmup_size=args.warmup)
        for algo, row in rows.items():
            writer.writerow([seed, algo] + [f"{row[c]:.6f}" for c in COLUMNS[2:]])
        fh.flush()
        lb_wins += rows["dkm"]["mean_load_balance"] < rows["sop"]["mean_load_balance"]
        time_wins += rows["dkm"]["mean_combined_time"] <= rows["kop"]["mean_combined_time"]
    if fh is not sys.stdout:
        fh.close()
    print(f"dkm load balance below sop: {lb_wins}/{len(seeds)} seeds", file=sys.stderr)
    print(f"dkm combined time at most kop: {time_wins}/{len(seeds)} seeds", file=sys.stderr)


if __name__ == "__main__":
    main()
