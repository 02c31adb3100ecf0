"""DKM update time against worker count and subscription count on the skewed workload.

    python scripts/scaling.py --seeds 0-4 --workers 1,2,4 --subs 10000,20000
"""

import argparse
import csv
import statistics
import sys

from compare_algorithms import compare_seed, seed_list


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", default="0-4")
    ap.add_argument("--workers", default="1,4")
    ap.add_argument("--subs", default="10000,20000")
    ap.add_argument("--out", default=None)
    args = ap.parse_args(argv)
    workers = [int(x) for x in args.workers.split(",")]
    subs = [int(x) for x in args.subs.split(",")]

    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    out = csv.writer(fh, delimiter="\t")
    out.writerow(["seed", "m", "subscriptions", "mean_update_time", "mean_combined_time"])
    table = {}
    for seed in seed_list(args.seeds):
        for m in workers:
            for n in subs:
                row = compare_seed(seed, ("dkm",), m=m, initial_subs=n)["dkm"]
                table[seed, m, n] = row["mean_update_time"]
                out.writerow([seed, m, n, f"{row['mean_update_time']:.6f}", f"{row['mean_combined_time']:.6f}"])
                fh.flush()
    if fh is not sys.stdout:
        fh.close()
    seeds = seed_list(args.seeds)
    for m in workers:
        if len(subs) > 1:
            ratios = [table[s, m, subs[-1]] / table[s, m, subs[0]] for s in seeds]
            print(f"m={m}: update time ratio {subs[-1]}/{subs[0]} median {statistics.median(ratios):.2f}",
                  file=sys.stderr)
    if len(workers) > 1:
        lo, hi = min(workers), max(workers)
        wins = sum(table[s, hi, subs[-1]] < table[s, lo, subs[-1]] for s in seeds)
        print(f"m={hi} faster than m={lo}: {wins}/{len(seeds)} seeds", file=sys.stderr)


if __name__ == "__main__":
    main()
