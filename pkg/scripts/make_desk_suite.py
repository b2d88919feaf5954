"""Write synthetic data sets for the five benchmarks plus a suite config."""

import argparse

from loadbench.desk import make_desk_suite


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("out_dir")
    ap.add_argument("--samples", type=int, default=16)
    ap.add_argument("--clock", choices=["virtual", "real"], default="virtual")
    ap.add_argument("--latency-ms", type=float, default=2.0)
    ap.add_argument("--parallelism", type=int, default=4, help="offline backend workers")
    ap.add_argument("--min-query-count", type=int, default=32)
    ap.add_argument("--min-duration-ms", type=int, default=50)
    ap.add_argument("--correct-fraction", type=float, default=1.0)
    ap.add_argument("--seed", type=int, default=42)
    ap.add_argument("--full-rules", action="store_true",
                    help="mark the config full-rules (pair with --latency-ms 60 and the virtual clock)")
    args = ap.parse_args()
    path = make_desk_suite(
        args.out_dir,
        args.samples,
        clock=args.clock,
        latency_ms=args.latency_ms,
        offline_parallelism=args.parallelism,
        min_query_count=args.min_query_count,
        min_duration_ms=args.min_duration_ms,
        seed=args.seed,
        correct_fraction=args.correct_fraction,
        full_rules=args.full_rules,
    )
    print(path)


if __name__ == "__main__":
    main()
