"""End to end at desk scale: generate, run, audit, then verify a second run against the first.

    python3 scripts/run_desk_suite.py /tmp/desk [--clock real] [--full-rules]
"""

import argparse
import sys
from pathlib import Path

from loadbench.cli import main as cli
from loadbench.desk import make_desk_suite


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("out_dir", type=Path)
    ap.add_argument("--clock", choices=["virtual", "real"], default="virtual")
    ap.add_argument("--full-rules", action="store_true")
    args = ap.parse_args()

    if args.full_rules:
        # 60 ms per query keeps 1024 serial queries above the one-minute floor
        config = make_desk_suite(args.out_dir, 8, clock="virtual", latency_ms=60.0,
                                 offline_parallelism=32, full_rules=True)
    elif args.clock == "real":
        # scheduler jitter is ~0.1 ms; at 20 ms it stays well inside the 5% reproduction band
        config = make_desk_suite(args.out_dir, 16, clock="real", latency_ms=20.0)
    else:
        config = make_desk_suite(args.out_dir, 16)
    extra = ["--full-rules"] if args.full_rules else []
    steps = [
        ["run", "--config", str(config), "--out", str(args.out_dir / "run1"), *extra],
        ["check", "--logs", str(args.out_dir / "run1"), "--config", str(config), *extra],
        ["run", "--config", str(config), "--out", str(args.out_dir / "run2"), *extra],
        ["verify", "--reported", str(args.out_dir / "run1" / "report.json"),
         "--measured", str(args.out_dir / "run2" / "report.json")],
    ]
    for argv in steps:
        print(f"\n$ loadbench {' '.join(argv)}")
        code = cli(argv)
        if code:
            print(f"exit {code}")
            return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
