"""How closely the real-clock harness reports a known backend latency.

Runs single-stream against a constant-latency synthetic backend for a range
of latencies and offline for a range of worker counts, and prints measured
vs. nominal values.
"""

import argparse
import tempfile

from loadbench.backends import LatencyModel, ModelDescriptor, SyntheticBackend, SyntheticBackendConfig
from loadbench.backends import script_from_ground_truth
from loadbench.clock import RealClock
from loadbench.datasets import Dataset, make_synthetic_dataset
from loadbench.loadgen import TestSettings, run_offline, run_single_stream
from loadbench.rules import Scenario

MS = 1_000_000


def backend(ds, latency_ms, parallelism=1):
    cfg = SyntheticBackendConfig(
        LatencyModel.constant(int(latency_ms * MS)),
        script_from_ground_truth(ds.manifest),
        parallelism=parallelism,
    )
    return SyntheticBackend(cfg, clock=RealClock()).load(ModelDescriptor(ds.benchmark_id))


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--latencies-ms", type=float, nargs="+", default=[0.5, 1, 2, 5, 10, 50])
    ap.add_argument("--workers", type=int, nargs="+", default=[1, 2, 4, 8])
    ap.add_argument("--offline-latency-ms", type=float, default=10.0)
    ap.add_argument("--seconds", type=float, default=1.0, help="rough time budget per point")
    args = ap.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        ds = Dataset.from_path(make_synthetic_dataset("QuestionAnswering", 16, tmp))
        clock = RealClock()
        print(f"{'latency ms':>10} {'p90 ms':>10} {'rel err':>8}")
        for c in args.latencies_ms:
            n = max(20, int(args.seconds * 1000 / c))
            be = backend(ds, c)
            s = TestSettings(scenario=Scenario.SINGLE_STREAM, min_query_count=n, min_duration_ms=0)
            r = run_single_stream(be, ds, s, clock=clock)
            be.unload()
            p90 = r.latency_p90 / MS
            print(f"{c:>10.3f} {p90:>10.3f} {(p90 - c) / c:>8.2%}")

        c = args.offline_latency_ms
        print(f"\n{'workers':>10} {'samples/s':>10} {'nominal':>8} {'rel err':>8}")
        for k in args.workers:
            nominal = k * 1000 / c
            n = max(k * 4, int(args.seconds * nominal))
            be = backend(ds, c, k)
            s = TestSettings(scenario=Scenario.OFFLINE, min_query_count=n, min_duration_ms=0)
            r = run_offline(be, ds, s, clock=clock)
            be.unload()
            print(f"{k:>10} {r.throughput_sps:>10.1f} {nominal:>8.0f} {(r.throughput_sps - nominal) / nominal:>8.2%}")


if __name__ == "__main__":
    main()
