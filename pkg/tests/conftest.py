import pytest

from loadbench.backends import (
    LatencyModel,
    ModelDescriptor,
    SyntheticBackend,
    SyntheticBackendConfig,
    script_from_ground_truth,
)
from loadbench.clock import VirtualClock
from loadbench.datasets import Dataset, make_synthetic_dataset

MS = 1_000_000


@pytest.fixture(scope="session")
def datasets(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    out = {}
    for i, bid in enumerate(["ImageClassification", "ObjectDetection", "Segmentation", "QuestionAnswering"]):
        out[bid] = make_synthetic_dataset(bid, 12, root / bid, seed=i)
    return out


@pytest.fixture
def ic_dataset(datasets):
    return Dataset.from_path(datasets["ImageClassification"])


def synthetic(dataset, latency, *, clock=None, parallelism=1, correct_fraction=1.0, seed=0):
    if not isinstance(latency, LatencyModel):
        latency = LatencyModel.constant(latency)
    cfg = SyntheticBackendConfig(
        latency_model=latency,
        accuracy_script=script_from_ground_truth(dataset.manifest, correct_fraction),
        parallelism=parallelism,
        seed=seed,
    )
    be = SyntheticBackend(cfg, clock=clock if clock is not None else VirtualClock())
    return be.load(ModelDescriptor(dataset.benchmark_id))


def bench(datasets, bid, scenario, latency=MS, *, clock, parallelism=1, correct_fraction=1.0, **settings):
    from loadbench.loadgen import Benchmark, TestSettings
    from loadbench.rules import Scenario

    ds = Dataset.from_path(datasets[bid])
    be = synthetic(ds, latency, clock=clock, parallelism=parallelism, correct_fraction=correct_fraction)
    settings.setdefault("min_duration_ms", 0)
    return Benchmark(be, ds, TestSettings(scenario=Scenario(scenario), **settings))


def suite_logs(benches, clock, **kwargs):
    """Run benches in order; return (outcomes, per-benchmark record lists)."""
    from loadbench.audit import LogSink, parse_lines
    from loadbench.loadgen import run_suite

    sinks = []

    def factory(b):
        sinks.append(LogSink())
        return sinks[-1]

    outcomes = run_suite(benches, clock=clock, sink_factory=factory, **kwargs)
    return outcomes, [parse_lines(s.getvalue().splitlines()) for s in sinks]


def ground_truth_of(datasets):
    from loadbench.datasets import load_manifest

    out = {}
    for bid, path in datasets.items():
        out[bid] = [e.ground_truth for e in load_manifest(path).entries]
    return out


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE_LINES: list[str] = []


def pytest_sessionstart(session):
    import time

    session.config._loadbench_t0 = time.monotonic()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    import time

    if not ACCEPTANCE_LINES:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        tr.write_line(line)
    elapsed = time.monotonic() - config._loadbench_t0
    tr.write_line(f"session wall time {elapsed:.1f} s (desk-scale budget 120 s): "
                  f"{'PASS' if elapsed < 120 else 'FAIL'}")
