"""Query issuance, completion tracking and performance summaries."""

from __future__ import annotations

import logging
import math
import threading
from fractions import Fraction
from dataclasses import dataclass, field
from typing import Any, Sequence

from .audit import LogRecord, RecordType
from .clock import RealClock
from .metrics import QUALITY_TARGETS, MetricResult, QualityTarget, evaluate_quality, score_task
from .rng import PerformanceSequence, accuracy_sequence, format_digest, sequence_digest
from .rules import (
    DEFAULT_TIMEOUT_MS,
    FULL_RULES_MIN_DURATION_MS,
    FULL_RULES_MIN_QUERY_COUNT,
    MAX_COOLDOWN_MS,
    BenchmarkId,
    Mode,
    Scenario,
    benchmark_key,
)

log = logging.getLogger(__name__)

NS_PER_MS = 1_000_000
P90 = 0.9


@dataclass
class TestSettings:
    scenario: Scenario = Scenario.SINGLE_STREAM
    mode: Mode = Mode.PERFORMANCE
    seed: int = 0
    min_query_count: int | None = None
    min_duration_ms: int = FULL_RULES_MIN_DURATION_MS
    performance_sample_count: int | None = None  # None: the whole data set
    cooldown_ms: int = 0
    timeout_ms: int = DEFAULT_TIMEOUT_MS

    __test__ = False  # not a pytest class

    def __post_init__(self):
        self.scenario = Scenario(self.scenario)
        self.mode = Mode(self.mode)
        if self.min_query_count is None:
            self.min_query_count = FULL_RULES_MIN_QUERY_COUNT[self.scenario]
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.min_query_count < 1:
            raise ValueError("min_query_count must be >= 1")
        if self.min_duration_ms < 0:
            raise ValueError("min_duration_ms must be >= 0")
        if self.performance_sample_count is not None and self.performance_sample_count < 1:
            raise ValueError("performance_sample_count must be >= 1")
        if not 0 <= self.cooldown_ms <= MAX_COOLDOWN_MS:
            raise ValueError(f"cooldown_ms must lie in [0, {MAX_COOLDOWN_MS}]")
        if self.timeout_ms <= 0:
            raise ValueError("timeout_ms must be positive")

    def subset_size(self, dataset_size: int) -> int:
        return self.performance_sample_count or dataset_size

    def with_mode(self, mode: Mode) -> "TestSettings":
        return TestSettings(**{**self.__dict__, "mode": Mode(mode)})


@dataclass(frozen=True)
class QuerySample:
    sample_index: int
    query_id: int
    issue_ts: int


@dataclass(frozen=True)
class CompletionRecord:
    query_id: int
    complete_ts: int
    latency_ns: int


@dataclass
class RunResult:
    benchmark_id: BenchmarkId
    scenario: Scenario
    mode: Mode
    seed: int
    issued_count: int = 0
    completed_count: int = 0
    latency_p90: int | None = None
    throughput_sps: float | None = None
    wall_time_ns: int = 0
    sample_sequence_digest: str = ""
    valid: bool = True
    error: str | None = None
    queries: list[QuerySample] = field(default_factory=list)
    completions: dict[int, CompletionRecord] = field(default_factory=dict)
    predictions: dict[int, Any] = field(default_factory=dict)
    metric: MetricResult | None = None

    @property
    def key(self) -> str:
        return benchmark_key(self.benchmark_id, self.scenario)

    @property
    def latencies_ns(self) -> list[int]:
        return [self.completions[q.query_id].latency_ns for q in self.queries if q.query_id in self.completions]


class RunAborted(RuntimeError):
    pass


def percentile(latencies: Sequence[int], p: float) -> int:
    """Nearest-rank percentile: the ceil(p * n)-th smallest value (1-based)."""
    if not latencies:
        raise ValueError("percentile of an empty sample")
    if not 0.0 < p <= 1.0:
        raise ValueError(f"p must lie in (0, 1], got {p}")
    ordered = sorted(latencies)
    # exact decimal arithmetic: 0.9 * 100 is 90.00000000000001 in binary floats
    rank = max(1, math.ceil(Fraction(str(p)) * len(ordered)))
    return ordered[rank - 1]


def throughput(completed: int, wall_time_ns: int) -> float:
    if wall_time_ns <= 0:
        return math.inf if completed else 0.0
    return completed * 1e9 / wall_time_ns


class _Tracker:
    """Completion bookkeeping shared with backend threads."""

    def __init__(self, clock):
        self.clock = clock
        self.cond = threading.Condition()
        self.complete_ts: dict[int, int] = {}
        self.predictions: dict[int, Any] = {}
        self.errors: dict[int, str] = {}
        self.duplicates: list[int] = []
        self.issued: set[int] = set()

    def __call__(self, query_id, prediction=None, error=None):
        ts = self.clock.now_ns()
        with self.cond:
            if query_id in self.complete_ts or query_id not in self.issued:
                self.duplicates.append(query_id)
            else:
                self.complete_ts[query_id] = ts
                if error is not None:
                    self.errors[query_id] = str(error)
                else:
                    self.predictions[query_id] = prediction
            self.cond.notify_all()

    def wait_for(self, predicate, timeout_s: float) -> bool:
        with self.cond:
            return self.cond.wait_for(predicate, timeout=timeout_s)


class _Run:
    def __init__(self, backend, dataset, settings: TestSettings, clock, sink, target, scenario):
        if settings.scenario is not scenario:
            raise ValueError(f"settings are for {settings.scenario.value}, not {scenario.value}")
        if not backend.loaded:
            raise RuntimeError("backend must be loaded before a run")
        self.backend = backend
        self.dataset = dataset
        self.settings = settings
        self.clock = clock or RealClock()
        self.sink = sink
        self.target = target
        self.tracker = _Tracker(self.clock)
        self.timeout_ns = settings.timeout_ms * NS_PER_MS
        self.result = RunResult(dataset.benchmark_id, scenario, settings.mode, settings.seed)
        n = len(dataset)
        if settings.mode is Mode.ACCURACY:
            self.sequence = accuracy_sequence(settings.seed, n)
        else:
            self.sequence = PerformanceSequence(settings.seed, n, settings.subset_size(n))
        backend.register_completion_sink(self.tracker)
        self.start_ts = self.clock.now_ns()

    def issue(self, query_id: int, sample) -> QuerySample:
        idx = self.sequence[query_id]
        with self.tracker.cond:
            self.tracker.issued.add(query_id)
        q = QuerySample(idx, query_id, self.clock.now_ns())
        self.result.queries.append(q)
        self.backend.issue(q, sample)
        return q

    def check_completion(self, query_ids) -> None:
        t = self.tracker
        for qid in query_ids:
            if qid in t.errors:
                raise RunAborted(f"backend error on query {qid}: {t.errors[qid]}")
            if qid not in t.complete_ts:
                raise RunAborted(f"query {qid} timed out after {self.settings.timeout_ms} ms")
            if t.complete_ts[qid] - self.result.queries[qid].issue_ts > self.timeout_ns:
                raise RunAborted(f"query {qid} exceeded the {self.settings.timeout_ms} ms timeout")
        if t.duplicates:
            raise RunAborted(f"unexpected completions for query ids {sorted(set(t.duplicates))}")

    def finish(self, error: str | None) -> RunResult:
        r = self.result
        t = self.tracker
        with t.cond:
            complete_ts = dict(t.complete_ts)
            predictions = dict(t.predictions)
        for q in r.queries:
            if q.query_id in complete_ts:
                ts = complete_ts[q.query_id]
                r.completions[q.query_id] = CompletionRecord(q.query_id, ts, ts - q.issue_ts)
        r.issued_count = len(r.queries)
        r.completed_count = len(r.completions)
        r.sample_sequence_digest = format_digest(sequence_digest(q.sample_index for q in r.queries))
        if error is None and r.completed_count != r.issued_count:
            error = f"{r.issued_count - r.completed_count} queries never completed"
        r.valid = error is None
        r.error = error
        if r.queries and r.completions:
            r.wall_time_ns = max(c.complete_ts for c in r.completions.values()) - r.queries[0].issue_ts
        if r.valid and r.mode is Mode.PERFORMANCE:
            if r.scenario is Scenario.SINGLE_STREAM:
                r.latency_p90 = percentile(r.latencies_ns, P90)
            else:
                r.throughput_sps = throughput(r.completed_count, r.wall_time_ns)
        if r.mode is Mode.ACCURACY:
            r.predictions = {r.queries[qid].sample_index: p for qid, p in predictions.items()}
            if r.valid:
                try:
                    self._score()
                except ValueError as exc:
                    r.valid = False
                    r.error = f"accuracy evaluation failed: {exc}"
        if self.sink is not None:
            self.emit()
        return r

    def _score(self):
        r = self.result
        ds = self.dataset
        order = sorted(r.predictions)
        fraction = score_task(
            ds.benchmark_id,
            [r.predictions[i].payload for i in order],
            [ds.ground_truth(i) for i in order],
        )
        r.metric = evaluate_quality(100.0 * fraction, self.target or QUALITY_TARGETS[ds.benchmark_id])

    def _record(self, record_type, ts, payload):
        r = self.result
        return LogRecord(
            record_type=record_type,
            benchmark_id=r.benchmark_id.value,
            scenario=r.scenario.value,
            mode=r.mode.value,
            seed=r.seed,
            ts_ns=ts,
            payload=payload,
        )

    def emit(self):
        r = self.result
        s = self.settings
        n = len(self.dataset)
        records = [
            self._record(
                RecordType.RUN_HEADER,
                self.start_ts,
                {
                    "dataset_size": n,
                    "performance_sample_count": s.subset_size(n),
                    "min_query_count": s.min_query_count,
                    "min_duration_ms": s.min_duration_ms,
                    "cooldown_ms": s.cooldown_ms,
                    "timeout_ms": s.timeout_ms,
                },
            )
        ]
        events = []
        for q in r.queries:
            events.append((q.issue_ts, 0, q.query_id, RecordType.ISSUE,
                           {"query_id": q.query_id, "sample_index": q.sample_index}))
            c = r.completions.get(q.query_id)
            if c is None:
                continue
            payload = {"query_id": c.query_id, "latency_ns": c.latency_ns}
            err = self.tracker.errors.get(q.query_id)
            if err is not None:
                payload["error"] = err
            elif r.mode is Mode.ACCURACY:
                pred = r.predictions.get(q.sample_index)
                if pred is not None:
                    payload["prediction"] = pred.to_json()
            events.append((c.complete_ts, 1, q.query_id, RecordType.COMPLETION, payload))
        events.sort(key=lambda e: e[:3])
        records.extend(self._record(kind, ts, payload) for ts, _, _, kind, payload in events)

        end_ts = max([self.start_ts] + [e[0] for e in events])
        counts = {
            "issued_count": r.issued_count,
            "completed_count": r.completed_count,
            "wall_time_ns": r.wall_time_ns,
            "sample_sequence_digest": r.sample_sequence_digest,
        }
        if r.valid and r.mode is Mode.PERFORMANCE:
            perf = dict(counts)
            if r.latency_p90 is not None:
                perf["latency_p90_ns"] = r.latency_p90
            else:
                perf["throughput_sps"] = r.throughput_sps
            records.append(self._record(RecordType.PERFORMANCE_SUMMARY, end_ts, perf))
        if r.valid and r.mode is Mode.ACCURACY:
            acc = dict(counts)
            acc.update(
                metric=r.metric.metric,
                value=r.metric.value,
                threshold=r.metric.threshold_used,
                passed=r.metric.passed,
                scale=r.metric.scale,
            )
            records.append(self._record(RecordType.ACCURACY_SUMMARY, end_ts, acc))
        records.append(self._record(RecordType.RUN_FOOTER, end_ts, {"valid": r.valid, "reason": r.error}))
        for rec in records:
            self.sink.write(rec)


def run_single_stream(backend, dataset, settings: TestSettings, *, clock=None, sink=None,
                      target: QualityTarget | None = None) -> RunResult:
    """Issue one query at a time, each only after the previous one completed.

    Performance mode stops once at least ``min_query_count`` queries have run
    and ``min_duration_ms`` has elapsed since the first issue. Accuracy mode
    issues every sample of the data set exactly once.
    """
    run = _Run(backend, dataset, settings, clock, sink, target, Scenario.SINGLE_STREAM)
    accuracy = settings.mode is Mode.ACCURACY
    if not accuracy:
        dataset.load_samples(run.sequence.subset)
    min_duration_ns = settings.min_duration_ms * NS_PER_MS
    t = run.tracker
    error = None
    try:
        i = 0
        while True:
            if accuracy:
                if i == len(dataset):
                    break
            elif i >= settings.min_query_count and (
                t.complete_ts[i - 1] - run.result.queries[0].issue_ts >= min_duration_ns
            ):
                break
            sample = dataset.get(run.sequence[i])
            run.issue(i, sample)
            backend.flush()
            t.wait_for(lambda qid=i: qid in t.complete_ts, settings.timeout_ms / 1000)
            run.check_completion([i])
            i += 1
    except RunAborted as exc:
        error = str(exc)
        log.warning("single-stream run aborted: %s", error)
    except KeyboardInterrupt:
        run.finish("interrupted")
        raise
    return run.finish(error)


def run_offline(backend, dataset, settings: TestSettings, *, clock=None, sink=None,
                target: QualityTarget | None = None) -> RunResult:
    """Issue every query in one burst, then wait for all completions."""
    run = _Run(backend, dataset, settings, clock, sink, target, Scenario.OFFLINE)
    if settings.mode is Mode.ACCURACY:
        count = len(dataset)
        indices = list(run.sequence)
    else:
        count = settings.min_query_count
        indices = run.sequence.take(count)
    dataset.load_samples(set(indices))
    t = run.tracker
    error = None
    try:
        for i in range(count):
            run.issue(i, dataset.get(indices[i]))
        backend.flush()
        t.wait_for(lambda: len(t.complete_ts) >= count, settings.timeout_ms / 1000)
        run.check_completion(range(count))
    except RunAborted as exc:
        error = str(exc)
        log.warning("offline run aborted: %s", error)
    except KeyboardInterrupt:
        run.finish("interrupted")
        raise
    finally:
        if settings.mode is Mode.ACCURACY:
            dataset.unload_samples()
    return run.finish(error)


def run_scenario(backend, dataset, settings: TestSettings, **kwargs) -> RunResult:
    if settings.scenario is Scenario.SINGLE_STREAM:
        return run_single_stream(backend, dataset, settings, **kwargs)
    return run_offline(backend, dataset, settings, **kwargs)


@dataclass
class Benchmark:
    """One entry of a suite: what to run, on what, under which settings."""

    backend: Any
    dataset: Any
    settings: TestSettings
    target: QualityTarget | None = None
    name: str = ""

    @property
    def benchmark_id(self) -> BenchmarkId:
        return self.dataset.benchmark_id

    @property
    def key(self) -> str:
        return benchmark_key(self.benchmark_id, self.settings.scenario)


@dataclass
class BenchmarkOutcome:
    key: str
    accuracy: RunResult | None = None
    performance: RunResult | None = None
    error: str | None = None

    @property
    def runs_ok(self) -> bool:
        runs = [r for r in (self.accuracy, self.performance) if r is not None]
        return self.error is None and bool(runs) and all(r.valid for r in runs)

    @property
    def gate_passed(self) -> bool:
        return self.accuracy is None or (self.accuracy.metric is not None and self.accuracy.metric.passed)


def run_suite(
    benchmarks: Sequence[Benchmark],
    *,
    clock=None,
    sink_factory=None,
    modes: Sequence[Mode] = (Mode.ACCURACY, Mode.PERFORMANCE),
    max_cooldown_ms: int | None = None,
) -> list[BenchmarkOutcome]:
    """Run benchmarks in the given order, accuracy before performance for each.

    ``sink_factory(benchmark)`` returns the log sink for one benchmark, or
    None for no logging. Each benchmark after the first starts with its
    ``cooldown_ms`` pause (capped by ``max_cooldown_ms``). A failing
    benchmark is recorded and the suite moves on.
    """
    from .backends import ModelDescriptor

    clock = clock or RealClock()
    outcomes = []
    for n, bench in enumerate(benchmarks):
        if n:
            pause = bench.settings.cooldown_ms
            if max_cooldown_ms is not None:
                pause = min(pause, max_cooldown_ms)
            clock.sleep_ns(pause * NS_PER_MS)
        outcome = BenchmarkOutcome(bench.key)
        outcomes.append(outcome)
        sink = sink_factory(bench) if sink_factory else None
        try:
            if not bench.backend.loaded:
                bench.backend.load(ModelDescriptor(bench.benchmark_id))
            for mode in modes:
                settings = bench.settings.with_mode(mode)
                result = run_scenario(bench.backend, bench.dataset, settings,
                                      clock=clock, sink=sink, target=bench.target)
                if mode is Mode.ACCURACY:
                    outcome.accuracy = result
                else:
                    outcome.performance = result
                if not result.valid:
                    break
        except KeyboardInterrupt:
            raise
        except Exception as exc:  # noqa: BLE001 - recorded, suite continues
            log.exception("benchmark %s failed", bench.key)
            outcome.error = f"{type(exc).__name__}: {exc}"
        finally:
            bench.dataset.unload_samples()
            if sink is not None and hasattr(sink, "close"):
                sink.close()
    return outcomes
