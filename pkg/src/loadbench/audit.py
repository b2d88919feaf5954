"""Run logs, the submission checker and reproduction checks.

Logs are UTF-8 newline-delimited JSON, one record per line::

    {"schema_version": 1, "record_type": "Completion", "benchmark_id": "...",
     "scenario": "...", "mode": "...", "seed": 42, "ts_ns": 123,
     "payload": {"query_id": 0, "latency_ns": 1000000}}

A run is a ``RunHeader`` ... ``RunFooter`` block; timestamps never decrease
inside a block.
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import IO, Any, Iterable, Mapping, Sequence

from .metrics import QUALITY_TARGETS, QualityTarget, UndefinedMetricError, score_task
from .rng import PerformanceSequence, accuracy_sequence, format_digest, sequence_digest
from .rules import (
    CANONICAL_ORDER,
    FULL_RULES_MIN_DURATION_MS,
    FULL_RULES_MIN_QUERY_COUNT,
    REPRODUCTION_TOLERANCE,
    BenchmarkId,
    Mode,
    Scenario,
    benchmark_key,
    canonical_rank,
)

SCHEMA_VERSION = 1
SUMMARY_RTOL = 1e-9
_CORE_FIELDS = ("schema_version", "record_type", "benchmark_id", "scenario", "mode", "seed", "ts_ns", "payload")


class RecordType(str, Enum):
    RUN_HEADER = "RunHeader"
    ISSUE = "Issue"
    COMPLETION = "Completion"
    ACCURACY_SUMMARY = "AccuracySummary"
    PERFORMANCE_SUMMARY = "PerformanceSummary"
    RUN_FOOTER = "RunFooter"


class LogError(ValueError):
    pass


class LogParseError(LogError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class SchemaVersionError(LogParseError):
    pass


class LogStructureError(LogParseError):
    pass


class LogLifecycleError(LogError):
    pass


class LogWriteError(OSError):
    pass


@dataclass
class LogRecord:
    record_type: RecordType
    benchmark_id: str
    scenario: str
    mode: str
    seed: int
    ts_ns: int
    payload: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION
    extra: dict = field(default_factory=dict)  # unknown top-level fields, kept verbatim

    def __post_init__(self):
        self.record_type = RecordType(self.record_type)

    def to_json(self) -> dict:
        d = {
            "schema_version": self.schema_version,
            "record_type": self.record_type.value,
            "benchmark_id": self.benchmark_id,
            "scenario": self.scenario,
            "mode": self.mode,
            "seed": self.seed,
            "ts_ns": self.ts_ns,
            "payload": self.payload,
        }
        d.update(self.extra)
        return d

    def to_line(self) -> str:
        return json.dumps(self.to_json(), separators=(",", ":"), ensure_ascii=False)

    @classmethod
    def from_json(cls, d: dict) -> "LogRecord":
        return cls(
            record_type=RecordType(d["record_type"]),
            benchmark_id=d["benchmark_id"],
            scenario=d["scenario"],
            mode=d["mode"],
            seed=d["seed"],
            ts_ns=d["ts_ns"],
            payload=d["payload"],
            schema_version=d["schema_version"],
            extra={k: v for k, v in d.items() if k not in _CORE_FIELDS},
        )

    @property
    def key(self) -> str:
        return benchmark_key(self.benchmark_id, self.scenario)


class LogSink:
    """Serializes appends and enforces the header ... footer lifecycle."""

    def __init__(self, stream: IO[str] | None = None):
        self._stream = stream
        self._lock = threading.Lock()
        self._open_run = False
        self._last_ts: int | None = None
        self.lines: list[str] = []

    def write(self, record: LogRecord) -> None:
        with self._lock:
            if record.record_type is RecordType.RUN_HEADER:
                if self._open_run:
                    raise LogLifecycleError("RunHeader inside an open run")
                self._open_run = True
                self._last_ts = record.ts_ns
            elif not self._open_run:
                raise LogLifecycleError(f"{record.record_type.value} written outside a run")
            elif record.ts_ns < self._last_ts:
                raise LogLifecycleError("timestamps must not decrease within a run")
            self._last_ts = record.ts_ns
            line = record.to_line()
            try:
                if self._stream is not None:
                    self._stream.write(line + "\n")
                    if record.record_type is RecordType.RUN_FOOTER:
                        self._stream.flush()
                else:
                    self.lines.append(line)
            except OSError as exc:
                raise LogWriteError(f"log write failed: {exc}") from exc
            if record.record_type is RecordType.RUN_FOOTER:
                self._open_run = False

    def getvalue(self) -> str:
        return "".join(line + "\n" for line in self.lines)

    def close(self) -> None:
        if self._stream is not None:
            self._stream.close()


class FileSink(LogSink):
    def __init__(self, path: str | Path):
        self.path = Path(path)
        super().__init__(open(self.path, "w", encoding="utf-8"))

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_log(sink: LogSink, record: LogRecord) -> None:
    sink.write(record)


def parse_lines(lines: Iterable[str]) -> list[LogRecord]:
    records = []
    open_run = False
    last_ts = None
    lineno = 0
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            d = json.loads(line)
        except json.JSONDecodeError as exc:
            raise LogParseError(lineno, f"malformed JSON: {exc.msg}") from None
        if not isinstance(d, dict):
            raise LogParseError(lineno, "record is not a JSON object")
        missing = [f for f in _CORE_FIELDS if f not in d]
        if missing:
            raise LogParseError(lineno, f"missing fields {missing}")
        if d["schema_version"] != SCHEMA_VERSION:
            raise SchemaVersionError(
                lineno, f"schema_version {d['schema_version']} (expected {SCHEMA_VERSION})"
            )
        try:
            rec = LogRecord.from_json(d)
        except ValueError as exc:
            raise LogParseError(lineno, str(exc)) from None
        if not isinstance(rec.ts_ns, int) or not isinstance(rec.payload, dict):
            raise LogParseError(lineno, "ts_ns must be an integer and payload an object")
        if rec.record_type is RecordType.RUN_HEADER:
            if open_run:
                raise LogStructureError(lineno, "RunHeader before the previous run's RunFooter")
            open_run = True
        elif not open_run:
            raise LogStructureError(lineno, f"{rec.record_type.value} outside a RunHeader/RunFooter block")
        elif rec.ts_ns < last_ts:
            raise LogStructureError(lineno, "timestamp decreases within a run")
        last_ts = rec.ts_ns
        if rec.record_type is RecordType.RUN_FOOTER:
            open_run = False
        records.append(rec)
    if open_run:
        raise LogStructureError(lineno, "log ends inside a run (no RunFooter)")
    return records


def parse_log(path: str | Path) -> list[LogRecord]:
    with open(path, encoding="utf-8") as fh:
        return parse_lines(fh)


def dump_log(records: Iterable[LogRecord]) -> str:
    return "".join(r.to_line() + "\n" for r in records)


# ---------------------------------------------------------------- checker


@dataclass
class Verdict:
    benchmark: str
    rule_id: str
    passed: bool
    detail: str = ""
    severity: str = "error"  # "warning" verdicts never fail the report


@dataclass
class AuditReport:
    verdicts: list[Verdict] = field(default_factory=list)

    @property
    def overall(self) -> bool:
        return all(v.passed for v in self.verdicts if v.severity == "error")

    def failures(self) -> list[Verdict]:
        return [v for v in self.verdicts if not v.passed and v.severity == "error"]

    def add(self, benchmark, rule_id, passed, detail="", severity="error"):
        self.verdicts.append(Verdict(benchmark, rule_id, bool(passed), detail, severity))

    def to_json(self) -> dict:
        return {
            "overall": self.overall,
            "verdicts": [v.__dict__ for v in self.verdicts],
        }

    def to_table(self) -> str:
        width = max([len(v.benchmark) for v in self.verdicts] + [9])
        lines = [f"{'benchmark':<{width}}  {'rule':<22} {'result':<6}  detail"]
        for v in self.verdicts:
            status = "PASS" if v.passed else ("WARN" if v.severity == "warning" else "FAIL")
            lines.append(f"{v.benchmark:<{width}}  {v.rule_id:<22} {status:<6}  {v.detail}")
        lines.append(f"overall: {'PASS' if self.overall else 'FAIL'}")
        return "\n".join(lines)


@dataclass
class Run:
    header: LogRecord
    issues: list[LogRecord] = field(default_factory=list)
    completions: list[LogRecord] = field(default_factory=list)
    performance: LogRecord | None = None
    accuracy: LogRecord | None = None
    footer: LogRecord | None = None

    @property
    def key(self) -> str:
        return self.header.key

    @property
    def mode(self) -> str:
        return self.header.mode


def group_runs(records: Sequence[LogRecord]) -> list[Run]:
    runs: list[Run] = []
    current = None
    for rec in records:
        t = rec.record_type
        if t is RecordType.RUN_HEADER:
            current = Run(rec)
            runs.append(current)
        elif current is None:
            raise LogError(f"{t.value} outside a run")
        elif t is RecordType.ISSUE:
            current.issues.append(rec)
        elif t is RecordType.COMPLETION:
            current.completions.append(rec)
        elif t is RecordType.PERFORMANCE_SUMMARY:
            current.performance = rec
        elif t is RecordType.ACCURACY_SUMMARY:
            current.accuracy = rec
        else:
            current.footer = rec
            current = None
    return runs


def _close(a, b, rtol=SUMMARY_RTOL) -> bool:
    if isinstance(a, (bool, str)) or isinstance(b, (bool, str)):
        return a == b and type(a) is type(b)
    if isinstance(a, int) and isinstance(b, int):
        return a == b
    try:
        a, b = float(a), float(b)
    except (TypeError, ValueError):
        return False
    if not (math.isfinite(a) and math.isfinite(b)):
        return a == b
    return abs(a - b) <= rtol * max(abs(a), abs(b))


def _nearest_rank_p90(values: list[int]) -> int:
    ordered = sorted(values)
    return ordered[max(1, -(-9 * len(ordered) // 10)) - 1]


class _RunFacts:
    """Quantities re-derived from the raw Issue/Completion records of one run."""

    def __init__(self, run: Run):
        self.problems: list[str] = []
        self.issue_ts: dict[int, int] = {}
        self.sample_index: dict[int, int] = {}
        self.order: list[int] = []
        for rec in run.issues:
            qid = rec.payload.get("query_id")
            if qid in self.issue_ts:
                self.problems.append(f"query {qid} issued twice")
                continue
            self.issue_ts[qid] = rec.ts_ns
            self.sample_index[qid] = rec.payload.get("sample_index")
            self.order.append(qid)
        self.complete_ts: dict[int, int] = {}
        self.logged_latency: dict[int, Any] = {}
        self.predictions: dict[int, dict] = {}
        self.errors: dict[int, str] = {}
        for rec in run.completions:
            qid = rec.payload.get("query_id")
            if qid in self.complete_ts:
                self.problems.append(f"query {qid} completed twice")
                continue
            if qid not in self.issue_ts:
                self.problems.append(f"completion for unissued query {qid}")
                continue
            self.complete_ts[qid] = rec.ts_ns
            self.logged_latency[qid] = rec.payload.get("latency_ns")
            if "error" in rec.payload:
                self.errors[qid] = rec.payload["error"]
            if "prediction" in rec.payload:
                self.predictions[qid] = rec.payload["prediction"]
        missing = [q for q in self.order if q not in self.complete_ts]
        if missing:
            self.problems.append(f"{len(missing)} issued queries never completed")
        self.latencies = {q: self.complete_ts[q] - self.issue_ts[q] for q in self.complete_ts}
        self.sequence = [self.sample_index[q] for q in self.order]
        self.end_ts = max([run.header.ts_ns] + [r.ts_ns for r in run.issues + run.completions])
        h = run.header
        self.stray = [
            r for r in run.issues + run.completions + [run.performance, run.accuracy, run.footer]
            if r is not None and (r.benchmark_id, r.scenario, r.mode, r.seed, r.schema_version)
            != (h.benchmark_id, h.scenario, h.mode, h.seed, h.schema_version)
        ]
        self.wall_time_ns = (
            max(self.complete_ts.values()) - self.issue_ts[self.order[0]]
            if self.complete_ts and self.order
            else 0
        )


def _expected_sequence(run: Run, count: int) -> list[int] | None:
    h = run.header.payload
    n = h.get("dataset_size")
    seed = run.header.seed
    if not isinstance(n, int) or n < 1 or not isinstance(seed, int) or not 0 <= seed < 2**64:
        return None
    if run.mode == Mode.ACCURACY.value:
        return accuracy_sequence(seed, n)
    subset = h.get("performance_sample_count")
    if not isinstance(subset, int) or subset < 1:
        return None
    return PerformanceSequence(seed, n, subset).take(count)


def _settings_for(settings, key: str):
    if settings is None:
        return None
    if isinstance(settings, Mapping):
        return settings.get(key)
    return settings


def _target_for(targets, benchmark_id: str) -> QualityTarget | None:
    if targets is None:
        targets = QUALITY_TARGETS.values()
    if isinstance(targets, Mapping):
        targets = targets.values()
    for t in targets:
        if BenchmarkId(t.benchmark_id).value == benchmark_id:
            return t
    return None


def _required_minimums(settings, scenario: str, full_rules: bool) -> tuple[int, int]:
    min_count = settings.min_query_count if settings is not None else 1
    min_ms = settings.min_duration_ms if settings is not None else 0
    if full_rules:
        min_count = max(min_count, FULL_RULES_MIN_QUERY_COUNT[Scenario(scenario)])
        min_ms = max(min_ms, FULL_RULES_MIN_DURATION_MS)
    return min_count, min_ms


def _check_summary(facts: _RunFacts, summary: LogRecord, extra_expected: dict) -> list[str]:
    p = summary.payload
    expected = {
        "issued_count": len(facts.order),
        "completed_count": len(facts.complete_ts),
        "wall_time_ns": facts.wall_time_ns,
        **extra_expected,
    }
    bad = [f"{k}: logged {p.get(k)!r}, recomputed {v!r}" for k, v in expected.items() if not _close(p.get(k), v)]
    if summary.ts_ns != facts.end_ts:
        bad.append(f"summary ts_ns {summary.ts_ns} != last event {facts.end_ts}")
    return bad


def check_submission(
    records: Sequence[LogRecord],
    settings=None,
    targets=None,
    *,
    full_rules: bool = False,
    ground_truth: Mapping[str, Sequence] | None = None,
) -> AuditReport:
    """Audit a suite's logs against the run rules.

    ``settings`` is one ``TestSettings`` for every benchmark or a mapping from
    benchmark key (``"ImageClassification/SingleStream"``) to settings.
    ``targets`` defaults to the published quality targets. ``ground_truth``
    maps benchmark ids to per-sample ground truth; when present, accuracy
    values are recomputed from the logged predictions.
    """
    report = AuditReport()
    try:
        runs = group_runs(records)
    except LogError as exc:
        report.add("*", "structure", False, str(exc))
        return report
    if not runs:
        report.add("*", "structure", False, "no runs in log")
        return report

    by_key: dict[str, list[Run]] = {}
    for run in runs:
        by_key.setdefault(run.key, []).append(run)

    _check_order(report, runs, by_key, full_rules)

    for key, key_runs in by_key.items():
        bid = key_runs[0].header.benchmark_id
        scenario = key_runs[0].header.scenario
        s = _settings_for(settings, key)
        min_count, min_ms = _required_minimums(s, scenario, full_rules)
        acc_runs = [r for r in key_runs if r.mode == Mode.ACCURACY.value]
        perf_runs = [r for r in key_runs if r.mode == Mode.PERFORMANCE.value]

        for run in key_runs:
            footer = run.footer.payload if run.footer else {}
            report.add(key, f"run_valid[{run.mode}]", footer.get("valid") is True,
                       footer.get("reason") or "")
            if s is not None:
                report.add(key, f"seed[{run.mode}]", run.header.seed == s.seed,
                           f"logged {run.header.seed}, configured {s.seed}")

        # (a), (b)
        if not perf_runs:
            report.add(key, "a_min_query_count", False, "no performance run")
            report.add(key, "b_min_duration", False, "no performance run")
        for run in perf_runs:
            facts = _RunFacts(run)
            n = len(facts.order)
            report.add(key, "a_min_query_count", n >= min_count, f"{n} issued, need >= {min_count}")
            ms = facts.wall_time_ns / 1e6
            # offline is bounded by its sample count; a short offline run is only flagged
            severity = "error" if scenario == Scenario.SINGLE_STREAM.value else "warning"
            report.add(key, "b_min_duration", facts.wall_time_ns >= min_ms * 1_000_000,
                       f"{ms:.3f} ms, need >= {min_ms} ms", severity=severity)

        # (c), (d)
        if not acc_runs:
            report.add(key, "c_accuracy_coverage", False, "no accuracy run")
            report.add(key, "d_quality_target", False, "no accuracy run")
        for run in acc_runs:
            facts = _RunFacts(run)
            n = run.header.payload.get("dataset_size")
            gt = ground_truth.get(bid) if ground_truth else None
            if gt is not None and n != len(gt):
                report.add(key, "c_accuracy_coverage", False, f"header says {n} samples, data set has {len(gt)}")
            else:
                covered = sorted(facts.sequence) == list(range(n if isinstance(n, int) else -1))
                report.add(key, "c_accuracy_coverage", covered,
                           f"{len(set(facts.sequence))} distinct of {n} samples")
            target = _target_for(targets, bid)
            value = run.accuracy.payload.get("value") if run.accuracy else None
            if target is None:
                report.add(key, "d_quality_target", False, f"no quality target for {bid}")
            elif not isinstance(value, (int, float)) or isinstance(value, bool):
                report.add(key, "d_quality_target", False, "no accuracy value logged")
            else:
                report.add(key, "d_quality_target", value >= target.threshold,
                           f"{value:.4f} vs threshold {target.threshold}")

        for run in key_runs:
            facts = _RunFacts(run)
            tag = f"[{run.mode}]"
            # (e)
            expected = _expected_sequence(run, len(facts.order))
            digest = format_digest(sequence_digest(expected)) if expected is not None else None
            summary = run.performance if run.mode == Mode.PERFORMANCE.value else run.accuracy
            logged_digest = summary.payload.get("sample_sequence_digest") if summary else None
            ok = expected is not None and facts.sequence == expected and (
                summary is None or logged_digest == digest
            )
            report.add(key, "e_sample_sequence" + tag, ok,
                       f"digest {logged_digest} vs regenerated {digest}")
            # (g)
            issued = set(facts.order)
            report.add(key, "g_exactly_once" + tag,
                       not facts.problems and set(facts.complete_ts) == issued,
                       "; ".join(facts.problems) or f"{len(issued)} issued, {len(facts.complete_ts)} completed")
            # (h)
            bad = [f"query {q}: latency_ns {facts.logged_latency[q]!r} != {lat}"
                   for q, lat in facts.latencies.items() if not _close(facts.logged_latency[q], lat)]
            if scenario == Scenario.SINGLE_STREAM.value:
                for prev, nxt in zip(facts.order, facts.order[1:]):
                    if prev in facts.complete_ts and facts.issue_ts[nxt] < facts.complete_ts[prev]:
                        bad.append(f"query {nxt} issued before query {prev} completed")
                        break
            if facts.stray:
                bad.append(f"{len(facts.stray)} records disagree with the run header (id, scenario, mode, seed, version)")
            valid = run.footer is not None and run.footer.payload.get("valid") is True
            if summary is None:
                if valid:
                    bad.append("summary record missing")
            else:
                extra = {"sample_sequence_digest": format_digest(sequence_digest(facts.sequence))}
                if run.mode == Mode.PERFORMANCE.value:
                    lat = list(facts.latencies.values())
                    if "latency_p90_ns" in summary.payload or scenario == Scenario.SINGLE_STREAM.value:
                        extra["latency_p90_ns"] = _nearest_rank_p90(lat) if lat else None
                    else:
                        w = facts.wall_time_ns
                        extra["throughput_sps"] = len(facts.complete_ts) * 1e9 / w if w > 0 else None
                else:
                    recomputed = _recompute_accuracy(bid, facts, ground_truth)
                    if recomputed is not None:
                        extra["value"] = recomputed
                    if target := _target_for(targets, bid):
                        value = summary.payload.get("value")
                        if isinstance(value, (int, float)):
                            extra["passed"] = value >= target.threshold
                        extra["threshold"] = target.threshold
                bad += _check_summary(facts, summary, extra)
            report.add(key, "h_summary_recompute" + tag, not bad, "; ".join(bad[:3]))

    _check_cooldown(report, runs)
    return report


def _recompute_accuracy(bid: str, facts: _RunFacts, ground_truth) -> float | None:
    if not ground_truth or bid not in ground_truth:
        return None
    from .backends import Prediction

    gts = ground_truth[bid]
    try:
        pairs = sorted((facts.sample_index[q], Prediction.from_json(bid, p)) for q, p in facts.predictions.items())
        if not pairs:
            return float("nan")
        return 100.0 * score_task(bid, [p.payload for _, p in pairs], [gts[i] for i, _ in pairs])
    except (KeyError, TypeError, ValueError, IndexError, UndefinedMetricError):
        return float("nan")


def _check_order(report: AuditReport, runs: list[Run], by_key: dict, full_rules: bool) -> None:
    seen: list[str] = []
    for run in runs:
        if not seen or seen[-1] != run.key:
            seen.append(run.key)
    problems = []
    if len(seen) != len(set(seen)):
        problems.append("a benchmark's runs are interleaved with another benchmark")
    ranks = []
    for key in dict.fromkeys(seen):
        hdr = by_key[key][0].header
        try:
            rank = canonical_rank(hdr.benchmark_id, hdr.scenario)
        except ValueError:
            rank = None
        if rank is None:
            if full_rules:
                problems.append(f"{key} is not one of the five benchmarks")
            continue
        ranks.append((rank, key))
    if [r for r, _ in ranks] != sorted(r for r, _ in ranks):
        problems.append("benchmarks out of canonical order: " + ", ".join(k for _, k in ranks))
    if full_rules:
        present = {k for _, k in ranks}
        for bid, sc in CANONICAL_ORDER:
            if benchmark_key(bid, sc) not in present:
                problems.append(f"missing {benchmark_key(bid, sc)}")
    for key, key_runs in by_key.items():
        modes = [r.mode for r in key_runs]
        if Mode.ACCURACY.value in modes and Mode.PERFORMANCE.value in modes:
            if modes.index(Mode.ACCURACY.value) > modes.index(Mode.PERFORMANCE.value):
                problems.append(f"{key}: performance run before accuracy run")
    report.add("*", "f_benchmark_order", not problems, "; ".join(problems) or " -> ".join(seen))


def _check_cooldown(report: AuditReport, runs: list[Run]) -> None:
    for prev, nxt in zip(runs, runs[1:]):
        if prev.key == nxt.key or prev.footer is None:
            continue
        want = nxt.header.payload.get("cooldown_ms", 0) or 0
        gap_ns = nxt.header.ts_ns - prev.footer.ts_ns
        if want:
            report.add(nxt.key, "cooldown", gap_ns >= want * 1_000_000,
                       f"gap {gap_ns / 1e6:.1f} ms, cooldown {want} ms", severity="warning")


# ---------------------------------------------------------- reproduction


@dataclass(frozen=True)
class ReproductionCheck:
    reported_value: float
    measured_value: float
    tolerance: float
    passed: bool

    @property
    def relative_difference(self) -> float:
        return abs(self.measured_value - self.reported_value) / self.reported_value


def verify_reproduction(reported: float, measured: float, tolerance: float = REPRODUCTION_TOLERANCE) -> ReproductionCheck:
    """A measurement reproduces a reported value if it is within 5% of it (inclusive)."""
    if not reported > 0:
        raise ValueError(f"reported value must be positive, got {reported}")
    rel = abs(measured - reported) / reported
    return ReproductionCheck(reported, measured, tolerance, rel <= tolerance)
