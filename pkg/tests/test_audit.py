import copy
import io
import json
import struct
import threading

import pytest
from hypothesis import given, settings as hsettings, strategies as st

from loadbench.audit import (
    FileSink,
    LogLifecycleError,
    LogParseError,
    LogRecord,
    LogSink,
    LogStructureError,
    RecordType,
    SchemaVersionError,
    check_submission,
    dump_log,
    parse_lines,
    parse_log,
    verify_reproduction,
    write_log,
)
from loadbench.clock import VirtualClock

from conftest import MS, bench, ground_truth_of, suite_logs


def rec(kind, ts, payload=None, **kw):
    fields = dict(benchmark_id="ImageClassification", scenario="SingleStream", mode="Performance", seed=1)
    fields.update(kw)
    return LogRecord(kind, ts_ns=ts, payload=payload or {}, **fields)


class TestSink:
    def test_lifecycle(self):
        sink = LogSink()
        with pytest.raises(LogLifecycleError):
            sink.write(rec(RecordType.ISSUE, 0))
        sink.write(rec(RecordType.RUN_HEADER, 0))
        with pytest.raises(LogLifecycleError):
            sink.write(rec(RecordType.RUN_HEADER, 1))
        sink.write(rec(RecordType.ISSUE, 5))
        with pytest.raises(LogLifecycleError):
            sink.write(rec(RecordType.COMPLETION, 4))
        write_log(sink, rec(RecordType.RUN_FOOTER, 6, {"valid": True}))
        assert len(parse_lines(sink.getvalue().splitlines())) == 3

    def test_concurrent_appends(self):
        sink = LogSink()
        sink.write(rec(RecordType.RUN_HEADER, 0))

        def worker(base):
            for i in range(200):
                # equal timestamps keep the monotone check satisfied under any interleaving
                sink.write(rec(RecordType.COMPLETION, 1, {"query_id": base + i, "latency_ns": 1}))

        threads = [threading.Thread(target=worker, args=(k * 1000,)) for k in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        sink.write(rec(RecordType.RUN_FOOTER, 1, {"valid": True}))
        records = parse_lines(sink.getvalue().splitlines())
        assert len(records) == 1602

    def test_write_failure(self):
        class Broken(io.StringIO):
            def write(self, s):
                raise OSError("disk full")

        sink = LogSink(Broken())
        with pytest.raises(OSError):
            sink.write(rec(RecordType.RUN_HEADER, 0))


@pytest.fixture(scope="module")
def small_suite(datasets):
    clock = VirtualClock()
    benches = [
        bench(datasets, "ImageClassification", "SingleStream", clock=clock, min_query_count=20, seed=3),
        bench(datasets, "ImageClassification", "Offline", clock=clock, parallelism=4, min_query_count=40, seed=3),
        bench(datasets, "Segmentation", "SingleStream", clock=clock, min_query_count=20, seed=4,
              performance_sample_count=5),
        bench(datasets, "QuestionAnswering", "SingleStream", clock=clock, min_query_count=20, seed=5),
    ]
    outcomes, logs = suite_logs(benches, clock)
    assert all(o.runs_ok for o in outcomes)
    settings = {b.key: b.settings for b in benches}
    return [r for log in logs for r in log], settings


def audit(records, settings, datasets, **kw):
    return check_submission(records, settings, ground_truth=ground_truth_of(datasets), **kw)


def test_round_trip_bit_exact(small_suite, tmp_path):
    records, _ = small_suite
    text = dump_log(records)
    with FileSink(tmp_path / "log.jsonl") as sink:
        for r in records:
            sink.write(r)
    assert (tmp_path / "log.jsonl").read_text() == text
    again = parse_log(tmp_path / "log.jsonl")
    assert again == records
    assert dump_log(again) == text


def test_unknown_fields_preserved():
    line = json.dumps({**rec(RecordType.RUN_HEADER, 0).to_json(), "device": "phone-7"})
    footer = rec(RecordType.RUN_FOOTER, 0).to_line()
    out = parse_lines([line, footer])
    assert out[0].extra == {"device": "phone-7"}
    assert out[0].to_line() == line.replace(", ", ",").replace(": ", ":")


class TestParseErrors:
    def lines(self, small_suite):
        return dump_log(small_suite[0][:50]).splitlines()

    def test_truncated_line(self, small_suite):
        lines = self.lines(small_suite)
        lines[7] = lines[7][: len(lines[7]) // 2]
        with pytest.raises(LogParseError) as err:
            parse_lines(lines)
        assert err.value.lineno == 8

    def test_missing_footer(self, small_suite):
        lines = self.lines(small_suite)[:10]
        with pytest.raises(LogStructureError):
            parse_lines(lines)

    def test_reordered_header(self, small_suite):
        lines = self.lines(small_suite)
        lines[0], lines[1] = lines[1], lines[0]
        with pytest.raises(LogStructureError) as err:
            parse_lines(lines)
        assert err.value.lineno == 1

    def test_schema_version(self, small_suite):
        lines = self.lines(small_suite)
        d = json.loads(lines[3])
        d["schema_version"] = 2
        lines[3] = json.dumps(d)
        with pytest.raises(SchemaVersionError) as err:
            parse_lines(lines)
        assert err.value.lineno == 4

    def test_missing_field(self):
        with pytest.raises(LogParseError):
            parse_lines(['{"record_type": "RunHeader"}'])


def test_compliant_suite_passes(small_suite, datasets):
    records, settings = small_suite
    report = audit(records, settings, datasets)
    assert report.overall, report.to_table()
    assert json.loads(json.dumps(report.to_json()))["overall"] is True
    assert "overall: PASS" in report.to_table()


def _first(records, kind, mode=None):
    return next(i for i, r in enumerate(records) if r.record_type is kind and (mode is None or r.mode == mode))


def _failed_rules(report):
    return {v.rule_id.split("[")[0] for v in report.failures()}


def test_edited_latency_fails_h(small_suite, datasets):
    records, settings = small_suite
    records = copy.deepcopy(records)
    i = _first(records, RecordType.COMPLETION, "Performance")
    records[i].payload["latency_ns"] += 1
    assert _failed_rules(audit(records, settings, datasets)) == {"h_summary_recompute"}


def test_altered_seed_fails_e(small_suite, datasets):
    records, settings = small_suite
    records = copy.deepcopy(records)
    for r in records:
        if r.key == "ImageClassification/SingleStream":
            r.seed += 1
    failed = _failed_rules(audit(records, None, datasets))
    assert "e_sample_sequence" in failed


def test_dropped_completion_fails_g(small_suite, datasets):
    records, settings = small_suite
    records = copy.deepcopy(records)
    del records[_first(records, RecordType.COMPLETION, "Performance")]
    assert "g_exactly_once" in _failed_rules(audit(records, settings, datasets))


def test_duplicate_completion_fails_g(small_suite, datasets):
    records, settings = small_suite
    records = copy.deepcopy(records)
    i = _first(records, RecordType.COMPLETION, "Performance")
    records.insert(i, copy.deepcopy(records[i]))
    assert "g_exactly_once" in _failed_rules(audit(records, settings, datasets))


def test_partial_accuracy_coverage_fails_c(small_suite, datasets):
    records, settings = small_suite
    records = copy.deepcopy(records)
    i = _first(records, RecordType.ISSUE, "Accuracy")
    qid = records[i].payload["query_id"]
    records = [r for r in records if not (r.mode == "Accuracy" and r.key == records[i].key
                                          and r.payload.get("query_id") == qid)]
    assert "c_accuracy_coverage" in _failed_rules(audit(records, settings, datasets))


def test_below_target_fails_d(datasets):
    clock = VirtualClock()
    b = bench(datasets, "ImageClassification", "SingleStream", clock=clock, correct_fraction=0.5,
              min_query_count=5)
    _, logs = suite_logs([b], clock)
    report = audit(logs[0], {b.key: b.settings}, datasets)
    assert _failed_rules(report) == {"d_quality_target"}


def test_inflated_accuracy_caught_by_recompute(small_suite, datasets):
    records, settings = small_suite
    records = copy.deepcopy(records)
    i = _first(records, RecordType.ACCURACY_SUMMARY)
    records[i].payload["value"] = 99.0
    assert "h_summary_recompute" in _failed_rules(audit(records, settings, datasets))


def test_interleaved_runs_fail_f(small_suite, datasets):
    records, settings = small_suite
    ic = [r for r in records if r.key == "ImageClassification/SingleStream"]
    qa = [r for r in records if r.key == "QuestionAnswering/SingleStream"]
    acc_end = _first(ic, RecordType.RUN_FOOTER) + 1
    report = audit(ic[:acc_end] + qa + ic[acc_end:], settings, datasets)
    assert "f_benchmark_order" in _failed_rules(report)


def test_short_offline_run_is_only_warned(small_suite, datasets):
    records, settings = small_suite
    report = audit(records, settings, datasets, full_rules=False)
    assert report.overall


def _numeric_paths(records):
    """(record index, location) for every numeric field of Completion and Summary records."""
    kinds = (RecordType.COMPLETION, RecordType.PERFORMANCE_SUMMARY, RecordType.ACCURACY_SUMMARY)
    out = []
    for i, r in enumerate(records):
        if r.record_type not in kinds:
            continue
        for attr in ("ts_ns", "seed", "schema_version"):
            out.append((i, attr, None))
        for k, v in r.payload.items():
            if isinstance(v, (int, float)) and not isinstance(v, bool):
                out.append((i, "payload", k))
    return out


def _mutate(record, attr, key, fn):
    if attr == "payload":
        record.payload[key] = fn(record.payload[key])
    else:
        setattr(record, attr, fn(getattr(record, attr)))


def _flip_bit(value, bit):
    if isinstance(value, int):
        return value ^ (1 << bit % 62)
    (raw,) = struct.unpack("<Q", struct.pack("<d", value))
    (out,) = struct.unpack("<d", struct.pack("<Q", raw ^ (1 << bit)))
    return out


@hsettings(max_examples=150, deadline=None)
@given(st.data())
def test_any_single_numeric_mutation_is_flagged(small_suite, datasets, data):
    records, settings = small_suite
    paths = _numeric_paths(records)
    i, attr, key = data.draw(st.sampled_from(paths))
    # float bits below 23 change the value by less than the 1e-9 summary tolerance
    bit = data.draw(st.integers(23, 63))
    mutated = copy.deepcopy(records)
    _mutate(mutated[i], attr, key, lambda v: _flip_bit(v, bit))
    assert not audit(mutated, settings, datasets).overall


@pytest.mark.parametrize(
    "reported, measured, passed",
    [(100, 104, True), (100, 106, False), (100, 100, True), (100, 95, True), (100, 94.9, False)],
)
def test_verify_reproduction(reported, measured, passed):
    assert verify_reproduction(reported, measured).passed is passed


@pytest.mark.parametrize("reported", [0, -1.0])
def test_verify_reproduction_rejects_nonpositive(reported):
    with pytest.raises(ValueError):
        verify_reproduction(reported, 1.0)
