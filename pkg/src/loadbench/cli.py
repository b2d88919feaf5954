"""Command line front end.

    loadbench run --config PATH --out DIR [--full-rules] [--max-cooldown-ms N]
    loadbench check --logs DIR --config PATH [--full-rules]
    loadbench verify --reported PATH --measured PATH

Exit codes: 0 pass, 1 rule or gate failure, 2 usage or format error.
"""

from __future__ import annotations

import argparse
import json
import logging
import signal
import sys
from pathlib import Path

from .audit import FileSink, LogError, check_submission, parse_log, verify_reproduction
from .config import ConfigError, SuiteConfig, load_config
from .datasets import ManifestError
from .loadgen import BenchmarkOutcome, run_suite

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_USAGE = 2

REPORT_SCHEMA_VERSION = 1

log = logging.getLogger("loadbench")


def _log_name(index: int, key: str) -> str:
    return f"{index:02d}_{key.replace('/', '_')}.jsonl"


def build_report(config: SuiteConfig, outcomes: list[BenchmarkOutcome]) -> dict:
    entries = []
    for i, (bench, outcome) in enumerate(zip(config.benchmarks, outcomes)):
        entry = {
            "key": outcome.key,
            "benchmark_id": bench.benchmark_id.value,
            "scenario": bench.scenario.value,
            "log_file": _log_name(i, outcome.key),
            "status": "pass",
            "error": outcome.error,
        }
        acc = outcome.accuracy
        if acc is not None:
            entry["accuracy"] = {
                "metric": acc.metric.metric if acc.metric else None,
                "value": acc.metric.value if acc.metric else None,
                "threshold": acc.metric.threshold_used if acc.metric else None,
                "passed": acc.metric.passed if acc.metric else False,
                "sample_sequence_digest": acc.sample_sequence_digest,
                "valid": acc.valid,
                "reason": acc.error,
            }
        perf = outcome.performance
        if perf is not None:
            entry["performance"] = {
                "issued_count": perf.issued_count,
                "completed_count": perf.completed_count,
                "wall_time_ns": perf.wall_time_ns,
                "sample_sequence_digest": perf.sample_sequence_digest,
                "valid": perf.valid,
                "reason": perf.error,
            }
            if perf.latency_p90 is not None:
                entry["performance"]["latency_p90_ns"] = perf.latency_p90
            if perf.throughput_sps is not None:
                entry["performance"]["throughput_sps"] = perf.throughput_sps
        if not outcome.runs_ok:
            entry["status"] = "run_failed"
            entry["error"] = entry["error"] or next(
                (r.error for r in (acc, perf) if r is not None and r.error), "run did not complete"
            )
        elif not outcome.gate_passed:
            entry["status"] = "gate_failed"
        entries.append(entry)
    return {
        "schema_version": REPORT_SCHEMA_VERSION,
        "full_rules": config.full_rules,
        "overall": all(e["status"] == "pass" for e in entries) and len(entries) == len(config.benchmarks),
        "benchmarks": entries,
    }


def report_table(report: dict) -> str:
    rows = [f"{'benchmark':<34} {'status':<12} {'accuracy':>10} {'threshold':>10} {'p90 (ms)':>10} {'samples/s':>12}"]
    for e in report["benchmarks"]:
        acc = e.get("accuracy") or {}
        perf = e.get("performance") or {}
        value = acc.get("value")
        p90 = perf.get("latency_p90_ns")
        thr = perf.get("throughput_sps")
        rows.append(
            f"{e['key']:<34} {e['status']:<12} "
            f"{'' if value is None else f'{value:.3f}':>10} "
            f"{'' if acc.get('threshold') is None else acc['threshold']:>10} "
            f"{'' if p90 is None else f'{p90 / 1e6:.3f}':>10} "
            f"{'' if thr is None else f'{thr:.2f}':>12}"
        )
        if e.get("error"):
            rows.append(f"    error: {e['error']}")
    rows.append(f"overall: {'PASS' if report['overall'] else 'FAIL'}")
    return "\n".join(rows)


def _raise_interrupt(signum, frame):
    raise KeyboardInterrupt(f"signal {signum}")


def cmd_run(config_path, out_dir=None, full_rules=False, max_cooldown_ms=None) -> int:
    try:
        config = load_config(config_path, full_rules=True if full_rules else None)
        out = Path(out_dir) if out_dir else config.output_dir
        if out is None:
            raise ConfigError("output_dir", "no output directory (use --out)")
        clock = config.make_clock()
        benchmarks = config.build(clock)
    except (ConfigError, ManifestError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out.mkdir(parents=True, exist_ok=True)
    index = {id(b): i for i, b in enumerate(benchmarks)}

    def sink_factory(bench):
        return FileSink(out / _log_name(index[id(bench)], bench.key))

    previous = signal.signal(signal.SIGTERM, _raise_interrupt)
    try:
        outcomes = run_suite(benchmarks, clock=clock, sink_factory=sink_factory,
                             max_cooldown_ms=max_cooldown_ms)
    except KeyboardInterrupt:
        print("interrupted; the active log is marked invalid", file=sys.stderr)
        return EXIT_FAIL
    finally:
        signal.signal(signal.SIGTERM, previous)
    report = build_report(config, outcomes)
    (out / "report.json").write_text(json.dumps(report, indent=2))
    table = report_table(report)
    (out / "report.txt").write_text(table + "\n")
    print(table)
    return EXIT_OK if report["overall"] else EXIT_FAIL


def _read_logs(log_dir: Path) -> list:
    files = sorted(log_dir.glob("*.jsonl"))
    if not files:
        raise LogError(f"no *.jsonl logs in {log_dir}")
    parsed = []
    for f in files:
        try:
            records = parse_log(f)
        except LogError as exc:
            raise LogError(f"{f.name}: {exc}") from None
        if records:
            parsed.append((records[0].ts_ns, f.name, records))
    parsed.sort(key=lambda p: (p[0], p[1]))
    return [r for _, _, records in parsed for r in records]


def cmd_check(log_dir, config_path, full_rules=False, as_json=False) -> int:
    try:
        config = load_config(config_path, full_rules=True if full_rules else None)
        ground_truth = config.ground_truth()
    except (ConfigError, ManifestError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        records = _read_logs(Path(log_dir))
    except (LogError, OSError) as exc:
        print(f"log error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    report = check_submission(
        records,
        config.settings_by_key(),
        config.targets(),
        full_rules=config.full_rules,
        ground_truth=ground_truth,
    )
    print(json.dumps(report.to_json(), indent=2) if as_json else report.to_table())
    return EXIT_OK if report.overall else EXIT_FAIL


def _reproduction_values(entry: dict) -> dict[str, float]:
    values = {}
    acc = entry.get("accuracy") or {}
    perf = entry.get("performance") or {}
    if acc.get("value") is not None:
        values["accuracy"] = acc["value"]
    for k in ("latency_p90_ns", "throughput_sps"):
        if perf.get(k) is not None:
            values[k] = perf[k]
    return values


def cmd_verify(reported_path, measured_path) -> int:
    try:
        reported = json.loads(Path(reported_path).read_text())
        measured = json.loads(Path(measured_path).read_text())
        rep = {e["key"]: e for e in reported["benchmarks"]}
        mea = {e["key"]: e for e in measured["benchmarks"]}
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        print(f"report error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if set(rep) != set(mea):
        print(f"benchmark sets differ: {sorted(set(rep) ^ set(mea))}", file=sys.stderr)
        return EXIT_USAGE
    ok = True
    print(f"{'benchmark':<34} {'quantity':<16} {'reported':>14} {'measured':>14} {'rel diff':>9}  result")
    for key in rep:
        r_vals = _reproduction_values(rep[key])
        m_vals = _reproduction_values(mea[key])
        if set(r_vals) != set(m_vals):
            print(f"{key}: reported and measured quantities differ", file=sys.stderr)
            return EXIT_USAGE
        for name, r in r_vals.items():
            try:
                check = verify_reproduction(r, m_vals[name])
            except ValueError as exc:
                print(f"{key} {name}: {exc}", file=sys.stderr)
                return EXIT_USAGE
            ok &= check.passed
            print(f"{key:<34} {name:<16} {r:>14.6g} {m_vals[name]:>14.6g} "
                  f"{check.relative_difference:>8.2%}  {'PASS' if check.passed else 'FAIL'}")
    print(f"overall: {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="loadbench", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a benchmark suite")
    run.add_argument("--config", required=True)
    run.add_argument("--out")
    run.add_argument("--full-rules", action="store_true", help="enforce the published run-rule constants")
    run.add_argument("--max-cooldown-ms", type=int, default=None, help="cap the pause between benchmarks")

    check = sub.add_parser("check", help="audit a directory of run logs")
    check.add_argument("--logs", required=True)
    check.add_argument("--config", required=True)
    check.add_argument("--full-rules", action="store_true")
    check.add_argument("--json", action="store_true", help="print the report as JSON")

    verify = sub.add_parser("verify", help="compare a reproduction report against a reported one")
    verify.add_argument("--reported", required=True)
    verify.add_argument("--measured", required=True)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "run":
        return cmd_run(args.config, args.out, args.full_rules, args.max_cooldown_ms)
    if args.command == "check":
        return cmd_check(args.logs, args.config, args.full_rules, args.json)
    return cmd_verify(args.reported, args.measured)


if __name__ == "__main__":
    sys.exit(main())
