"""Suite configuration files (JSON).

Example::

    {
      "schema_version": 1,
      "full_rules": false,
      "clock": "virtual",
      "benchmarks": [
        {
          "benchmark_id": "ImageClassification",
          "scenario": "SingleStream",
          "dataset_manifest_path": "data/ic/manifest.json",
          "backend": {"type": "synthetic", "latency": {"constant_ms": 1},
                      "parallelism": 1, "accuracy_script": {"correct_fraction": 1.0}},
          "settings": {"seed": 42, "min_query_count": 64, "min_duration_ms": 100},
          "quality_target": {"fp32_reference": 76.19, "fraction": 0.98}
        }
      ]
    }

Relative paths are resolved against the config file's directory.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .backends import (
    Backend,
    LatencyModel,
    Prediction,
    SyntheticBackend,
    SyntheticBackendConfig,
    create_backend,
    script_from_ground_truth,
)
from .clock import RealClock, VirtualClock
from .datasets import Dataset, DatasetManifest, load_manifest
from .loadgen import Benchmark, TestSettings
from .metrics import QUALITY_TARGETS, QualityTarget
from .rules import (
    CANONICAL_ORDER,
    FULL_RULES_MIN_DURATION_MS,
    FULL_RULES_MIN_QUERY_COUNT,
    BenchmarkId,
    Scenario,
    benchmark_key,
    canonical_rank,
)

CONFIG_SCHEMA_VERSION = 1
_SETTINGS_FIELDS = (
    "seed",
    "min_query_count",
    "min_duration_ms",
    "performance_sample_count",
    "cooldown_ms",
    "timeout_ms",
)


class ConfigError(ValueError):
    def __init__(self, where: str, message: str):
        super().__init__(f"{where}: {message}")
        self.where = where


@dataclass
class BenchmarkConfig:
    benchmark_id: BenchmarkId
    scenario: Scenario
    dataset_manifest_path: Path
    backend: dict
    settings: TestSettings
    quality_target: QualityTarget

    @property
    def key(self) -> str:
        return benchmark_key(self.benchmark_id, self.scenario)


@dataclass
class SuiteConfig:
    benchmarks: list[BenchmarkConfig]
    output_dir: Path | None = None
    full_rules: bool = False
    clock: str = "real"
    source: Path | None = None
    _manifests: dict = field(default_factory=dict, repr=False)

    def settings_by_key(self) -> dict[str, TestSettings]:
        return {b.key: b.settings for b in self.benchmarks}

    def targets(self) -> list[QualityTarget]:
        return [b.quality_target for b in self.benchmarks]

    def manifest(self, bench: BenchmarkConfig) -> DatasetManifest:
        path = bench.dataset_manifest_path
        if path not in self._manifests:
            self._manifests[path] = load_manifest(path)
        return self._manifests[path]

    def ground_truth(self) -> dict[str, list]:
        out = {}
        for b in self.benchmarks:
            m = self.manifest(b)
            out[m.benchmark_id.value] = [e.ground_truth for e in m.entries]
        return out

    def make_clock(self):
        return VirtualClock() if self.clock == "virtual" else RealClock()

    def build(self, clock=None) -> list[Benchmark]:
        clock = clock or self.make_clock()
        out = []
        for i, b in enumerate(self.benchmarks):
            manifest = self.manifest(b)
            if manifest.benchmark_id is not b.benchmark_id:
                raise ConfigError(
                    f"benchmarks[{i}].dataset_manifest_path",
                    f"manifest is for {manifest.benchmark_id.value}, not {b.benchmark_id.value}",
                )
            backend = build_backend(b.backend, manifest, clock, f"benchmarks[{i}].backend", self.source)
            out.append(Benchmark(backend, Dataset(manifest), b.settings, b.quality_target, name=b.key))
        return out


def _get(d: dict, key: str, where: str, types, required=True, default=None):
    if key not in d:
        if required:
            raise ConfigError(f"{where}.{key}", "required field is missing")
        return default
    value = d[key]
    if not isinstance(value, types) or (isinstance(value, bool) and bool not in _as_tuple(types)):
        raise ConfigError(f"{where}.{key}", f"expected {_type_names(types)}, got {type(value).__name__}")
    return value


def _as_tuple(types):
    return types if isinstance(types, tuple) else (types,)


def _type_names(types) -> str:
    return " or ".join(t.__name__ for t in _as_tuple(types))


def _ms_to_ns(ms) -> int:
    return int(round(float(ms) * 1_000_000))


def parse_latency(d: dict, where: str) -> LatencyModel:
    if not isinstance(d, dict) or len(d) != 1:
        raise ConfigError(where, "latency needs exactly one of constant_ms, uniform_ms, trace_ms (or *_ns)")
    (kind, value), = d.items()
    try:
        if kind in ("constant_ms", "constant_ns"):
            ns = _ms_to_ns(value) if kind.endswith("_ms") else int(value)
            return LatencyModel.constant(ns)
        conv = _ms_to_ns if kind.endswith("_ms") else int
        if kind in ("uniform_ms", "uniform_ns"):
            lo, hi = value
            return LatencyModel.uniform(conv(lo), conv(hi))
        if kind in ("trace_ms", "trace_ns"):
            return LatencyModel.trace([conv(v) for v in value])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}.{kind}", str(exc)) from None
    raise ConfigError(f"{where}.{kind}", "unknown latency model")


def _resolve(path: str, base: Path | None) -> Path:
    p = Path(path)
    if not p.is_absolute() and base is not None:
        p = base / p
    return p


def build_backend(spec: dict, manifest: DatasetManifest, clock, where: str, source: Path | None = None) -> Backend:
    kind = spec.get("type", "synthetic")
    if kind != "synthetic":
        options = spec.get("options", {})
        try:
            return create_backend(kind, **options)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{where}.type", str(exc)) from None
    latency = parse_latency(_get(spec, "latency", where, dict), f"{where}.latency")
    script_spec = _get(spec, "accuracy_script", where, dict, required=False, default={"correct_fraction": 1.0})
    base = source.parent if source else None
    if "correct_fraction" in script_spec:
        script = script_from_ground_truth(
            manifest, float(script_spec["correct_fraction"]), int(script_spec.get("seed", 0))
        )
    else:
        if "path" in script_spec:
            raw = json.loads(_resolve(script_spec["path"], base).read_text())
        elif "predictions" in script_spec:
            raw = script_spec["predictions"]
        else:
            raise ConfigError(f"{where}.accuracy_script", "needs correct_fraction, path or predictions")
        try:
            script = {int(k): Prediction.from_json(manifest.benchmark_id, v) for k, v in raw.items()}
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"{where}.accuracy_script", f"bad prediction: {exc}") from None
    try:
        config = SyntheticBackendConfig(
            latency_model=latency,
            accuracy_script=script,
            parallelism=int(spec.get("parallelism", 1)),
            seed=int(spec.get("seed", 0)),
        )
    except ValueError as exc:
        raise ConfigError(where, str(exc)) from None
    return SyntheticBackend(config, clock=clock)


def _parse_target(d: dict | None, bid: BenchmarkId, where: str) -> QualityTarget:
    if d is None:
        return QUALITY_TARGETS[bid]
    try:
        return QualityTarget(
            bid,
            float(_get(d, "fp32_reference", where, (int, float))),
            float(_get(d, "fraction", where, (int, float))),
            d.get("published_threshold"),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(where, str(exc)) from None


def parse_config(data: Any, source: Path | None = None, *, full_rules: bool | None = None) -> SuiteConfig:
    if not isinstance(data, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    version = data.get("schema_version", CONFIG_SCHEMA_VERSION)
    if version != CONFIG_SCHEMA_VERSION:
        raise ConfigError("schema_version", f"unsupported version {version}")
    base = source.parent if source else None
    if full_rules is None:
        full_rules = bool(_get(data, "full_rules", "<root>", bool, required=False, default=False))
    clock = _get(data, "clock", "<root>", str, required=False, default="real")
    if clock not in ("real", "virtual"):
        raise ConfigError("clock", "must be 'real' or 'virtual'")
    entries = _get(data, "benchmarks", "<root>", list)
    if not entries:
        raise ConfigError("benchmarks", "at least one benchmark is required")

    benches = []
    for i, e in enumerate(entries):
        where = f"benchmarks[{i}]"
        if not isinstance(e, dict):
            raise ConfigError(where, "must be an object")
        try:
            bid = BenchmarkId(_get(e, "benchmark_id", where, str))
        except ValueError:
            raise ConfigError(f"{where}.benchmark_id", f"unknown benchmark {e['benchmark_id']!r}") from None
        try:
            scenario = Scenario(_get(e, "scenario", where, str))
        except ValueError:
            raise ConfigError(f"{where}.scenario", f"unknown scenario {e['scenario']!r}") from None
        manifest_path = _resolve(_get(e, "dataset_manifest_path", where, str), base)
        if not manifest_path.exists():
            raise ConfigError(f"{where}.dataset_manifest_path", f"{manifest_path} does not exist")
        backend = _get(e, "backend", where, dict, required=False, default={"type": "dummy"})
        raw_settings = _get(e, "settings", where, dict, required=False, default={})
        unknown = set(raw_settings) - set(_SETTINGS_FIELDS)
        if unknown:
            raise ConfigError(f"{where}.settings", f"unknown fields {sorted(unknown)}")
        kwargs = {k: raw_settings[k] for k in _SETTINGS_FIELDS if k in raw_settings}
        for k, v in kwargs.items():
            if k == "performance_sample_count" and v is None:
                continue
            if not isinstance(v, int) or isinstance(v, bool):
                raise ConfigError(f"{where}.settings.{k}", f"expected int, got {type(v).__name__}")
        if full_rules:
            kwargs["min_query_count"] = max(
                kwargs.get("min_query_count", 0), FULL_RULES_MIN_QUERY_COUNT[scenario]
            )
            kwargs["min_duration_ms"] = max(kwargs.get("min_duration_ms", 0), FULL_RULES_MIN_DURATION_MS)
        try:
            settings = TestSettings(scenario=scenario, **kwargs)
        except ValueError as exc:
            raise ConfigError(f"{where}.settings", str(exc)) from None
        target = _parse_target(e.get("quality_target"), bid, f"{where}.quality_target")
        benches.append(BenchmarkConfig(bid, scenario, manifest_path, backend, settings, target))

    if full_rules:
        keys = [b.key for b in benches]
        wanted = [benchmark_key(b, s) for b, s in CANONICAL_ORDER]
        if sorted(keys) != sorted(wanted):
            raise ConfigError(
                "benchmarks", f"full rules need exactly the five benchmarks {wanted}, got {keys}"
            )
        benches.sort(key=lambda b: canonical_rank(b.benchmark_id, b.scenario))

    out = data.get("output_dir")
    return SuiteConfig(
        benchmarks=benches,
        output_dir=_resolve(out, base) if out else None,
        full_rules=full_rules,
        clock=clock,
        source=source,
    )


def load_config(path: str | Path, *, full_rules: bool | None = None) -> SuiteConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(str(path), "config file not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(str(path), f"invalid JSON: {exc}") from None
    return parse_config(data, source=path, full_rules=full_rules)
