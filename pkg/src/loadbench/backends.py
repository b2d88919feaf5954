"""System-under-test backends.

A backend receives queries through :meth:`Backend.issue` and reports each one
exactly once to the completion sink registered with
:meth:`Backend.register_completion_sink`, possibly from another thread.
"""

from __future__ import annotations

import heapq
import threading
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from .clock import RealClock, VirtualClock
from .datasets import DatasetManifest, PreprocessedSample
from .metrics import DetectionBox, SegMask
from .rng import SplitMix64
from .rules import (
    BenchmarkId,
    CANONICAL_INPUT_SHAPE,
    SEGMENTATION_CLASSES,
    UnsupportedModelError,
    parse_benchmark_id,
)

CompletionSink = Callable[[int, "Prediction | None", "str | None"], None]

NO_SCRIPTED_OUTPUT = "no scripted output"


class Precision(str, Enum):
    FP32 = "FP32"
    FP16 = "FP16"
    INT8 = "INT8"


class BackendError(RuntimeError):
    pass


@dataclass(frozen=True)
class ModelDescriptor:
    benchmark_id: BenchmarkId
    precision: Precision = Precision.FP32
    input_shape: tuple[int, ...] | None = None
    model_uri: str = ""

    def __post_init__(self):
        object.__setattr__(self, "benchmark_id", parse_benchmark_id(self.benchmark_id))
        object.__setattr__(self, "precision", Precision(self.precision))
        shape = CANONICAL_INPUT_SHAPE[self.benchmark_id]
        if self.input_shape is None:
            object.__setattr__(self, "input_shape", shape)
        elif tuple(self.input_shape) != shape:
            raise ValueError(
                f"{self.benchmark_id.value} models take input {shape}, got {tuple(self.input_shape)}"
            )
        else:
            object.__setattr__(self, "input_shape", tuple(self.input_shape))


_PAYLOAD_FIELD = {
    BenchmarkId.IMAGE_CLASSIFICATION: "class_scores",
    BenchmarkId.OBJECT_DETECTION: "detections",
    BenchmarkId.SEGMENTATION: "mask",
    BenchmarkId.QUESTION_ANSWERING: "answer_span",
}


@dataclass(frozen=True)
class Prediction:
    """Postprocessed model output; ``payload`` type depends on the task."""

    benchmark_id: BenchmarkId
    payload: Any

    def __post_init__(self):
        bid = parse_benchmark_id(self.benchmark_id)
        object.__setattr__(self, "benchmark_id", bid)
        p = self.payload
        ok = {
            BenchmarkId.IMAGE_CLASSIFICATION: lambda: len(p) > 0 and not isinstance(p, str),
            BenchmarkId.OBJECT_DETECTION: lambda: all(isinstance(b, DetectionBox) for b in p),
            BenchmarkId.SEGMENTATION: lambda: isinstance(p, SegMask),
            BenchmarkId.QUESTION_ANSWERING: lambda: isinstance(p, str),
        }[bid]
        if not ok():
            raise TypeError(f"payload {type(p).__name__} does not match {bid.value}")

    def to_json(self) -> dict:
        bid = self.benchmark_id
        if bid is BenchmarkId.IMAGE_CLASSIFICATION:
            return {"class_scores": [float(s) for s in self.payload]}
        if bid is BenchmarkId.OBJECT_DETECTION:
            return {"detections": [b.to_dict() for b in self.payload]}
        if bid is BenchmarkId.SEGMENTATION:
            m = self.payload
            return {"height": m.height, "width": m.width, "mask_rle": m.to_rle()}
        return {"answer_span": self.payload}

    @classmethod
    def from_json(cls, benchmark_id, data: Mapping) -> "Prediction":
        bid = parse_benchmark_id(benchmark_id)
        if bid is BenchmarkId.IMAGE_CLASSIFICATION:
            return cls(bid, tuple(float(s) for s in data["class_scores"]))
        if bid is BenchmarkId.OBJECT_DETECTION:
            return cls(bid, tuple(DetectionBox.from_dict(b) for b in data["detections"]))
        if bid is BenchmarkId.SEGMENTATION:
            return cls(bid, SegMask.from_rle(data["mask_rle"], data["height"], data["width"]))
        return cls(bid, str(data["answer_span"]))

    @property
    def top1(self) -> int:
        return int(np.argmax(self.payload))


class LatencyKind(str, Enum):
    CONSTANT = "constant"
    UNIFORM = "uniform"
    TRACE = "trace"


@dataclass(frozen=True)
class LatencyModel:
    kind: LatencyKind
    values_ns: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "kind", LatencyKind(self.kind))
        vals = tuple(int(v) for v in self.values_ns)
        object.__setattr__(self, "values_ns", vals)
        expected = {LatencyKind.CONSTANT: 1, LatencyKind.UNIFORM: 2}.get(self.kind)
        if expected is not None and len(vals) != expected:
            raise ValueError(f"{self.kind.value} latency takes {expected} value(s)")
        if not vals:
            raise ValueError("trace latency model needs at least one entry")
        if any(v < 0 for v in vals):
            raise ValueError("latencies must be non-negative")
        if self.kind is LatencyKind.UNIFORM and vals[0] > vals[1]:
            raise ValueError("uniform range needs lo <= hi")

    @classmethod
    def constant(cls, ns: int) -> "LatencyModel":
        return cls(LatencyKind.CONSTANT, (ns,))

    @classmethod
    def uniform(cls, lo_ns: int, hi_ns: int) -> "LatencyModel":
        return cls(LatencyKind.UNIFORM, (lo_ns, hi_ns))

    @classmethod
    def trace(cls, values_ns: Sequence[int]) -> "LatencyModel":
        return cls(LatencyKind.TRACE, tuple(values_ns))


@dataclass
class SyntheticBackendConfig:
    latency_model: LatencyModel
    accuracy_script: dict[int, Prediction] = field(default_factory=dict)
    parallelism: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.parallelism < 1:
            raise ValueError("parallelism must be >= 1")


class Backend(ABC):
    """Base class for a system under test."""

    name = "base"

    def __init__(self):
        self.descriptor: ModelDescriptor | None = None
        self._sink: CompletionSink | None = None

    @property
    def loaded(self) -> bool:
        return self.descriptor is not None

    def load(self, descriptor: ModelDescriptor) -> "Backend":
        if not isinstance(descriptor, ModelDescriptor):
            raise UnsupportedModelError(f"not a model descriptor: {descriptor!r}")
        self._load(descriptor)
        self.descriptor = descriptor
        return self

    def _load(self, descriptor: ModelDescriptor) -> None:
        pass

    def unload(self) -> None:
        self.descriptor = None

    def register_completion_sink(self, sink: CompletionSink) -> None:
        self._sink = sink

    def _complete(self, query_id: int, prediction=None, error=None) -> None:
        if self._sink is None:
            raise BackendError("no completion sink registered")
        self._sink(query_id, prediction, error)

    def _require_loaded(self):
        if not self.loaded:
            raise BackendError(f"{self.name} backend used before load()")

    @abstractmethod
    def issue(self, query, sample: PreprocessedSample | None) -> None:
        """Start work on one query; must not wait for it to finish."""

    def flush(self) -> None:
        """Deliver completions the backend is holding back. Default: nothing held."""


_REGISTRY: dict[str, Callable[..., Backend]] = {}


def register_backend(name: str):
    def deco(factory):
        _REGISTRY[name] = factory
        factory.name = name
        return factory

    return deco


def create_backend(name: str, **options) -> Backend:
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise UnsupportedModelError(
            f"unknown backend {name!r}; registered: {sorted(_REGISTRY)}"
        ) from None
    return factory(**options)


def registered_backends() -> list[str]:
    return sorted(_REGISTRY)


def placeholder_prediction(benchmark_id: BenchmarkId, shape: tuple[int, int] = (1, 1)) -> Prediction:
    bid = BenchmarkId(benchmark_id)
    if bid is BenchmarkId.IMAGE_CLASSIFICATION:
        return Prediction(bid, (0.0,))
    if bid is BenchmarkId.OBJECT_DETECTION:
        return Prediction(bid, ())
    if bid is BenchmarkId.SEGMENTATION:
        return Prediction(bid, SegMask(np.full(shape, SEGMENTATION_CLASSES)))
    return Prediction(bid, "")


@register_backend("dummy")
class DummyBackend(Backend):
    """Completes every query immediately, on the caller's thread."""

    def issue(self, query, sample=None) -> None:
        self._require_loaded()
        self._complete(query.query_id, placeholder_prediction(self.descriptor.benchmark_id))


def _next_latency(model: LatencyModel, state: dict) -> int:
    if model.kind is LatencyKind.CONSTANT:
        return model.values_ns[0]
    if model.kind is LatencyKind.UNIFORM:
        lo, hi = model.values_ns
        return lo + state["rng"].below(hi - lo + 1)
    i = state["cursor"]
    state["cursor"] = (i + 1) % len(model.values_ns)
    return model.values_ns[i]


@register_backend("synthetic")
class SyntheticBackend(Backend):
    """Scripted backend with a configurable latency model.

    On a :class:`RealClock` the work runs on a pool of ``parallelism``
    threads that sleep for the drawn latency. On a :class:`VirtualClock`
    completions are simulated as events on ``parallelism`` servers and
    delivered in time order by :meth:`flush`.
    """

    def __init__(self, config: SyntheticBackendConfig, clock=None):
        super().__init__()
        self.config = config
        self.clock = clock if clock is not None else RealClock()
        self._pool: ThreadPoolExecutor | None = None
        self._events: list = []
        self._lock = threading.Lock()
        self._reset()

    def _reset(self):
        self._latency_state = {"rng": SplitMix64(self.config.seed), "cursor": 0}
        self._free_at = [0] * self.config.parallelism
        self._seq = 0
        self._events.clear()

    def _load(self, descriptor):
        self._shutdown_pool()
        self._reset()
        if not isinstance(self.clock, VirtualClock):
            self._pool = ThreadPoolExecutor(
                max_workers=self.config.parallelism, thread_name_prefix="synthetic-sut"
            )

    def _shutdown_pool(self):
        if self._pool is not None:
            self._pool.shutdown(wait=True)
            self._pool = None

    def unload(self):
        self._shutdown_pool()
        super().unload()

    def _result(self, sample_index: int):
        pred = self.config.accuracy_script.get(sample_index)
        if pred is None:
            return None, NO_SCRIPTED_OUTPUT
        return pred, None

    def issue(self, query, sample=None) -> None:
        self._require_loaded()
        latency = _next_latency(self.config.latency_model, self._latency_state)
        prediction, error = self._result(query.sample_index)
        if self._pool is None:
            now = self.clock.now_ns()
            k = min(range(len(self._free_at)), key=self._free_at.__getitem__)
            done = max(now, self._free_at[k]) + latency
            self._free_at[k] = done
            heapq.heappush(self._events, (done, self._seq, query.query_id, prediction, error))
            self._seq += 1
        else:
            self._pool.submit(self._serve, query.query_id, latency, prediction, error)

    def _serve(self, query_id, latency_ns, prediction, error):
        self.clock.sleep_ns(latency_ns)
        self._complete(query_id, prediction, error)

    def flush(self) -> None:
        while self._events:
            done, _, query_id, prediction, error = heapq.heappop(self._events)
            self.clock.advance_to(done)
            self._complete(query_id, prediction, error)


def _wrong_prediction(bid: BenchmarkId, gt, class_count: int | None) -> Prediction:
    if bid is BenchmarkId.IMAGE_CLASSIFICATION:
        scores = np.zeros(class_count or 2)
        scores[(gt + 1) % scores.size] = 1.0
        return Prediction(bid, tuple(scores.tolist()))
    if bid is BenchmarkId.OBJECT_DETECTION:
        return Prediction(bid, ())
    if bid is BenchmarkId.SEGMENTATION:
        # shift every label to a different scored class
        return Prediction(bid, SegMask((gt.labels % (SEGMENTATION_CLASSES - 1)) + 1))
    return Prediction(bid, "")


def _correct_prediction(bid: BenchmarkId, gt, class_count: int | None) -> Prediction:
    if bid is BenchmarkId.IMAGE_CLASSIFICATION:
        scores = np.zeros(class_count or gt + 1)
        scores[gt] = 1.0
        return Prediction(bid, tuple(scores.tolist()))
    if bid is BenchmarkId.OBJECT_DETECTION:
        return Prediction(bid, tuple(DetectionBox(b.xmin, b.ymin, b.xmax, b.ymax, b.class_id, 1.0) for b in gt))
    if bid is BenchmarkId.SEGMENTATION:
        return Prediction(bid, SegMask(gt.labels.copy()))
    return Prediction(bid, gt[0])


def script_from_ground_truth(
    manifest: DatasetManifest, correct_fraction: float = 1.0, seed: int = 0
) -> dict[int, Prediction]:
    """Predictions that reproduce the ground truth on ``round(f * n)`` samples.

    The correct samples are the first ones of a seeded shuffle; the rest get
    a prediction that is wrong for the task.
    """
    if not 0.0 <= correct_fraction <= 1.0:
        raise ValueError("correct_fraction must be in [0, 1]")
    from .rng import select_samples

    n = manifest.sample_count
    n_correct = round(correct_fraction * n)
    correct = set(select_samples(seed, n, n)[:n_correct]) if n else set()
    bid = manifest.benchmark_id
    script = {}
    for entry in manifest.entries:
        make = _correct_prediction if entry.sample_id in correct else _wrong_prediction
        script[entry.sample_id] = make(bid, entry.ground_truth, manifest.class_count)
    return script
