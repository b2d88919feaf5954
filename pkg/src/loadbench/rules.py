"""Benchmark identities, canonical shapes and the full-rules constants."""

from __future__ import annotations

from enum import Enum


class BenchmarkId(str, Enum):
    IMAGE_CLASSIFICATION = "ImageClassification"
    OBJECT_DETECTION = "ObjectDetection"
    SEGMENTATION = "Segmentation"
    QUESTION_ANSWERING = "QuestionAnswering"


class Scenario(str, Enum):
    SINGLE_STREAM = "SingleStream"
    OFFLINE = "Offline"


class Mode(str, Enum):
    ACCURACY = "Accuracy"
    PERFORMANCE = "Performance"


class UnsupportedModelError(ValueError):
    pass


def parse_benchmark_id(value) -> BenchmarkId:
    try:
        return BenchmarkId(value)
    except ValueError:
        raise UnsupportedModelError(f"unknown benchmark_id {value!r}") from None


# Preprocessing output shape each model consumes.
CANONICAL_INPUT_SHAPE: dict[BenchmarkId, tuple[int, ...]] = {
    BenchmarkId.IMAGE_CLASSIFICATION: (224, 224, 3),
    BenchmarkId.OBJECT_DETECTION: (300, 300, 3),
    BenchmarkId.SEGMENTATION: (512, 512, 3),
    BenchmarkId.QUESTION_ANSWERING: (384,),
}

MAX_SEQUENCE_LENGTH = 384
SEGMENTATION_CLASSES = 32  # labels 1..31 are scored, 32 is "everything else"

# The five benchmarks, in the order a suite must run them.
CANONICAL_ORDER: tuple[tuple[BenchmarkId, Scenario], ...] = (
    (BenchmarkId.IMAGE_CLASSIFICATION, Scenario.SINGLE_STREAM),
    (BenchmarkId.IMAGE_CLASSIFICATION, Scenario.OFFLINE),
    (BenchmarkId.OBJECT_DETECTION, Scenario.SINGLE_STREAM),
    (BenchmarkId.SEGMENTATION, Scenario.SINGLE_STREAM),
    (BenchmarkId.QUESTION_ANSWERING, Scenario.SINGLE_STREAM),
)

FULL_RULES_MIN_QUERY_COUNT = {
    Scenario.SINGLE_STREAM: 1024,
    Scenario.OFFLINE: 24576,
}
FULL_RULES_MIN_DURATION_MS = 60_000
MAX_COOLDOWN_MS = 300_000
DEFAULT_TIMEOUT_MS = 60_000
REPRODUCTION_TOLERANCE = 0.05


def benchmark_key(benchmark_id: BenchmarkId, scenario: Scenario) -> str:
    return f"{BenchmarkId(benchmark_id).value}/{Scenario(scenario).value}"


def canonical_rank(benchmark_id: BenchmarkId, scenario: Scenario) -> int | None:
    try:
        return CANONICAL_ORDER.index((BenchmarkId(benchmark_id), Scenario(scenario)))
    except ValueError:
        return None
