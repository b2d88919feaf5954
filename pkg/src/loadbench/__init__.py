"""Scenario-driven inference load generation, accuracy gating and log auditing."""

from .audit import AuditReport, LogRecord, check_submission, parse_log, verify_reproduction, write_log
from .backends import (
    Backend,
    DummyBackend,
    LatencyModel,
    ModelDescriptor,
    Prediction,
    SyntheticBackend,
    SyntheticBackendConfig,
    create_backend,
    register_backend,
)
from .clock import RealClock, VirtualClock
from .datasets import Dataset, load_manifest, load_sample
from .loadgen import (
    Benchmark,
    RunResult,
    TestSettings,
    percentile,
    run_offline,
    run_single_stream,
    run_suite,
)
from .metrics import (
    QUALITY_TARGETS,
    QualityTarget,
    box_iou,
    evaluate_quality,
    mean_average_precision,
    miou_filtered,
    squad_f1,
    top1_accuracy,
)
from .rng import select_samples
from .rules import BenchmarkId, Mode, Scenario

__version__ = "0.1.0"
