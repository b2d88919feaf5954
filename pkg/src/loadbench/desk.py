"""Desk-scale suite generation: synthetic data sets plus a runnable config."""

from __future__ import annotations

import json
from pathlib import Path

from .datasets import make_synthetic_dataset
from .rules import CANONICAL_ORDER, Scenario

_DIRS = {
    "ImageClassification": "image_classification",
    "ObjectDetection": "object_detection",
    "Segmentation": "segmentation",
    "QuestionAnswering": "question_answering",
}


def make_desk_suite(
    out_dir: str | Path,
    n_samples: int = 16,
    *,
    clock: str = "virtual",
    latency_ms: float = 2.0,
    offline_parallelism: int = 4,
    min_query_count: int = 32,
    min_duration_ms: int = 50,
    performance_sample_count: int = 8,
    seed: int = 42,
    cooldown_ms: int = 0,
    correct_fraction: float = 1.0,
    full_rules: bool = False,
) -> Path:
    """Write the five canonical benchmarks over synthetic data; return the config path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifests = {}
    for i, name in enumerate(_DIRS):
        manifests[name] = make_synthetic_dataset(name, n_samples, out_dir / "data" / _DIRS[name], seed=seed + i)
    benchmarks = []
    for bid, scenario in CANONICAL_ORDER:
        offline = scenario is Scenario.OFFLINE
        benchmarks.append(
            {
                "benchmark_id": bid.value,
                "scenario": scenario.value,
                "dataset_manifest_path": str(manifests[bid.value].relative_to(out_dir)),
                "backend": {
                    "type": "synthetic",
                    "latency": {"constant_ms": latency_ms},
                    "parallelism": offline_parallelism if offline else 1,
                    "accuracy_script": {"correct_fraction": correct_fraction},
                },
                "settings": {
                    "seed": seed,
                    "min_query_count": min_query_count * (4 if offline else 1),
                    "min_duration_ms": 0 if offline else min_duration_ms,
                    "performance_sample_count": min(performance_sample_count, n_samples),
                    "cooldown_ms": cooldown_ms,
                },
            }
        )
    config = {"schema_version": 1, "full_rules": full_rules, "clock": clock, "benchmarks": benchmarks}
    path = out_dir / "suite.json"
    path.write_text(json.dumps(config, indent=2))
    return path
