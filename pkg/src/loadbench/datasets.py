"""Manifest-driven data sets and the per-task preprocessing pipelines.

Images are ``(height, width, channels)`` float arrays. On disk they are raw
tensor blobs: three little-endian uint32 (h, w, c) followed by h*w*c
little-endian float32 values in row-major order.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .metrics import DetectionBox, SegMask
from .rules import (
    BenchmarkId,
    CANONICAL_INPUT_SHAPE,
    MAX_SEQUENCE_LENGTH,
    SEGMENTATION_CLASSES,
    parse_benchmark_id,
)

MANIFEST_SCHEMA_VERSION = 1
_BLOB_HEADER = struct.Struct("<III")

# classification: shorter side to 256, then the central 224x224 window
CLASSIFICATION_RESIZE_SHORT = 256


class ManifestError(ValueError):
    pass


def read_tensor_blob(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _BLOB_HEADER.size:
        raise ManifestError(f"{path}: truncated tensor header")
    h, w, c = _BLOB_HEADER.unpack_from(raw)
    expected = _BLOB_HEADER.size + 4 * h * w * c
    if len(raw) != expected:
        raise ManifestError(f"{path}: expected {expected} bytes for {h}x{w}x{c}, got {len(raw)}")
    data = np.frombuffer(raw, dtype="<f4", offset=_BLOB_HEADER.size)
    return data.reshape(h, w, c).astype(np.float32)


def write_tensor_blob(path: str | Path, tensor: np.ndarray) -> None:
    arr = np.asarray(tensor, dtype="<f4")
    if arr.ndim == 2:
        arr = arr[:, :, None]
    h, w, c = arr.shape
    Path(path).write_bytes(_BLOB_HEADER.pack(h, w, c) + np.ascontiguousarray(arr).tobytes())


def _check_image(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 3 or img.size == 0:
        raise ValueError(f"expected a non-empty (h, w, c) image, got shape {img.shape}")
    return img


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with half-pixel centers and edge clamping."""
    img = _check_image(img).astype(np.float64)
    if out_h < 1 or out_w < 1:
        raise ValueError(f"output size must be positive, got {out_h}x{out_w}")
    in_h, in_w = img.shape[:2]

    def axis(n_in, n_out):
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0.0, n_in - 1)
        i0 = np.floor(src).astype(np.intp)
        i1 = np.minimum(i0 + 1, n_in - 1)
        return i0, i1, src - i0

    y0, y1, wy = axis(in_h, out_h)
    x0, x1, wx = axis(in_w, out_w)
    wx = wx[None, :, None]
    top = img[y0][:, x0] * (1 - wx) + img[y0][:, x1] * wx
    bottom = img[y1][:, x0] * (1 - wx) + img[y1][:, x1] * wx
    wy = wy[:, None, None]
    return top * (1 - wy) + bottom * wy


def center_crop(img: np.ndarray, crop_h: int, crop_w: int) -> np.ndarray:
    """Central window; an odd margin leaves the extra pixel at the bottom/right."""
    img = _check_image(img)
    h, w = img.shape[:2]
    if crop_h > h or crop_w > w or crop_h < 1 or crop_w < 1:
        raise ValueError(f"cannot crop {crop_h}x{crop_w} from {h}x{w}")
    top = (h - crop_h) // 2
    left = (w - crop_w) // 2
    return img[top : top + crop_h, left : left + crop_w]


def normalize(img: np.ndarray, mean: Sequence[float], std: Sequence[float]) -> np.ndarray:
    img = _check_image(img)
    mean = np.asarray(mean, dtype=np.float64)
    std = np.asarray(std, dtype=np.float64)
    if np.any(std == 0):
        raise ValueError("std must be non-zero in every channel")
    return (img - mean) / std


def resize_shorter_side(img: np.ndarray, short: int) -> np.ndarray:
    h, w = img.shape[:2]
    if h <= w:
        return resize_bilinear(img, short, max(short, int(short * w / h)))
    return resize_bilinear(img, max(short, int(short * h / w)), short)


@dataclass(frozen=True)
class PreprocessingSpec:
    benchmark_id: BenchmarkId
    mean: tuple[float, ...] = (0.0, 0.0, 0.0)
    std: tuple[float, ...] = (1.0, 1.0, 1.0)
    max_tokens: int = MAX_SEQUENCE_LENGTH


@dataclass(frozen=True)
class PreprocessedSample:
    benchmark_id: BenchmarkId
    tensor: np.ndarray | None = None
    token_ids: tuple[int, ...] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        if self.tensor is not None:
            return tuple(self.tensor.shape)
        return (len(self.token_ids),)


def preprocess_image(img: np.ndarray, spec: PreprocessingSpec) -> np.ndarray:
    bid = spec.benchmark_id
    img = _check_image(img)
    if img.shape[2] != 3:
        raise ValueError(f"{bid.value} expects 3-channel images, got {img.shape[2]}")
    out_h, out_w, _ = CANONICAL_INPUT_SHAPE[bid]
    if bid is BenchmarkId.IMAGE_CLASSIFICATION:
        img = center_crop(resize_shorter_side(img, CLASSIFICATION_RESIZE_SHORT), out_h, out_w)
    elif bid is BenchmarkId.OBJECT_DETECTION:
        img = resize_bilinear(img, out_h, out_w)
    elif bid is BenchmarkId.SEGMENTATION:
        img = center_crop(resize_shorter_side(img, out_h), out_h, out_w)
    else:
        raise ValueError(f"{bid.value} is not an image task")
    return normalize(img, spec.mean, spec.std).astype(np.float32)


@dataclass
class ManifestEntry:
    sample_id: int
    input_uri: str | None
    ground_truth: Any
    token_ids: tuple[int, ...] | None = None


@dataclass
class DatasetManifest:
    benchmark_id: BenchmarkId
    entries: list[ManifestEntry]
    class_count: int | None = None
    mean: tuple[float, ...] = (0.0, 0.0, 0.0)
    std: tuple[float, ...] = (1.0, 1.0, 1.0)
    root: Path = field(default_factory=Path)

    @property
    def sample_count(self) -> int:
        return len(self.entries)

    def resolve(self, uri: str) -> Path:
        p = Path(uri)
        return p if p.is_absolute() else self.root / p

    def preprocessing_spec(self) -> PreprocessingSpec:
        return PreprocessingSpec(self.benchmark_id, self.mean, self.std)


def _parse_ground_truth(bid: BenchmarkId, gt: Any, where: str, manifest_root: Path):
    if not isinstance(gt, dict):
        raise ManifestError(f"{where}: ground_truth must be an object")
    try:
        if bid is BenchmarkId.IMAGE_CLASSIFICATION:
            return int(gt["label"])
        if bid is BenchmarkId.OBJECT_DETECTION:
            return [DetectionBox.from_dict(b) for b in gt["boxes"]]
        if bid is BenchmarkId.SEGMENTATION:
            if "mask" in gt:
                return SegMask(gt["mask"])
            p = Path(gt["mask_uri"])
            blob = read_tensor_blob(p if p.is_absolute() else manifest_root / p)
            return SegMask(blob[:, :, 0].astype(np.int64))
        answers = gt["answers"]
        if not answers or not all(isinstance(a, str) for a in answers):
            raise ManifestError(f"{where}: answers must be a non-empty list of strings")
        return list(answers)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ManifestError):
            raise
        raise ManifestError(f"{where}: malformed ground truth for {bid.value}: {exc}") from exc


def parse_manifest(data: dict, root: str | Path = ".") -> DatasetManifest:
    root = Path(root)
    if data.get("schema_version", MANIFEST_SCHEMA_VERSION) != MANIFEST_SCHEMA_VERSION:
        raise ManifestError(f"unsupported manifest schema_version {data.get('schema_version')}")
    try:
        bid = parse_benchmark_id(data["benchmark_id"])
        samples = data["samples"]
    except KeyError as exc:
        raise ManifestError(f"manifest missing field {exc}") from None
    norm = data.get("normalization", {})
    entries = []
    for i, s in enumerate(samples):
        where = f"samples[{i}]"
        if s.get("sample_id") != i:
            raise ManifestError(f"{where}: sample_id must be {i} (ids are dense from 0)")
        token_ids = s.get("token_ids")
        if bid is BenchmarkId.QUESTION_ANSWERING:
            if token_ids is None and s.get("input_uri") is None:
                raise ManifestError(f"{where}: needs token_ids or input_uri")
        elif not s.get("input_uri"):
            raise ManifestError(f"{where}: missing input_uri")
        gt = _parse_ground_truth(bid, s.get("ground_truth"), where, root)
        entries.append(
            ManifestEntry(
                sample_id=i,
                input_uri=s.get("input_uri"),
                ground_truth=gt,
                token_ids=tuple(int(t) for t in token_ids) if token_ids is not None else None,
            )
        )
    class_count = data.get("class_count")
    if bid is BenchmarkId.SEGMENTATION:
        class_count = SEGMENTATION_CLASSES
    return DatasetManifest(
        benchmark_id=bid,
        entries=entries,
        class_count=class_count,
        mean=tuple(norm.get("mean", (0.0, 0.0, 0.0))),
        std=tuple(norm.get("std", (1.0, 1.0, 1.0))),
        root=root,
    )


def load_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: invalid JSON: {exc}") from exc
    return parse_manifest(data, root=path.parent)


def load_sample(
    manifest: DatasetManifest, index: int, spec: PreprocessingSpec | None = None
) -> PreprocessedSample:
    if not 0 <= index < manifest.sample_count:
        raise IndexError(f"sample {index} outside data set of {manifest.sample_count}")
    spec = spec or manifest.preprocessing_spec()
    entry = manifest.entries[index]
    bid = manifest.benchmark_id
    if bid is BenchmarkId.QUESTION_ANSWERING:
        tokens = entry.token_ids
        if tokens is None:
            path = manifest.resolve(entry.input_uri)
            tokens = tuple(int(t) for t in json.loads(path.read_text())["token_ids"])
        return PreprocessedSample(bid, token_ids=tuple(tokens[: spec.max_tokens]))
    path = manifest.resolve(entry.input_uri)
    if not path.exists():
        raise FileNotFoundError(f"sample {index}: input {path} not found")
    return PreprocessedSample(bid, tensor=preprocess_image(read_tensor_blob(path), spec))


class Dataset:
    """A manifest plus an in-memory cache of preprocessed samples."""

    def __init__(self, manifest: DatasetManifest, spec: PreprocessingSpec | None = None):
        self.manifest = manifest
        self.spec = spec or manifest.preprocessing_spec()
        self._cache: dict[int, PreprocessedSample] = {}

    @classmethod
    def from_path(cls, path: str | Path) -> "Dataset":
        return cls(load_manifest(path))

    @property
    def benchmark_id(self) -> BenchmarkId:
        return self.manifest.benchmark_id

    def __len__(self) -> int:
        return self.manifest.sample_count

    def load_samples(self, indices) -> None:
        for i in indices:
            if i not in self._cache:
                self._cache[i] = load_sample(self.manifest, i, self.spec)

    def unload_samples(self) -> None:
        self._cache.clear()

    def get(self, index: int) -> PreprocessedSample:
        sample = self._cache.get(index)
        if sample is None:
            sample = load_sample(self.manifest, index, self.spec)
        return sample

    def ground_truth(self, index: int):
        return self.manifest.entries[index].ground_truth


_WORDS = (
    "red blue green river mountain city paris seven eleven north south engine "
    "violin carbon oxygen tuesday winter harbor castle forest piano"
).split()


def make_synthetic_dataset(
    benchmark_id: BenchmarkId | str,
    n_samples: int,
    out_dir: str | Path,
    seed: int = 0,
    image_hw: tuple[int, int] = (24, 32),
    class_count: int = 10,
) -> Path:
    """Write a small random data set (blobs + manifest.json) and return the manifest path."""
    bid = parse_benchmark_id(benchmark_id)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    h, w = image_hw
    samples = []
    for i in range(n_samples):
        entry: dict[str, Any] = {"sample_id": i}
        if bid is BenchmarkId.QUESTION_ANSWERING:
            length = int(rng.integers(100, 500))
            entry["token_ids"] = rng.integers(1, 30522, size=length).tolist()
            n_refs = int(rng.integers(1, 4))
            entry["ground_truth"] = {
                "answers": [
                    " ".join(rng.choice(_WORDS, size=int(rng.integers(1, 4))).tolist())
                    for _ in range(n_refs)
                ]
            }
        else:
            uri = f"inputs/{i:05d}.bin"
            (out_dir / "inputs").mkdir(exist_ok=True)
            write_tensor_blob(out_dir / uri, rng.uniform(0, 255, size=(h, w, 3)))
            entry["input_uri"] = uri
            if bid is BenchmarkId.IMAGE_CLASSIFICATION:
                entry["ground_truth"] = {"label": int(rng.integers(0, class_count))}
            elif bid is BenchmarkId.OBJECT_DETECTION:
                boxes = []
                for _ in range(int(rng.integers(1, 4))):
                    x0, x1 = sorted(rng.uniform(0, w, size=2).tolist())
                    y0, y1 = sorted(rng.uniform(0, h, size=2).tolist())
                    boxes.append(
                        {"xmin": x0, "ymin": y0, "xmax": x1 + 1.0, "ymax": y1 + 1.0,
                         "class_id": int(rng.integers(1, 6))}
                    )
                entry["ground_truth"] = {"boxes": boxes}
            else:
                mask = np.empty((h, w), dtype=np.int64)
                labels = rng.integers(1, SEGMENTATION_CLASSES + 1, size=4)
                labels[0] = rng.integers(1, SEGMENTATION_CLASSES)  # keep one scored class
                mask[: h // 2, : w // 2] = labels[0]
                mask[: h // 2, w // 2 :] = labels[1]
                mask[h // 2 :, : w // 2] = labels[2]
                mask[h // 2 :, w // 2 :] = labels[3]
                mask_uri = f"masks/{i:05d}.bin"
                (out_dir / "masks").mkdir(exist_ok=True)
                write_tensor_blob(out_dir / mask_uri, mask.astype(np.float32))
                entry["ground_truth"] = {"mask_uri": mask_uri}
        samples.append(entry)
    manifest = {
        "schema_version": MANIFEST_SCHEMA_VERSION,
        "benchmark_id": bid.value,
        "class_count": SEGMENTATION_CLASSES if bid is BenchmarkId.SEGMENTATION else class_count,
        "normalization": {"mean": [127.5] * 3, "std": [127.5] * 3},
        "samples": samples,
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest))
    return path
