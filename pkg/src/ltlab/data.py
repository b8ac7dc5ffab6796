"""Synthetic long-tailed feature datasets and file ingestion.

Features are stored as float32 so the binary on-disk format round-trips
bit-exactly; numerical code upcasts to float64 where it matters.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DatasetFormatError

# Instance-count boundaries shared by the census tags and the default group
# bounds: rare <= 10 < common <= 100 < frequent.
RARE_MAX = 10
COMMON_MAX = 100
DEFAULT_CENSUS_THRESHOLDS = (RARE_MAX, COMMON_MAX)

# Generator internals: classes with more instances than this get wide "head"
# clusters, everything else gets tight "tail" clusters; cluster centers are
# spread with std _CENTER_SPREAD * head_sigma around a shared positive mean
# of norm _CENTER_OFFSET * head_sigma (deep post-ReLU features are far from
# the origin, which is what lets classifier weight norms carry prior
# information); nested tail centers sit at distance <= _NEST_DEPTH *
# head_sigma from their host center.
_HEAD_COUNT_MIN = COMMON_MAX
_CENTER_SPREAD = 1.0
_CENTER_OFFSET = 8.0
_NEST_DEPTH_MIN = 0.5
_NEST_DEPTH_MAX = 1.0

DEFAULT_SAMPLE_CAP = 1_000_000

_BINARY_MAGIC = b"LTFV"
_BINARY_VERSION = 1


@dataclass(frozen=True)
class GeneratorConfig:
    """Knobs for the synthetic long-tailed benchmark generator.

    Counts follow a clamped power law in the class index; tail clusters are
    tighter than head clusters and a configurable fraction of tail centers is
    planted inside head clusters.
    """

    num_categories: int = 60
    feature_dim: int = 32
    zipf_exponent: float = 1.5
    max_count: int = 2000
    min_count: int = 5
    head_sigma: float = 1.0
    tail_sigma: float = 0.5
    nesting_fraction: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.num_categories < 1:
            raise ConfigError("num_categories must be >= 1")
        if self.feature_dim < 1:
            raise ConfigError("feature_dim must be >= 1")
        if self.zipf_exponent < 0:
            raise ConfigError("zipf_exponent must be >= 0")
        if self.min_count < 1:
            raise ConfigError("min_count must be >= 1")
        if self.max_count < self.min_count:
            raise ConfigError("max_count must be >= min_count")
        if self.head_sigma <= 0 or self.tail_sigma <= 0:
            raise ConfigError("head_sigma and tail_sigma must be positive")
        if self.tail_sigma > self.head_sigma:
            raise ConfigError("tail_sigma must be <= head_sigma")
        if not 0.0 <= self.nesting_fraction <= 1.0:
            raise ConfigError("nesting_fraction must be in [0, 1]")


@dataclass
class Dataset:
    """Labeled feature vectors: features (n, d) float32, labels (n,) in [0, C)."""

    features: np.ndarray
    labels: np.ndarray
    num_categories: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise ValueError("features must be a 2-D array")
        n, d = self.features.shape
        if n < 1 or d < 1:
            raise ValueError("dataset needs at least one sample and one dimension")
        if self.labels.shape != (n,):
            raise ValueError("labels must be one id per sample")
        if self.num_categories < 1:
            raise ValueError("num_categories must be >= 1")
        if self.labels.min() < 0 or self.labels.max() >= self.num_categories:
            raise ValueError("labels must lie in [0, num_categories)")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass
class ClassCensus:
    """Per-category instance counts plus rare/common/frequent tags."""

    counts: np.ndarray
    group_tags: list[str] = field(default_factory=list)
    thresholds: tuple[int, int] = DEFAULT_CENSUS_THRESHOLDS

    @property
    def num_categories(self) -> int:
        return len(self.counts)


def zipf_counts(config: GeneratorConfig) -> np.ndarray:
    """Per-class counts: round(max_count * (k+1)^-exponent) clamped to [min, max]."""
    ranks = np.arange(1, config.num_categories + 1, dtype=np.float64)
    raw = config.max_count * ranks ** (-config.zipf_exponent)
    counts = np.clip(np.rint(raw), config.min_count, config.max_count)
    return counts.astype(np.int64)


def generate_synthetic(config: GeneratorConfig, sample_cap: int = DEFAULT_SAMPLE_CAP) -> Dataset:
    """Generate a long-tailed dataset of Gaussian class clusters.

    Head classes (count > 100, or the single most frequent class if none
    qualify) get clusters of std head_sigma; tail classes get std tail_sigma,
    and a nesting_fraction of their centers is placed within one head_sigma
    of a uniformly chosen head center. Deterministic given the seed.
    """
    counts = zipf_counts(config)
    total = int(counts.sum())
    if total > sample_cap:
        raise ConfigError(
            f"config would generate {total} samples, above the cap of {sample_cap}"
        )

    c, d = config.num_categories, config.feature_dim
    rng = np.random.default_rng(config.seed)

    head = counts > _HEAD_COUNT_MIN
    if not head.any():
        head[0] = True

    spread = _CENTER_SPREAD * config.head_sigma
    offset = _CENTER_OFFSET * config.head_sigma * np.ones(d) / np.sqrt(d)
    centers = np.zeros((c, d))
    head_ids = np.flatnonzero(head)
    centers[head_ids] = offset + rng.normal(0.0, spread, size=(len(head_ids), d))
    # the rarest tail classes are the nested ones, so a nested class is
    # always dwarfed by its host rather than fighting a near-peer
    tail_ids = np.flatnonzero(~head)
    order = np.argsort(counts[tail_ids], kind="stable")
    num_nested = int(round(config.nesting_fraction * tail_ids.size))
    nested = set(tail_ids[order[:num_nested]].tolist())
    for k in tail_ids:
        if k in nested:
            host = centers[head_ids[rng.integers(len(head_ids))]]
            direction = rng.normal(size=d)
            direction /= np.linalg.norm(direction)
            depth = _NEST_DEPTH_MIN + (_NEST_DEPTH_MAX - _NEST_DEPTH_MIN) * rng.random()
            centers[k] = host + depth * config.head_sigma * direction
        else:
            centers[k] = offset + rng.normal(0.0, spread, size=d)

    blocks = []
    labels = np.repeat(np.arange(c, dtype=np.int64), counts)
    for k in range(c):
        sigma = config.head_sigma if head[k] else config.tail_sigma
        blocks.append(centers[k] + sigma * rng.standard_normal((counts[k], d)))
    features = np.concatenate(blocks, axis=0).astype(np.float32)
    return Dataset(features=features, labels=labels, num_categories=c)


def census(ds: Dataset, thresholds: tuple[int, int] = DEFAULT_CENSUS_THRESHOLDS) -> ClassCensus:
    """Count instances per category and tag each as rare/common/frequent."""
    t_rare, t_common = int(thresholds[0]), int(thresholds[1])
    if t_rare >= t_common:
        raise ConfigError("census thresholds must satisfy t_rare < t_common")
    counts = np.bincount(ds.labels, minlength=ds.num_categories).astype(np.int64)
    tags = [tag_for_count(int(cnt), (t_rare, t_common)) for cnt in counts]
    return ClassCensus(counts=counts, group_tags=tags, thresholds=(t_rare, t_common))


def tag_for_count(count: int, thresholds: tuple[int, int] = DEFAULT_CENSUS_THRESHOLDS) -> str:
    t_rare, t_common = thresholds
    if count <= t_rare:
        return "rare"
    if count <= t_common:
        return "common"
    return "frequent"


def save_dataset(ds: Dataset, path, format: str = "binary") -> None:
    if format == "binary":
        _save_binary(ds, path)
    elif format == "csv":
        _save_csv(ds, path)
    else:
        raise ConfigError(f"unknown dataset format {format!r}")


def load_dataset(path, format: str = "binary") -> Dataset:
    if format == "binary":
        return _load_binary(path)
    if format == "csv":
        return _load_csv(path)
    raise ConfigError(f"unknown dataset format {format!r}")


def _record_dtype(d: int) -> np.dtype:
    return np.dtype([("label", "<u4"), ("features", "<f4", (d,))])


def _save_binary(ds: Dataset, path) -> None:
    header = _BINARY_MAGIC + struct.pack(
        "<IIII", _BINARY_VERSION, ds.n, ds.dim, ds.num_categories
    )
    records = np.empty(ds.n, dtype=_record_dtype(ds.dim))
    records["label"] = ds.labels.astype(np.uint32)
    records["features"] = ds.features
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(records.tobytes())


def _load_binary(path) -> Dataset:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 20:
        raise DatasetFormatError(f"{path}: malformed header (file too short, {len(blob)} bytes)")
    if blob[:4] != _BINARY_MAGIC:
        raise DatasetFormatError(f"{path}: malformed header (bad magic {blob[:4]!r})")
    version, n, d, c = struct.unpack("<IIII", blob[4:20])
    if version != _BINARY_VERSION:
        raise DatasetFormatError(f"{path}: unsupported version {version}")
    dtype = _record_dtype(d)
    expected = 20 + n * dtype.itemsize
    if len(blob) != expected:
        raise DatasetFormatError(
            f"{path}: expected {expected} bytes for {n} records, found {len(blob)}"
        )
    records = np.frombuffer(blob, dtype=dtype, count=n, offset=20)
    labels = records["label"].astype(np.int64)
    bad = np.flatnonzero(labels >= c)
    if bad.size:
        i = int(bad[0])
        raise DatasetFormatError(
            f"{path}: label {int(labels[i])} >= C={c} in record {i} (offset {20 + i * dtype.itemsize})"
        )
    return Dataset(features=records["features"].copy(), labels=labels, num_categories=c)


def _save_csv(ds: Dataset, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"{ds.n},{ds.dim},{ds.num_categories}\n")
        for label, row in zip(ds.labels, ds.features):
            # %.9g preserves float32 values exactly
            values = ",".join(f"{float(v):.9g}" for v in row)
            fh.write(f"{int(label)},{values}\n")


def _load_csv(path) -> Dataset:
    with open(path, "r") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DatasetFormatError(f"{path}: malformed header (empty file)")
    header = lines[0].split(",")
    try:
        n, d, c = (int(x) for x in header)
    except ValueError:
        raise DatasetFormatError(f"{path}: malformed header (line 1: {lines[0]!r})") from None
    if len(header) != 3 or n < 1 or d < 1 or c < 1:
        raise DatasetFormatError(f"{path}: malformed header (line 1: {lines[0]!r})")
    if len(lines) - 1 != n:
        raise DatasetFormatError(f"{path}: header declares n={n} but file has {len(lines) - 1} rows")
    features = np.zeros((n, d), dtype=np.float32)
    labels = np.zeros(n, dtype=np.int64)
    for i, line in enumerate(lines[1:]):
        lineno = i + 2
        parts = line.split(",")
        if len(parts) != d + 1:
            raise DatasetFormatError(
                f"{path}: line {lineno}: expected {d + 1} fields, found {len(parts)}"
            )
        try:
            label = int(parts[0])
            row = [float(x) for x in parts[1:]]
        except ValueError:
            raise DatasetFormatError(f"{path}: line {lineno}: unparseable value") from None
        if label < 0 or label >= c:
            raise DatasetFormatError(f"{path}: line {lineno}: label {label} outside [0, {c})")
        labels[i] = label
        features[i] = row
    return Dataset(features=features, labels=labels, num_categories=c)
