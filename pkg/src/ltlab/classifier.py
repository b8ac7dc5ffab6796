"""Linear classification head: forward pass, tau normalization of the
per-category weight rows, weight-norm diagnostics, and binary head IO."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .binning import GroupPartition
from .errors import DatasetFormatError

_HEAD_MAGIC = b"LTHD"
_HEAD_VERSION = 1
_LAYOUT_TAGS = {"plain": 0, "bags": 1}
_TAG_LAYOUTS = {v: k for k, v in _LAYOUT_TAGS.items()}
_BIAS_FLAG = 1 << 8


@dataclass
class ClassifierHead:
    """Weight matrix over the output space.

    Plain layout: one row per category. Bags layout: rows follow a
    GroupPartition's extended layout, and output_map points each category at
    its row.
    """

    weights: np.ndarray
    layout: str = "plain"
    output_map: np.ndarray | None = None
    use_bias: bool = False
    bias: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.ndim != 2:
            raise ValueError("weights must be a (rows, d) matrix")
        if self.layout not in _LAYOUT_TAGS:
            raise ValueError(f"unknown layout {self.layout!r}")
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("non-finite weights")
        if self.layout == "bags" and self.output_map is None:
            raise ValueError("bags layout needs the partition's output map")
        if self.output_map is not None:
            self.output_map = np.asarray(self.output_map, dtype=np.int64)
        if self.use_bias:
            if self.bias is None:
                self.bias = np.zeros(self.weights.shape[0])
            self.bias = np.asarray(self.bias, dtype=np.float64)
        elif self.bias is None:
            pass

    @property
    def rows(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    @property
    def num_categories(self) -> int:
        return self.rows if self.layout == "plain" else len(self.output_map)

    def category_rows(self) -> np.ndarray:
        """Row indices of the per-category weights, in category order."""
        if self.layout == "plain":
            return np.arange(self.rows)
        return self.output_map

    def copy(self) -> "ClassifierHead":
        return ClassifierHead(
            weights=self.weights.copy(),
            layout=self.layout,
            output_map=None if self.output_map is None else self.output_map.copy(),
            use_bias=self.use_bias,
            bias=None if self.bias is None else self.bias.copy(),
        )


def new_head(
    rows: int,
    dim: int,
    init_scale: float = 0.01,
    seed: int = 0,
    layout: str = "plain",
    output_map: np.ndarray | None = None,
    use_bias: bool = False,
) -> ClassifierHead:
    """Gaussian-initialized head; init_scale=0 gives an all-zero head."""
    rng = np.random.default_rng(seed)
    w = init_scale * rng.standard_normal((rows, dim))
    return ClassifierHead(weights=w, layout=layout, output_map=output_map, use_bias=use_bias)


def head_for_partition(partition: GroupPartition, dim: int, init_scale: float = 0.01, seed: int = 0) -> ClassifierHead:
    return new_head(
        rows=partition.extended_size,
        dim=dim,
        init_scale=init_scale,
        seed=seed,
        layout="bags",
        output_map=partition.output_map,
    )


def forward(head: ClassifierHead, features) -> np.ndarray:
    """Logits = W x (+ bias); accepts one vector or a batch."""
    x = np.asarray(features, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[1] != head.dim:
        raise ValueError(f"feature dim {x.shape[1]} does not match head dim {head.dim}")
    z = x @ head.weights.T
    if head.use_bias:
        z = z + head.bias
    return z[0] if single else z


def tau_normalize(head: ClassifierHead, tau: float) -> ClassifierHead:
    """Divide each category weight row by its Euclidean norm to the power tau.

    tau=0 returns an identical copy, tau=1 gives unit rows. Background and
    "Others" rows of a bags head are left alone; the input head is not touched.
    """
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must be in [0, 1]")
    out = head.copy()
    if tau == 0.0:
        return out
    rows = head.category_rows()
    norms = np.linalg.norm(head.weights[rows], axis=1)
    if np.any(norms == 0.0):
        bad = int(np.flatnonzero(norms == 0)[0])
        raise ValueError(f"category {bad} has a zero weight row; tau > 0 undefined")
    out.weights[rows] = head.weights[rows] / (norms**tau)[:, None]
    return out


def weight_norms(head: ClassifierHead) -> np.ndarray:
    """Euclidean norm of each category's weight row, ordered by category id."""
    return np.linalg.norm(head.weights[head.category_rows()], axis=1)


def save_head(head: ClassifierHead, path) -> None:
    tag = _LAYOUT_TAGS[head.layout]
    if head.use_bias:
        tag |= _BIAS_FLAG
    with open(path, "wb") as fh:
        fh.write(_HEAD_MAGIC + struct.pack("<IIII", _HEAD_VERSION, head.rows, head.dim, tag))
        fh.write(head.weights.astype("<f4").tobytes())
        if head.use_bias:
            fh.write(head.bias.astype("<f4").tobytes())


def load_head(path, partition: GroupPartition | None = None) -> ClassifierHead:
    """Load a head; a bags-layout head needs its partition to map categories."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 20 or blob[:4] != _HEAD_MAGIC:
        raise DatasetFormatError(f"{path}: malformed head header")
    version, rows, dim, tag = struct.unpack("<IIII", blob[4:20])
    if version != _HEAD_VERSION:
        raise DatasetFormatError(f"{path}: unsupported head version {version}")
    use_bias = bool(tag & _BIAS_FLAG)
    layout = _TAG_LAYOUTS.get(tag & 0xFF)
    if layout is None:
        raise DatasetFormatError(f"{path}: unknown layout tag {tag}")
    expected = 20 + rows * dim * 4 + (rows * 4 if use_bias else 0)
    if len(blob) != expected:
        raise DatasetFormatError(f"{path}: expected {expected} bytes, found {len(blob)}")
    w = np.frombuffer(blob, dtype="<f4", count=rows * dim, offset=20).reshape(rows, dim)
    bias = None
    if use_bias:
        bias = np.frombuffer(blob, dtype="<f4", count=rows, offset=20 + rows * dim * 4).astype(
            np.float64
        )
    output_map = None
    if layout == "bags":
        if partition is None:
            raise ValueError(f"{path}: bags head needs its partition to be usable")
        output_map = partition.output_map
    return ClassifierHead(
        weights=w.astype(np.float64),
        layout=layout,
        output_map=output_map,
        use_bias=use_bias,
        bias=bias,
    )
