"""Metric-learning losses: center loss with a running center bank, a
cosine-margin loss over normalized features and weights, and a softmax
cross-entropy whose scores are negative squared Euclidean distances.

All gradients are analytic; centers are constants inside a step and move
only through the incremental update rule.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import DatasetFormatError
from .losses import LossOutput, P_EPS, softmax_ce_batch, stable_softmax

_BANK_MAGIC = b"LTCB"
_BANK_VERSION = 1


@dataclass
class CenterBank:
    """Running per-class feature centers; uninitialized rows are excluded
    from nearest-center scoring."""

    centers: np.ndarray
    initialized: np.ndarray

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=np.float64)
        self.initialized = np.asarray(self.initialized, dtype=bool)
        if self.centers.ndim != 2:
            raise ValueError("centers must be a (C, d) matrix")
        if self.initialized.shape != (self.centers.shape[0],):
            raise ValueError("need one initialized flag per class")

    @classmethod
    def empty(cls, num_classes: int, dim: int) -> "CenterBank":
        return cls(
            centers=np.zeros((num_classes, dim)),
            initialized=np.zeros(num_classes, dtype=bool),
        )

    @property
    def num_classes(self) -> int:
        return self.centers.shape[0]

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    def copy(self) -> "CenterBank":
        return CenterBank(centers=self.centers.copy(), initialized=self.initialized.copy())

    def initialize_missing(self, features: np.ndarray, labels: np.ndarray) -> None:
        """Set any uninitialized center present in the batch to its batch mean."""
        for j in np.unique(labels):
            if not self.initialized[j]:
                self.centers[j] = features[labels == j].mean(axis=0)
                self.initialized[j] = True


def center_loss(features, labels, bank: CenterBank) -> tuple[float, np.ndarray]:
    """0.5 * sum_i ||x_i - c_{y_i}||^2 and its feature gradient (x_i - c_{y_i})."""
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if x.ndim == 1:
        x = x[None, :]
    if not bank.initialized[y].all():
        missing = int(y[~bank.initialized[y]][0])
        raise ValueError(f"center for class {missing} is uninitialized")
    diff = x - bank.centers[y]
    value = 0.5 * float((diff**2).sum())
    return value, diff


def update_centers(bank: CenterBank, features, labels, alpha: float) -> CenterBank:
    """One incremental center update from a mini-batch; returns a new bank.

    For each class j in the batch, delta_j = sum(c_j - x_i) / (1 + n_j) and
    c_j <- c_j - alpha * delta_j. A class seen for the first time has its
    center initialized to the batch mean instead. Absent classes are untouched.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must be in [0, 1]")
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if x.ndim == 1:
        x = x[None, :]
    out = bank.copy()
    for j in np.unique(y):
        xs = x[y == j]
        if not out.initialized[j]:
            out.centers[j] = xs.mean(axis=0)
            out.initialized[j] = True
        else:
            delta = (out.centers[j] - xs).sum(axis=0) / (1.0 + xs.shape[0])
            out.centers[j] = out.centers[j] - alpha * delta
    return out


@dataclass
class CombinedLossOutput(LossOutput):
    grad_features: np.ndarray


def combined_loss(logits, features, labels, bank: CenterBank, lam: float) -> CombinedLossOutput:
    """Softmax cross-entropy plus lam * center loss over a batch."""
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim == 1:
        z = z[None, :]
    y = np.asarray(labels, dtype=np.int64)
    ce_value, ce_grad = softmax_ce_batch(z, y)
    c_value, c_grad = center_loss(features, y, bank)
    return CombinedLossOutput(
        value=ce_value + lam * c_value,
        grad_logits=ce_grad,
        grad_features=lam * c_grad,
    )


def lmcl_loss(
    features, weight_rows, label: int, s: float = 30.0, m: float = 0.35
) -> tuple[float, np.ndarray, np.ndarray]:
    """Cosine-margin softmax loss of one sample.

    Feature and weight rows are L2-normalized, the margin m is subtracted
    from the true-class cosine, everything is scaled by s, and standard
    cross-entropy is applied. Returns (value, grad_feature, grad_weights).
    """
    if s <= 0:
        raise ValueError("scale s must be positive")
    if m < 0:
        raise ValueError("margin m must be >= 0")
    x = np.asarray(features, dtype=np.float64)
    w = np.asarray(weight_rows, dtype=np.float64)
    if x.ndim != 1 or w.ndim != 2 or w.shape[1] != x.shape[0]:
        raise ValueError("expected one feature vector and matching weight rows")
    xn = np.linalg.norm(x)
    wn = np.linalg.norm(w, axis=1)
    if xn == 0.0:
        raise ValueError("zero-norm feature")
    if np.any(wn == 0.0):
        raise ValueError(f"zero-norm weight row {int(np.flatnonzero(wn == 0)[0])}")

    x_hat = x / xn
    w_hat = w / wn[:, None]
    cos = w_hat @ x_hat
    scores = s * cos
    scores[label] = s * (cos[label] - m)
    p = stable_softmax(scores)
    value = -np.log(max(p[label], P_EPS))

    dscore = p.copy()
    dscore[label] -= 1.0
    dcos = s * dscore
    grad_x = (w_hat.T @ dcos - (dcos @ cos) * x_hat) / xn
    grad_w = (dcos[:, None] * (x_hat[None, :] - cos[:, None] * w_hat)) / wn[:, None]
    return float(value), grad_x, grad_w


def ece_loss(
    features, weight_rows, label: int, t: float = 1.0
) -> tuple[float, np.ndarray, np.ndarray]:
    """Cross-entropy over scores -||x - w_j||^2 / t for one sample."""
    if t <= 0:
        raise ValueError("temperature t must be positive")
    x = np.asarray(features, dtype=np.float64)
    w = np.asarray(weight_rows, dtype=np.float64)
    if x.ndim != 1 or w.ndim != 2 or w.shape[1] != x.shape[0]:
        raise ValueError("expected one feature vector and matching weight rows")
    diff = x[None, :] - w
    scores = -(diff**2).sum(axis=1) / t
    p = stable_softmax(scores)
    value = -np.log(max(p[label], P_EPS))

    dscore = p.copy()
    dscore[label] -= 1.0
    grad_x = (-2.0 / t) * (dscore @ diff)
    grad_w = (2.0 / t) * dscore[:, None] * diff
    return float(value), grad_x, grad_w


def save_center_bank(bank: CenterBank, path) -> None:
    header = _BANK_MAGIC + struct.pack("<III", _BANK_VERSION, bank.num_classes, bank.dim)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(bank.centers.astype("<f4").tobytes())
        fh.write(bank.initialized.astype(np.uint8).tobytes())


def load_center_bank(path) -> CenterBank:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 16 or blob[:4] != _BANK_MAGIC:
        raise DatasetFormatError(f"{path}: malformed center bank header")
    version, c, d = struct.unpack("<III", blob[4:16])
    if version != _BANK_VERSION:
        raise DatasetFormatError(f"{path}: unsupported center bank version {version}")
    expected = 16 + c * d * 4 + c
    if len(blob) != expected:
        raise DatasetFormatError(f"{path}: expected {expected} bytes, found {len(blob)}")
    centers = np.frombuffer(blob, dtype="<f4", count=c * d, offset=16).reshape(c, d)
    flags = np.frombuffer(blob, dtype=np.uint8, count=c, offset=16 + c * d * 4)
    return CenterBank(centers=centers.astype(np.float64), initialized=flags.astype(bool))
