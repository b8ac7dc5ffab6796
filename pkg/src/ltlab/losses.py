"""Classification losses with analytic gradients.

Everything here is plain float64 numpy: stabilized softmax cross-entropy,
the group softmax family (plain, class-weighted, focal, hybrid) over the
extended logit layout, and the inverse-frequency class-weight chain.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .binning import GroupPartition
from .data import ClassCensus

log = logging.getLogger(__name__)

BAGS_MODES = ("plain", "weighted", "focal", "hybrid")

# probabilities are clamped here before entering a log
P_EPS = 1e-12

# groups whose instance-count upper bound is <= this get class weights in
# hybrid mode (the rare and common bins under the default bounds)
HYBRID_WEIGHTED_MAX = 100


@dataclass
class LossOutput:
    value: float
    grad_logits: np.ndarray


@dataclass
class ClassWeightTable:
    """Final per-category weights; within each group they sum to |G_n|."""

    final_weight: np.ndarray


def _as_logits(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ValueError("non-finite logits")
    return z


def stable_softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    """Softmax with max subtraction."""
    shifted = z - z.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_ce(logits, label: int) -> LossOutput:
    """Cross-entropy of a single logit vector: value and gradient."""
    z = _as_logits(logits)
    if z.ndim != 1:
        raise ValueError("softmax_ce expects a single logit vector")
    if not 0 <= label < z.shape[0]:
        raise ValueError(f"label {label} outside the {z.shape[0]}-way logit vector")
    p = stable_softmax(z)
    value = -np.log(max(p[label], P_EPS))
    grad = p.copy()
    grad[label] -= 1.0
    return LossOutput(value=float(value), grad_logits=grad)


def softmax_ce_batch(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Summed cross-entropy over a batch; gradient has the batch's shape."""
    z = _as_logits(logits)
    p = stable_softmax(z, axis=1)
    rows = np.arange(z.shape[0])
    value = -np.log(np.maximum(p[rows, labels], P_EPS)).sum()
    grad = p
    grad[rows, labels] -= 1.0
    return float(value), grad


def focal_term(p_t: float, gamma: float) -> float:
    """(1 - p_t)^gamma * (-log p_t); reduces to cross-entropy at gamma=0."""
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    if not 0.0 <= p_t <= 1.0:
        raise ValueError("p_t must be a probability")
    if p_t == 0.0:
        log.debug("focal_term clamped p_t=0 to %g", P_EPS)
        p_t = P_EPS
    return float((1.0 - p_t) ** gamma * -np.log(p_t))


def _focal_value_and_coef(p_t: np.ndarray, gamma: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-term focal values plus d(term)/d(logit) coefficient.

    The gradient of a focal term w.r.t. the group logits is
    coef * (one_hot - p) with coef = f'(p_t) * p_t.
    """
    p = np.clip(p_t, P_EPS, 1.0 - P_EPS)
    q = 1.0 - p
    value = q**gamma * -np.log(p)
    dterm_dp = gamma * q ** (gamma - 1.0) * np.log(p) - q**gamma / p
    return value, dterm_dp * p


def class_weights(census: ClassCensus, partition: GroupPartition) -> ClassWeightTable:
    """Inverse-frequency weights, normalized per group, rescaled by group size."""
    counts = np.asarray(census.counts, dtype=np.float64)
    final = np.ones(partition.num_categories, dtype=np.float64)
    for g in range(1, partition.num_groups + 1):
        members = partition.group_members[g]
        if members.size == 0:
            continue
        if np.any(counts[members] == 0):
            bad = members[counts[members] == 0][0]
            raise ValueError(f"category {int(bad)} has zero count; cannot invert frequency")
        w_init = 1.0 / counts[members]
        w_normalized = w_init / w_init.sum()
        final[members] = w_normalized * members.size
    return ClassWeightTable(final_weight=final)


def _resolve_mask(partition: GroupPartition, labels: np.ndarray, others_mask) -> np.ndarray:
    """Normalize a user mask to (batch, N+1) bool with G0 and own groups forced on."""
    b = labels.shape[0]
    n = partition.num_groups
    if others_mask is None:
        mask = np.zeros((b, n + 1), dtype=bool)
    else:
        mask = np.array(others_mask, dtype=bool)
        if mask.ndim == 1:
            mask = mask[None, :]
        if mask.shape != (b, n + 1):
            raise ValueError(f"others mask must have shape ({b}, {n + 1})")
        mask = mask.copy()
    mask[:, 0] = True
    foreground = labels < partition.num_categories
    own = partition.group_of[np.minimum(labels, partition.num_categories - 1)]
    rows = np.flatnonzero(foreground)
    mask[rows, own[rows]] = True
    return mask


def _group_weights_apply(mode: str, partition: GroupPartition, group: int) -> bool:
    if mode == "weighted":
        return True
    if mode == "hybrid":
        return partition.upper_bound(group) <= HYBRID_WEIGHTED_MAX
    return False


def bags_loss_batch(
    logits: np.ndarray,
    labels: np.ndarray,
    partition: GroupPartition,
    mode: str = "plain",
    weights: ClassWeightTable | None = None,
    gamma: float | None = None,
    others_mask: np.ndarray | None = None,
) -> tuple[float, np.ndarray]:
    """Summed group softmax loss over a batch, with gradient per logit.

    Each sample contributes a term in G0, in its own group, and in any group
    where the mask selects it as an "Others" example; all other logits get
    zero gradient. Labels equal to partition.background_label are treated as
    background (ground truth = the background slot in G0).
    """
    if mode not in BAGS_MODES:
        raise ValueError(f"unknown group softmax mode {mode!r}")
    if mode in ("weighted", "hybrid") and weights is None:
        raise ValueError(f"{mode} mode requires a class-weight table")
    use_focal = mode == "focal"
    if use_focal:
        if gamma is None:
            raise ValueError("focal mode requires gamma")
        if gamma == 0.0:
            use_focal = False  # exact cross-entropy path

    z = _as_logits(logits)
    if z.ndim == 1:
        z = z[None, :]
    labels = np.asarray(labels, dtype=np.int64)
    if z.shape[1] != partition.extended_size:
        raise ValueError(
            f"expected extended logits of size {partition.extended_size}, got {z.shape[1]}"
        )
    bad = (labels < 0) | (labels > partition.background_label)
    if bad.any():
        raise ValueError(f"label {int(labels[bad][0])} outside the partition's categories")

    mask = _resolve_mask(partition, labels, others_mask)
    total = 0.0
    grad = np.zeros_like(z)
    for g in range(partition.num_groups + 1):
        rows = np.flatnonzero(mask[:, g])
        if rows.size == 0:
            continue
        slots = partition.group_slots[g]
        sub = z[np.ix_(rows, slots)]
        p = stable_softmax(sub, axis=1)

        if g == 0:
            # two outputs: background (pos 0) and foreground/"Others" (pos 1)
            gt = np.where(labels[rows] == partition.background_label, 0, 1)
        else:
            members = partition.group_members[g]
            in_group = np.isin(labels[rows], members)
            gt = np.where(
                in_group,
                partition.within_pos[np.minimum(labels[rows], partition.num_categories - 1)],
                len(slots) - 1,
            )
        r = np.arange(rows.size)
        p_t = p[r, gt]

        if use_focal:
            values, coef = _focal_value_and_coef(p_t, gamma)
            total += values.sum()
            g_sub = -coef[:, None] * p
            g_sub[r, gt] += coef
        else:
            w = np.ones(rows.size)
            if g > 0 and _group_weights_apply(mode, partition, g):
                in_group = gt < len(slots) - 1
                w[in_group] = weights.final_weight[labels[rows][in_group]]
            total += (w * -np.log(np.maximum(p_t, P_EPS))).sum()
            g_sub = p
            g_sub[r, gt] -= 1.0
            g_sub *= w[:, None]
        grad[np.ix_(rows, slots)] += g_sub
    return float(total), grad


def bags_loss(
    logits,
    label: int,
    partition: GroupPartition,
    mode: str = "plain",
    weights: ClassWeightTable | None = None,
    gamma: float | None = None,
    others_mask=None,
) -> LossOutput:
    """Group softmax loss of one sample; others_mask is a (N+1,) group selector."""
    value, grad = bags_loss_batch(
        np.asarray(logits, dtype=np.float64)[None, :],
        np.array([label], dtype=np.int64),
        partition,
        mode=mode,
        weights=weights,
        gamma=gamma,
        others_mask=None if others_mask is None else np.asarray(others_mask, dtype=bool)[None, :],
    )
    return LossOutput(value=value, grad_logits=grad[0])
