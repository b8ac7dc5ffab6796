"""Turn trained heads or center banks into per-class scores.

Three routes: plain softmax over C logits, group-wise softmax merged with
the background group's foreground probability, and nearest-center scoring
(softmax over negative distances to initialized centers).
"""

from __future__ import annotations

import csv

import numpy as np

from .binning import GroupPartition
from .classifier import ClassifierHead, forward
from .losses import stable_softmax
from .metric import CenterBank


def predict_softmax(head: ClassifierHead, features) -> np.ndarray:
    """(n, C) softmax probabilities from a plain-layout head."""
    if head.layout != "plain":
        raise ValueError("predict_softmax needs a plain-layout head")
    z = forward(head, features)
    if z.ndim == 1:
        z = z[None, :]
    return stable_softmax(z, axis=1)


def predict_bags(head: ClassifierHead, partition: GroupPartition, features) -> np.ndarray:
    """(n, C) calibrated category scores from a bags-layout head.

    Within each foreground group the categories plus the "Others" slot get a
    softmax; each category score is then multiplied by the foreground
    probability taken from G0.
    """
    if head.layout != "bags":
        raise ValueError("predict_bags needs a bags-layout head")
    z = forward(head, features)
    if z.ndim == 1:
        z = z[None, :]
    if z.shape[1] != partition.extended_size:
        raise ValueError("head and partition disagree on the extended logit size")

    p0 = stable_softmax(z[:, partition.group_slots[0]], axis=1)
    p_fg = p0[:, 1]
    scores = np.zeros((z.shape[0], partition.num_categories))
    for g in range(1, partition.num_groups + 1):
        members = partition.group_members[g]
        if members.size == 0:
            continue
        p = stable_softmax(z[:, partition.group_slots[g]], axis=1)
        scores[:, members] = p[:, : members.size] * p_fg[:, None]
    return scores


def predict_knn(bank: CenterBank, features, squared: bool = False) -> np.ndarray:
    """(n, C) probabilities from softmax over negative center distances.

    Uninitialized classes get probability zero; the remaining entries sum
    to one. squared=True scores by negative squared distance instead.
    """
    live = np.flatnonzero(bank.initialized)
    if live.size == 0:
        raise ValueError("no initialized centers")
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    diff = x[:, None, :] - bank.centers[live][None, :, :]
    d2 = (diff**2).sum(axis=2)
    scores = -d2 if squared else -np.sqrt(d2)
    probs = np.zeros((x.shape[0], bank.num_classes))
    probs[:, live] = stable_softmax(scores, axis=1)
    return probs


def predicted_labels(scores: np.ndarray) -> np.ndarray:
    return np.asarray(scores).argmax(axis=1)


def write_predictions_csv(path, scores: np.ndarray, true_labels) -> None:
    """Batch prediction export: sample_id, true_label, pred_label, p_pred."""
    pred = predicted_labels(scores)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_id", "true_label", "pred_label", "p_pred"])
        for i, (t, p) in enumerate(zip(true_labels, pred)):
            writer.writerow([i, int(t), int(p), f"{scores[i, p]:.9g}"])
