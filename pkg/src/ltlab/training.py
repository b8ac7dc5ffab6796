"""Mini-batch SGD training of a linear head under any of the supported
losses. Shuffling, "Others" subsampling, and initialization are all driven
by one seed, so identical configs give bitwise-identical results.

In the "center" mode the feature vectors themselves are trainable (the
desk-scale stand-in for representation learning): they receive the loss
gradient through the head plus the center pull, while the running center
bank follows the incremental update rule once per batch after the step.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .binning import GroupPartition, _select_others
from .classifier import ClassifierHead, forward
from .data import Dataset, census
from .errors import ConfigError, NumericalError
from .inference import predict_bags, predict_knn, predict_softmax, predicted_labels
from .losses import ClassWeightTable, bags_loss_batch, class_weights, softmax_ce_batch, stable_softmax
from .metric import CenterBank, center_loss, update_centers

LOSS_MODES = ("ce", "bags", "center", "lmcl", "ece")


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 0.3
    momentum: float = 0.9
    weight_decay: float = 0.005
    seed: int = 0
    loss: str = "ce"
    bags_mode: str = "plain"
    gamma: float = 2.0
    others_beta: float = 8.0
    center_lambda: float = 0.01
    center_alpha: float = 0.5
    cosine_scale: float = 30.0
    cosine_margin: float = 0.35
    ece_temperature: float = 1.0
    background_points: int = 0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.loss not in LOSS_MODES:
            raise ConfigError(f"unknown loss {self.loss!r}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must be in [0, 1)")
        if self.center_lambda < 0:
            raise ConfigError("center_lambda must be >= 0")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if self.background_points < 0:
            raise ConfigError("background_points must be >= 0")


@dataclass
class TrainResult:
    head: ClassifierHead
    history: list = field(default_factory=list)
    bank: CenterBank | None = None
    features: np.ndarray | None = None


def train(
    dataset: Dataset,
    head_init: ClassifierHead,
    config: TrainConfig,
    partition: GroupPartition | None = None,
    center_bank: CenterBank | None = None,
) -> TrainResult:
    """SGD with momentum over seeded shuffled mini-batches.

    Aborts with NumericalError on a non-finite loss. The input head and bank
    are never mutated.
    """
    _check_setup(dataset, head_init, config, partition)

    ss = np.random.SeedSequence(config.seed)
    rng_shuffle, rng_others, rng_bg = (np.random.default_rng(s) for s in ss.spawn(3))

    x = dataset.features.astype(np.float64)
    y = dataset.labels.copy()
    n_eval = x.shape[0]
    if config.loss == "bags" and config.background_points > 0:
        scale = float(x.std())
        bg = rng_bg.normal(0.0, scale, size=(config.background_points, x.shape[1]))
        x = np.concatenate([x, bg], axis=0)
        y = np.concatenate([y, np.full(config.background_points, partition.background_label)])

    w = head_init.weights.copy()
    bias = head_init.bias.copy() if head_init.use_bias else None
    vel_w = np.zeros_like(w)
    vel_b = np.zeros_like(bias) if bias is not None else None

    weights_table: ClassWeightTable | None = None
    if config.loss == "bags" and config.bags_mode in ("weighted", "hybrid"):
        weights_table = class_weights(census(dataset), partition)

    bank = None
    if config.loss == "center":
        bank = (center_bank or CenterBank.empty(dataset.num_categories, dataset.dim)).copy()
    elif center_bank is not None:
        bank = center_bank.copy()

    n = x.shape[0]
    history = []
    for epoch in range(config.epochs):
        order = rng_shuffle.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            xb, yb = x[idx], y[idx]
            logits = xb @ w.T
            if bias is not None:
                logits = logits + bias

            grad_x = None
            if config.loss == "ce":
                loss_sum, grad_z = softmax_ce_batch(logits, yb)
            elif config.loss == "bags":
                mask = _select_others(yb, partition, config.others_beta, rng_others)
                loss_sum, grad_z = bags_loss_batch(
                    logits, yb, partition,
                    mode=config.bags_mode, weights=weights_table,
                    gamma=config.gamma, others_mask=mask,
                )
            elif config.loss == "center":
                bank.initialize_missing(xb, yb)
                loss_sum, grad_z = softmax_ce_batch(logits, yb)
                c_value, c_grad = center_loss(xb, yb, bank)
                loss_sum += config.center_lambda * c_value
                grad_x = grad_z @ w + config.center_lambda * c_grad
            elif config.loss == "lmcl":
                loss_sum, grad_w_direct = _lmcl_batch(
                    xb, yb, w, config.cosine_scale, config.cosine_margin
                )
            else:  # ece
                loss_sum, grad_w_direct = _ece_batch(xb, yb, w, config.ece_temperature)

            if not np.isfinite(loss_sum):
                raise NumericalError(
                    f"non-finite loss at epoch {epoch}, batch starting at {start}"
                )
            b = len(idx)
            if config.loss in ("lmcl", "ece"):
                grad_w = grad_w_direct / b
            else:
                grad_w = grad_z.T @ xb / b
            if config.weight_decay > 0:
                grad_w = grad_w + config.weight_decay * w
            vel_w = config.momentum * vel_w + grad_w
            w = w - config.learning_rate * vel_w
            if bias is not None:
                grad_b = grad_z.sum(axis=0) / b
                vel_b = config.momentum * vel_b + grad_b
                bias = bias - config.learning_rate * vel_b
            if grad_x is not None:
                x[idx] = xb - config.learning_rate * grad_x / b
            if config.loss == "center":
                bank = update_centers(bank, x[idx], yb, config.center_alpha)
            total += loss_sum

        head = ClassifierHead(
            weights=w, layout=head_init.layout,
            output_map=head_init.output_map, use_bias=head_init.use_bias, bias=bias,
        )
        acc = _class_mean_accuracy(
            head, config, partition, bank, x[:n_eval], y[:n_eval], dataset.num_categories
        )
        history.append({"epoch": epoch, "loss": total / n, "class_mean_accuracy": acc})

    final = ClassifierHead(
        weights=w, layout=head_init.layout,
        output_map=head_init.output_map, use_bias=head_init.use_bias, bias=bias,
    )
    return TrainResult(head=final, history=history, bank=bank, features=x[:n_eval])


def _check_setup(dataset, head_init, config, partition) -> None:
    if head_init.dim != dataset.dim:
        raise ConfigError("head and dataset feature dimensions differ")
    if config.loss == "bags":
        if partition is None:
            raise ConfigError("the bags loss needs a partition")
        if head_init.layout != "bags" or head_init.rows != partition.extended_size:
            raise ConfigError("the bags loss needs a bags-layout head matching the partition")
    else:
        if head_init.layout != "plain":
            raise ConfigError(f"{config.loss} loss needs a plain-layout head")
        if head_init.rows != dataset.num_categories:
            raise ConfigError("plain head must have one row per category")


def _lmcl_batch(xb, yb, w, s, m):
    """Batched cosine-margin loss; returns (loss sum, gradient on raw rows)."""
    xn = np.linalg.norm(xb, axis=1)
    wn = np.linalg.norm(w, axis=1)
    if np.any(xn == 0.0):
        raise NumericalError("zero-norm feature in cosine loss")
    if np.any(wn == 0.0):
        raise NumericalError("zero-norm weight row in cosine loss")
    x_hat = xb / xn[:, None]
    w_hat = w / wn[:, None]
    cos = x_hat @ w_hat.T
    scores = s * cos
    rows = np.arange(len(yb))
    scores[rows, yb] -= s * m
    p = stable_softmax(scores, axis=1)
    loss_sum = float(-np.log(np.maximum(p[rows, yb], 1e-12)).sum())
    dcos = s * p
    dcos[rows, yb] -= s
    colsum = (dcos * cos).sum(axis=0)
    grad_w = (dcos.T @ x_hat - colsum[:, None] * w_hat) / wn[:, None]
    return loss_sum, grad_w


def _ece_batch(xb, yb, w, t):
    """Batched negative-squared-distance cross-entropy; gradient on rows."""
    d2 = ((xb**2).sum(axis=1)[:, None] + (w**2).sum(axis=1)[None, :] - 2.0 * xb @ w.T)
    p = stable_softmax(-d2 / t, axis=1)
    rows = np.arange(len(yb))
    loss_sum = float(-np.log(np.maximum(p[rows, yb], 1e-12)).sum())
    delta = p
    delta[rows, yb] -= 1.0
    colsum = delta.sum(axis=0)
    grad_w = (2.0 / t) * (delta.T @ xb - colsum[:, None] * w)
    return loss_sum, grad_w


def _class_mean_accuracy(head, config, partition, bank, x, y, num_categories) -> float:
    if config.loss == "bags":
        scores = predict_bags(head, partition, x)
    elif config.loss == "lmcl":
        scores = stable_softmax(
            (x / np.linalg.norm(x, axis=1)[:, None])
            @ (head.weights / np.linalg.norm(head.weights, axis=1)[:, None]).T,
            axis=1,
        )
    elif config.loss == "ece":
        proto = CenterBank(centers=head.weights, initialized=np.ones(head.rows, dtype=bool))
        scores = predict_knn(proto, x, squared=True)
    else:
        scores = predict_softmax(head, x)
    pred = predicted_labels(scores)
    acc = []
    for k in range(num_categories):
        sel = y == k
        if sel.any():
            acc.append(float((pred[sel] == k).mean()))
    return float(np.mean(acc))
