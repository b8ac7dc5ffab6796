"""Central finite-difference verification of every analytic gradient.

Each suite draws random instances, evaluates the loss along every
coordinate at +/- h, and compares against the implementation's gradient.
The reported figure per instance is max|g_a - g_fd| / max(|g|_inf, 1e-8).
"""

from __future__ import annotations

import numpy as np

from .binning import GroupPartition, partition_fixed, select_others
from .data import ClassCensus, tag_for_count
from .losses import bags_loss, class_weights, softmax_ce
from .metric import CenterBank, center_loss, combined_loss, ece_loss, lmcl_loss

DEFAULT_STEP = 1e-5
DEFAULT_TOLERANCE = 1e-5

SUITES = (
    "softmax_ce",
    "bags_plain",
    "bags_weighted",
    "bags_focal",
    "bags_hybrid",
    "center_loss",
    "combined_loss",
    "lmcl_loss",
    "ece_loss",
)


def finite_diff_grad(f, x: np.ndarray, h: float = DEFAULT_STEP) -> np.ndarray:
    """Central differences of a scalar function along every coordinate."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = grad.ravel()
    for i in range(x.size):
        bump = np.zeros_like(x).ravel()
        bump[i] = h
        bump = bump.reshape(x.shape)
        flat[i] = (f(x + bump) - f(x - bump)) / (2.0 * h)
    return grad


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-8)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def _toy_partition() -> tuple[ClassCensus, GroupPartition]:
    """12 categories spread over all four default bins."""
    counts = np.array([3, 5, 9, 12, 40, 80, 150, 400, 900, 1200, 3000, 9000], dtype=np.int64)
    cen = ClassCensus(counts=counts, group_tags=[tag_for_count(int(c)) for c in counts])
    return cen, partition_fixed(cen)


def check_softmax_ce(instances: int, rng, h: float) -> float:
    worst = 0.0
    for _ in range(instances):
        dim = int(rng.integers(2, 9))
        z = rng.normal(0.0, 2.0, size=dim)
        label = int(rng.integers(dim))
        out = softmax_ce(z, label)
        fd = finite_diff_grad(lambda v: softmax_ce(v, label).value, z, h)
        worst = max(worst, rel_error(out.grad_logits, fd))
    return worst


def check_bags(mode: str, instances: int, rng, h: float) -> float:
    cen, part = _toy_partition()
    table = class_weights(cen, part)
    worst = 0.0
    for _ in range(instances):
        z = rng.normal(0.0, 2.0, size=part.extended_size)
        label = int(rng.integers(part.num_categories))
        mask = select_others(
            np.array([label]), part, beta=float(rng.integers(1, 4)), seed=int(rng.integers(1 << 30))
        )[0]
        # flip a couple of extra groups on so "Others" terms are exercised
        mask[int(rng.integers(1, part.num_groups + 1))] = True
        kwargs = dict(mode=mode, others_mask=mask)
        if mode in ("weighted", "hybrid"):
            kwargs["weights"] = table
        if mode == "focal":
            kwargs["gamma"] = float(rng.choice([0.5, 1.0, 2.0]))
        out = bags_loss(z, label, part, **kwargs)
        fd = finite_diff_grad(lambda v: bags_loss(v, label, part, **kwargs).value, z, h)
        worst = max(worst, rel_error(out.grad_logits, fd))
    return worst


def check_center(instances: int, rng, h: float) -> float:
    worst = 0.0
    for _ in range(instances):
        b, d, c = int(rng.integers(1, 6)), int(rng.integers(2, 7)), 4
        bank = CenterBank(centers=rng.normal(size=(c, d)), initialized=np.ones(c, dtype=bool))
        labels = rng.integers(c, size=b)
        x = rng.normal(size=(b, d))
        _, grad = center_loss(x, labels, bank)
        fd = finite_diff_grad(lambda v: center_loss(v, labels, bank)[0], x, h)
        worst = max(worst, rel_error(grad, fd))
    return worst


def check_combined(instances: int, rng, h: float) -> float:
    worst = 0.0
    for _ in range(instances):
        b, d, c = int(rng.integers(1, 5)), int(rng.integers(2, 6)), 5
        bank = CenterBank(centers=rng.normal(size=(c, d)), initialized=np.ones(c, dtype=bool))
        labels = rng.integers(c, size=b)
        z = rng.normal(0.0, 2.0, size=(b, c))
        x = rng.normal(size=(b, d))
        lam = float(rng.choice([0.01, 0.1, 1.0]))
        out = combined_loss(z, x, labels, bank, lam)
        packed = np.concatenate([z.ravel(), x.ravel()])

        def f(v):
            zz = v[: z.size].reshape(z.shape)
            xx = v[z.size :].reshape(x.shape)
            return combined_loss(zz, xx, labels, bank, lam).value

        fd = finite_diff_grad(f, packed, h)
        analytic = np.concatenate([out.grad_logits.ravel(), out.grad_features.ravel()])
        worst = max(worst, rel_error(analytic, fd))
    return worst


def _check_pair_loss(loss_fn, instances, rng, h) -> float:
    worst = 0.0
    for _ in range(instances):
        k, d = int(rng.integers(2, 6)), int(rng.integers(2, 7))
        x = rng.normal(size=d)
        w = rng.normal(size=(k, d))
        label = int(rng.integers(k))
        value, gx, gw = loss_fn(x, w, label)
        packed = np.concatenate([x, w.ravel()])

        def f(v):
            return loss_fn(v[:d], v[d:].reshape(k, d), label)[0]

        fd = finite_diff_grad(f, packed, h)
        analytic = np.concatenate([gx, gw.ravel()])
        worst = max(worst, rel_error(analytic, fd))
    return worst


def check_lmcl(instances: int, rng, h: float) -> float:
    return _check_pair_loss(
        lambda x, w, label: lmcl_loss(x, w, label, s=4.0, m=0.35), instances, rng, h
    )


def check_ece(instances: int, rng, h: float) -> float:
    return _check_pair_loss(
        lambda x, w, label: ece_loss(x, w, label, t=2.0), instances, rng, h
    )


def run_all(instances: int = 100, seed: int = 0, h: float = DEFAULT_STEP) -> dict[str, float]:
    """Max relative error per suite over `instances` random instances each."""
    results = {}
    for suite_id, name in enumerate(SUITES):
        rng = np.random.default_rng([seed, suite_id])
        if name == "softmax_ce":
            results[name] = check_softmax_ce(instances, rng, h)
        elif name.startswith("bags_"):
            results[name] = check_bags(name.split("_", 1)[1], instances, rng, h)
        elif name == "center_loss":
            results[name] = check_center(instances, rng, h)
        elif name == "combined_loss":
            results[name] = check_combined(instances, rng, h)
        elif name == "lmcl_loss":
            results[name] = check_lmcl(instances, rng, h)
        else:
            results[name] = check_ece(instances, rng, h)
    return results
