"""Per-class and per-frequency-group metrics, weight-norm reports, and
intra-bin census tables.

The headline metric is class-mean accuracy (the unweighted mean of
per-class accuracies), so rare-class movements are visible instead of
being drowned out by frequent classes.
"""

from __future__ import annotations

import csv

import numpy as np
from scipy import stats

from .binning import GroupPartition
from .classifier import ClassifierHead, tau_normalize, weight_norms
from .data import ClassCensus
from .metric import CenterBank

GROUPS = ("rare", "common", "frequent")


def per_class_accuracy(predictions, labels, num_categories: int) -> np.ndarray:
    """accuracy[k] = correct_k / count_k; classes absent from labels are NaN."""
    pred = np.asarray(predictions, dtype=np.int64)
    y = np.asarray(labels, dtype=np.int64)
    if pred.shape != y.shape:
        raise ValueError("predictions and labels must have the same length")
    acc = np.full(num_categories, np.nan)
    for k in range(num_categories):
        sel = y == k
        if sel.any():
            acc[k] = float((pred[sel] == k).mean())
    return acc


def group_report(per_class_acc: np.ndarray, cen: ClassCensus) -> dict:
    """Means over all present classes and per frequency tag; empty tags are None."""
    acc = np.asarray(per_class_acc, dtype=np.float64)
    if acc.shape[0] != cen.num_categories:
        raise ValueError("census does not cover the per-class accuracy vector")
    present = ~np.isnan(acc)
    report = {"overall": float(acc[present].mean()) if present.any() else None}
    tags = np.array(cen.group_tags)
    for tag in GROUPS:
        sel = present & (tags == tag)
        report[tag] = float(acc[sel].mean()) if sel.any() else None
    return report


def weight_norm_report(head: ClassifierHead, cen: ClassCensus, tau_values) -> dict:
    """Per-category norms for each tau, categories ordered by descending count."""
    order = np.argsort(-np.asarray(cen.counts), kind="stable")
    rows = {}
    for tau in tau_values:
        rows[float(tau)] = weight_norms(tau_normalize(head, float(tau)))[order]
    return {
        "categories": order.tolist(),
        "counts": np.asarray(cen.counts)[order].tolist(),
        "norms": rows,
    }


def write_weight_norm_csv(path, report: dict) -> None:
    taus = sorted(report["norms"])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["category", "count"] + [f"tau_{t:g}" for t in taus])
        for i, (cat, cnt) in enumerate(zip(report["categories"], report["counts"])):
            writer.writerow([cat, cnt] + [f"{report['norms'][t][i]:.9g}" for t in taus])


def weight_norm_correlation(head: ClassifierHead, cen: ClassCensus) -> float:
    """Spearman rank correlation between category weight norms and counts."""
    rho = stats.spearmanr(weight_norms(head), np.asarray(cen.counts)).statistic
    return float(rho)


def bin_census(cen: ClassCensus, partition: GroupPartition) -> list[dict]:
    """Per-group membership and count spread, exposing intra-bin imbalance."""
    counts = np.asarray(cen.counts)
    out = []
    for g in range(1, partition.num_groups + 1):
        members = partition.group_members[g]
        entry = {
            "group": g,
            "lower_bound": int(partition.bounds[g - 1]),
            "categories": members.tolist(),
            "counts": counts[members].tolist(),
        }
        if members.size:
            lo, hi = int(counts[members].min()), int(counts[members].max())
            entry.update(min=lo, max=hi, ratio=(hi / lo if lo > 0 else None))
        else:
            entry.update(min=None, max=None, ratio=None)
        out.append(entry)
    return out


def intra_class_spread(features, labels, bank: CenterBank) -> np.ndarray:
    """Mean ||x - c_y|| per class; NaN for absent or uninitialized classes."""
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    out = np.full(bank.num_classes, np.nan)
    for k in range(bank.num_classes):
        sel = y == k
        if sel.any() and bank.initialized[k]:
            out[k] = float(np.linalg.norm(x[sel] - bank.centers[k], axis=1).mean())
    return out


def mean_spread(spread: np.ndarray) -> float:
    vals = spread[~np.isnan(spread)]
    if vals.size == 0:
        raise ValueError("no class has both samples and an initialized center")
    return float(vals.mean())


def report_rows(report: dict, config_hash: str, seed: int, metric: str = "class_mean_accuracy") -> list[dict]:
    """Flatten a group report into machine-readable rows."""
    rows = []
    for group in ("overall",) + GROUPS:
        if report.get(group) is None:
            continue
        rows.append(
            {
                "metric": metric,
                "group": group,
                "value": report[group],
                "config_hash": config_hash,
                "seed": seed,
            }
        )
    return rows


def render_group_table(reports: dict[str, dict]) -> str:
    """Fixed-width table of group reports keyed by row name."""
    cols = ("overall",) + GROUPS
    name_w = max([len(k) for k in reports] + [8])
    lines = [" ".join(["name".ljust(name_w)] + [c.rjust(9) for c in cols])]
    for name, rep in reports.items():
        cells = []
        for c in cols:
            v = rep.get(c)
            cells.append("   absent" if v is None else f"{v:9.4f}")
        lines.append(" ".join([name.ljust(name_w)] + cells))
    return "\n".join(lines) + "\n"
