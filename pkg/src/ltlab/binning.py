"""Category-to-group partitions for group softmax training.

A partition splits the C categories into N foreground groups plus the
background group G0. The extended logit vector has (C+1)+(N+1) entries:
one per category, one for background, and one "Others" pseudo-category per
group (including G0, whose "Others" slot means "some foreground object").
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .data import ClassCensus
from .errors import ConfigError

DEFAULT_THRESHOLDS = [0, 10, 100, 1000]
FIVE_BIN_THRESHOLDS = [0, 10, 100, 500, 1000]

_PARTITION_FORMAT = "ltlab-partition"
_PARTITION_VERSION = 1


@dataclass
class GroupPartition:
    """Category->group assignment plus the extended output layout.

    group_of holds a group id in [1, N] per category; bounds holds the lower
    instance-count bound of each foreground group (meaningful for the fixed
    and clustered strategies only).
    """

    strategy: str
    num_categories: int
    num_groups: int
    group_of: np.ndarray
    bounds: np.ndarray
    seed: int | None = None

    # derived layout, filled in __post_init__
    background_slot: int = field(init=False, default=0)
    others_slots: np.ndarray = field(init=False, repr=False, default=None)
    output_map: np.ndarray = field(init=False, repr=False, default=None)
    group_members: list = field(init=False, repr=False, default=None)
    group_slots: list = field(init=False, repr=False, default=None)
    within_pos: np.ndarray = field(init=False, repr=False, default=None)

    def __post_init__(self):
        self.group_of = np.asarray(self.group_of, dtype=np.int64)
        self.bounds = np.asarray(self.bounds, dtype=np.int64)
        c, n = self.num_categories, self.num_groups
        if self.group_of.shape != (c,):
            raise ValueError("group_of must assign every category")
        if n < 1:
            raise ValueError("need at least one foreground group")
        if self.group_of.min() < 1 or self.group_of.max() > n:
            raise ValueError("group ids must lie in [1, num_groups]")
        if self.bounds.shape != (n,):
            raise ValueError("bounds must hold one lower bound per foreground group")

        self.group_members = [np.array([], dtype=np.int64)]
        for g in range(1, n + 1):
            members = np.flatnonzero(self.group_of == g)
            if members.size == 0:
                warnings.warn(f"group {g} has no categories", RuntimeWarning, stacklevel=2)
            self.group_members.append(members)

        # layout: [background, others_0, G1 cats..., others_1, G2 cats..., ...]
        self.output_map = np.full(c, -1, dtype=np.int64)
        self.others_slots = np.zeros(n + 1, dtype=np.int64)
        self.others_slots[0] = 1
        self.within_pos = np.full(c, -1, dtype=np.int64)
        idx = 2
        for g in range(1, n + 1):
            for pos, cat in enumerate(self.group_members[g]):
                self.output_map[cat] = idx
                self.within_pos[cat] = pos
                idx += 1
            self.others_slots[g] = idx
            idx += 1
        assert idx == self.extended_size

        self.group_slots = [np.array([0, 1], dtype=np.int64)]
        for g in range(1, n + 1):
            slots = np.append(self.output_map[self.group_members[g]], self.others_slots[g])
            self.group_slots.append(slots.astype(np.int64))

    @property
    def extended_size(self) -> int:
        return (self.num_categories + 1) + (self.num_groups + 1)

    @property
    def background_label(self) -> int:
        """Sentinel label for injected background samples (one past the last category)."""
        return self.num_categories

    def upper_bound(self, group: int) -> float:
        """Exclusive instance-count upper bound of a foreground group."""
        if group < 1 or group > self.num_groups:
            raise ValueError(f"no foreground group {group}")
        if group == self.num_groups:
            return math.inf
        return float(self.bounds[group])

    def __eq__(self, other) -> bool:
        if not isinstance(other, GroupPartition):
            return NotImplemented
        return (
            self.strategy == other.strategy
            and self.num_categories == other.num_categories
            and self.num_groups == other.num_groups
            and np.array_equal(self.group_of, other.group_of)
            and np.array_equal(self.bounds, other.bounds)
            and self.seed == other.seed
        )


def _validate_thresholds(thresholds) -> np.ndarray:
    t = np.asarray(thresholds, dtype=np.int64)
    if t.ndim != 1 or t.size < 1:
        raise ConfigError("thresholds must be a non-empty list")
    if t[0] != 0:
        raise ConfigError("thresholds must start at 0")
    if np.any(np.diff(t) <= 0):
        raise ConfigError("thresholds must be strictly increasing")
    return t


def partition_fixed(census: ClassCensus, thresholds=None) -> GroupPartition:
    """Assign category with count in [s_n, s_{n+1}) to group n (1-based)."""
    t = _validate_thresholds(DEFAULT_THRESHOLDS if thresholds is None else thresholds)
    group_of = np.searchsorted(t, census.counts, side="right")
    return GroupPartition(
        strategy="fixed",
        num_categories=census.num_categories,
        num_groups=len(t),
        group_of=group_of,
        bounds=t,
    )


def partition_clustered(census: ClassCensus, k: int) -> GroupPartition:
    """Bin categories by 1-D k-means over log(count+1), quantile-initialized.

    Cluster boundaries become group bounds, so the result is equivalent to a
    fixed partition at the discovered thresholds.
    """
    counts = np.asarray(census.counts, dtype=np.int64)
    distinct = np.unique(counts)
    if k < 2:
        raise ConfigError("clustered partition needs k >= 2")
    if k > distinct.size:
        raise ConfigError(
            f"k={k} exceeds the {distinct.size} distinct count value(s) in the census"
        )

    values = np.log(counts.astype(np.float64) + 1.0)
    log_distinct = np.log(distinct.astype(np.float64) + 1.0)
    init_idx = ((np.arange(k) + 0.5) * distinct.size / k).astype(np.int64)
    centroids = log_distinct[init_idx]

    assign = np.full(counts.shape, -1, dtype=np.int64)
    for _ in range(500):
        # nearest centroid in 1-D: cut at midpoints, ties go to the lower cluster
        mids = (centroids[:-1] + centroids[1:]) / 2.0
        new_assign = np.searchsorted(mids, values, side="left")
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for j in range(k):
            mask = assign == j
            if mask.any():
                centroids[j] = values[mask].mean()

    nonempty = [j for j in range(k) if np.any(assign == j)]
    if len(nonempty) < k:
        warnings.warn(
            f"k-means left {k - len(nonempty)} empty cluster(s); dropping them",
            RuntimeWarning,
        )
    remap = {j: g for g, j in enumerate(nonempty, start=1)}
    group_of = np.array([remap[j] for j in assign], dtype=np.int64)

    n = len(nonempty)
    bounds = np.zeros(n, dtype=np.int64)
    for g in range(2, n + 1):
        bounds[g - 1] = counts[group_of == g].min()
    return GroupPartition(
        strategy="clustered",
        num_categories=census.num_categories,
        num_groups=n,
        group_of=group_of,
        bounds=bounds,
    )


def partition_random(census: ClassCensus, template: GroupPartition, seed: int) -> GroupPartition:
    """Shuffle category membership while keeping the template's group sizes."""
    if template.num_categories != census.num_categories:
        raise ConfigError("template and census disagree on the number of categories")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(census.num_categories)
    group_of = np.zeros(census.num_categories, dtype=np.int64)
    start = 0
    for g in range(1, template.num_groups + 1):
        size = len(template.group_members[g])
        group_of[perm[start : start + size]] = g
        start += size
    return GroupPartition(
        strategy="random",
        num_categories=census.num_categories,
        num_groups=template.num_groups,
        group_of=group_of,
        bounds=template.bounds.copy(),
        seed=seed,
    )


def select_others(batch_labels, partition: GroupPartition, beta: float, seed: int = 0) -> np.ndarray:
    """Per-group activation mask for a batch; see _select_others."""
    if beta <= 0:
        raise ConfigError("beta must be positive")
    return _select_others(
        np.asarray(batch_labels, dtype=np.int64), partition, beta, np.random.default_rng(seed)
    )


def _select_others(labels: np.ndarray, partition: GroupPartition, beta: float, rng) -> np.ndarray:
    """Boolean (batch, N+1) mask of group activations.

    Column 0 (G0) is always on. For each foreground group, in-group samples
    are always kept and at most ceil(beta * in-group-count) out-of-group
    samples are kept as "Others", subsampled uniformly.
    """
    b = labels.shape[0]
    mask = np.zeros((b, partition.num_groups + 1), dtype=bool)
    mask[:, 0] = True
    foreground = labels < partition.num_categories
    groups = np.where(foreground, partition.group_of[np.minimum(labels, partition.num_categories - 1)], 0)
    for g in range(1, partition.num_groups + 1):
        in_group = foreground & (groups == g)
        mask[in_group, g] = True
        candidates = np.flatnonzero(~in_group)
        if candidates.size == 0:
            continue
        if math.isinf(beta):
            mask[candidates, g] = True
            continue
        cap = math.ceil(beta * int(in_group.sum()))
        if cap >= candidates.size:
            mask[candidates, g] = True
        elif cap > 0:
            keep = rng.choice(candidates, size=cap, replace=False)
            mask[keep, g] = True
    return mask


def save_partition(partition: GroupPartition, path) -> None:
    payload = {
        "format": _PARTITION_FORMAT,
        "version": _PARTITION_VERSION,
        "strategy": partition.strategy,
        "num_categories": partition.num_categories,
        "num_groups": partition.num_groups,
        "group_of": partition.group_of.tolist(),
        "bounds": partition.bounds.tolist(),
        "seed": partition.seed,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_partition(path) -> GroupPartition:
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("format") != _PARTITION_FORMAT:
        raise ConfigError(f"{path}: not a partition file")
    if payload.get("version") != _PARTITION_VERSION:
        raise ConfigError(f"{path}: unsupported partition version {payload.get('version')}")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return GroupPartition(
            strategy=payload["strategy"],
            num_categories=payload["num_categories"],
            num_groups=payload["num_groups"],
            group_of=np.array(payload["group_of"], dtype=np.int64),
            bounds=np.array(payload["bounds"], dtype=np.int64),
            seed=payload["seed"],
        )
