"""Quintile stratification and the deterministic stratified group k-fold splitter."""
from __future__ import annotations

import io
import math
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from ..autodiff import RngStream
from .manifest import SampleRecord


def quintile_bins(values, n_bins: int = 5) -> np.ndarray:
    """Bin index per value; edges at the 20/40/60/80 percentiles (linear interpolation).

    A value equal to an edge goes to the lower bin.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.size < n_bins:
        raise ValueError(f"need at least {n_bins} values to form {n_bins} bins, got {v.size}")
    edges = np.percentile(v, np.arange(1, n_bins) * 100.0 / n_bins)
    return np.searchsorted(edges, v, side="left")


@dataclass
class FoldAssignment:
    n_folds: int
    seed: int
    assignment: dict[str, int] = field(default_factory=dict)
    group_bins: dict[str, int] = field(default_factory=dict)

    def fold_of(self, image_id: str) -> int:
        return self.assignment[image_id]

    def split(self, records: list[SampleRecord], fold: int) -> tuple[list[int], list[int]]:
        """Record indices ``(train, validation)`` for one fold."""
        train, val = [], []
        for i, r in enumerate(records):
            (val if self.assignment[r.image_id] == fold else train).append(i)
        return train, val

    def fold_sizes(self, records: list[SampleRecord]) -> list[int]:
        sizes = [0] * self.n_folds
        for r in records:
            sizes[self.assignment[r.image_id]] += 1
        return sizes

    def bin_histograms(self, records: list[SampleRecord]) -> np.ndarray:
        """Samples per (fold, bin)."""
        n_bins = max(self.group_bins.values(), default=0) + 1
        hist = np.zeros((self.n_folds, n_bins), dtype=int)
        for r in records:
            hist[self.assignment[r.image_id], self.group_bins[r.image_id]] += 1
        return hist

    def to_csv(self) -> str:
        buf = io.StringIO(newline="")
        buf.write("image_id,fold\n")
        for gid in sorted(self.assignment):
            buf.write(f"{gid},{self.assignment[gid]}\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, seed: int = -1) -> "FoldAssignment":
        lines = text.strip("\n").split("\n")
        if lines[0] != "image_id,fold":
            raise ValueError("fold CSV must start with 'image_id,fold'")
        assignment = {}
        for line in lines[1:]:
            gid, fold = line.rsplit(",", 1)
            assignment[gid] = int(fold)
        return cls(max(assignment.values()) + 1, seed, assignment)


def assign_groups(group_bins: dict[str, int], group_sizes: dict[str, int], n_folds: int,
                  seed: int) -> dict[str, int]:
    """Greedy balanced placement of whole groups.

    Groups are sorted by id, shuffled with the seeded stream, then stably
    ordered by bin. Each goes to the fold with the fewest samples of its bin,
    then the fewest samples overall, then the lowest index.
    """
    if len(group_bins) < n_folds:
        raise ValueError(f"{len(group_bins)} groups cannot fill {n_folds} folds")
    gids = sorted(group_bins)
    perm = RngStream(seed).child("stratified_group_kfold").permutation(len(gids))
    order = sorted((gids[i] for i in perm), key=lambda g: group_bins[g])
    n_bins = max(group_bins.values()) + 1
    per_bin = np.zeros((n_folds, n_bins), dtype=np.int64)
    sizes = np.zeros(n_folds, dtype=np.int64)
    out = {}
    for g in order:
        b = group_bins[g]
        fold = min(range(n_folds), key=lambda f: (per_bin[f, b], sizes[f], f))
        out[g] = fold
        per_bin[fold, b] += group_sizes[g]
        sizes[fold] += group_sizes[g]
    return out


def stratified_group_kfold(records: list[SampleRecord], n_folds: int = 5,
                           seed: int = 17) -> FoldAssignment:
    """Folds grouped by image_id and stratified on Dry Total quintiles of the group means."""
    members: dict[str, list[float]] = defaultdict(list)
    for r in records:
        members[r.image_id].append(r.targets.dry_total)
    if len(members) < n_folds:
        raise ValueError(f"{len(members)} groups cannot fill {n_folds} folds")
    gids = sorted(members)
    means = [math.fsum(members[g]) / len(members[g]) for g in gids]
    bins = dict(zip(gids, (int(b) for b in quintile_bins(means))))
    sizes = {g: len(members[g]) for g in gids}
    return FoldAssignment(n_folds, seed, assign_groups(bins, sizes, n_folds, seed), bins)
