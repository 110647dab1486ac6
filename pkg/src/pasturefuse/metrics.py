"""Weighted R^2 on log1p targets, fold aggregation, baselines and colour features."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata

TARGET_WEIGHTS = np.array([0.1, 0.1, 0.1, 0.2, 0.5])
TARGET_NAMES = ("dry_green", "dry_dead", "dry_clover", "gdm", "dry_total")


class MetricError(ValueError):
    """A metric is undefined for the given inputs."""


def r2(pred, truth) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise MetricError(f"shape mismatch {pred.shape} vs {truth.shape}")
    if truth.size < 2:
        raise MetricError("r2 needs at least two samples")
    ss_tot = float(((truth - truth.mean()) ** 2).sum())
    if ss_tot == 0.0:
        raise MetricError("r2 undefined: truth is constant")
    return 1.0 - float(((truth - pred) ** 2).sum()) / ss_tot


def weighted_r2(per_target) -> float:
    per_target = np.asarray(per_target, dtype=np.float64)
    if per_target.shape != (5,):
        raise MetricError(f"weighted_r2 needs 5 values, got shape {per_target.shape}")
    return float(TARGET_WEIGHTS @ per_target)


@dataclass
class MetricReport:
    per_target_r2: list[float]
    weighted_r2: float
    n: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(pred_log: np.ndarray, truth_log: np.ndarray) -> MetricReport:
    """Score ``[n, 5]`` log1p predictions against log1p truth."""
    per = [r2(pred_log[:, j], truth_log[:, j]) for j in range(5)]
    return MetricReport(per, weighted_r2(per), int(truth_log.shape[0]))


@dataclass
class Aggregate:
    mean: float
    std: float
    cv_percent: float
    values: list[float] = field(default_factory=list)


def fold_mean_std(fold_metrics) -> tuple[float, float]:
    v = np.asarray(list(fold_metrics), dtype=np.float64)
    if v.size < 2:
        raise MetricError("aggregation needs at least two folds")
    if (v == v[0]).all():
        return float(v[0]), 0.0
    mean = math.fsum(v) / v.size
    return mean, math.sqrt(math.fsum((v - mean) ** 2) / v.size)


def aggregate_folds(fold_metrics) -> Aggregate:
    """Across-fold mean, population std and coefficient of variation (percent)."""
    v = np.asarray(list(fold_metrics), dtype=np.float64)
    mean, std = fold_mean_std(v)
    if mean <= 0:
        raise MetricError(f"coefficient of variation undefined for mean {mean}")
    return Aggregate(mean, std, 100.0 * std / mean, [float(x) for x in v])


def median_predictor(train_targets: np.ndarray, eval_targets: np.ndarray) -> MetricReport:
    """Constant per-target training median (log1p space) scored on the eval split.

    Both arguments are ``[n, 5]`` grams.
    """
    train_log = np.log1p(np.asarray(train_targets, dtype=np.float64))
    eval_log = np.log1p(np.asarray(eval_targets, dtype=np.float64))
    if train_log.size == 0 or eval_log.size == 0:
        raise MetricError("median predictor needs non-empty splits")
    med = np.median(train_log, axis=0)
    return evaluate(np.broadcast_to(med, eval_log.shape), eval_log)


def color_indices(img: np.ndarray, eps: float = 1e-8) -> dict[str, float]:
    """Excess green ``2G - R - B``, chromatic greenness ``G / (R+G+B)`` and brightness."""
    img = np.asarray(img, dtype=np.float64)
    r, g, b = img[..., 0], img[..., 1], img[..., 2]
    s = r + g + b
    return {
        "exg": float((2 * g - r - b).mean()),
        "greenness": float((g / (s + eps)).mean()),
        "brightness": float((s / 3.0).mean()),
    }


def spearman(x, y) -> float:
    """Pearson correlation of mid-ranks."""
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise MetricError("spearman needs two equal-length 1-d sequences")
    if x.size < 3:
        raise MetricError("spearman needs at least three samples")
    rx, ry = rankdata(x), rankdata(y)
    rx -= rx.mean()
    ry -= ry.mean()
    denom = math.sqrt(float((rx * rx).sum()) * float((ry * ry).sum()))
    if denom == 0.0:
        raise MetricError("spearman undefined: zero rank variance")
    return float((rx * ry).sum() / denom)
