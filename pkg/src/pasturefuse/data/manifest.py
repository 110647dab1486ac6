"""Manifest CSV: one row per sample with five biomass targets and metadata."""
from __future__ import annotations

import csv
import datetime as dt
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..metadata import SampleMeta

HEADER = ("image_id", "image_path", "dry_green", "dry_dead", "dry_clover", "gdm", "dry_total",
          "state", "species", "ndvi", "height", "date")
TARGET_COLUMNS = ("dry_green", "dry_dead", "dry_clover", "gdm", "dry_total")
COMPOSITION_RTOL = 1e-6


class ManifestError(ValueError):
    """Raised with every problem found in a manifest, each tagged with its line number."""

    def __init__(self, problems: list[tuple[int, str]]):
        self.problems = problems
        lines = [f"line {ln}: {msg}" for ln, msg in problems]
        super().__init__(f"{len(problems)} manifest error(s):\n" + "\n".join(lines))


@dataclass
class Targets:
    dry_green: float
    dry_dead: float
    dry_clover: float
    gdm: float
    dry_total: float

    def as_array(self) -> np.ndarray:
        """Grams in model order (green, dead, clover, gdm, total)."""
        return np.array([self.dry_green, self.dry_dead, self.dry_clover, self.gdm, self.dry_total])

    def composition_errors(self) -> list[str]:
        out = []
        if any(v < 0 for v in self.as_array()):
            out.append("negative target value")
        if abs(self.gdm - (self.dry_green + self.dry_clover)) > COMPOSITION_RTOL * max(1.0, self.gdm):
            out.append(f"gdm {self.gdm!r} != dry_green + dry_clover "
                       f"({self.dry_green + self.dry_clover!r})")
        if abs(self.dry_total - (self.gdm + self.dry_dead)) > COMPOSITION_RTOL * max(1.0, self.dry_total):
            out.append(f"dry_total {self.dry_total!r} != gdm + dry_dead ({self.gdm + self.dry_dead!r})")
        return out


@dataclass
class SampleRecord:
    image_id: str
    image_path: str
    targets: Targets
    meta: SampleMeta

    def row(self) -> list[str]:
        t, m = self.targets, self.meta
        return [self.image_id, self.image_path, repr(t.dry_green), repr(t.dry_dead),
                repr(t.dry_clover), repr(t.gdm), repr(t.dry_total), m.state, m.species,
                repr(m.ndvi), repr(m.height), m.date.isoformat()]


def _parse_row(row: dict) -> tuple[SampleRecord | None, list[str]]:
    problems = []
    nums = {}
    for col in TARGET_COLUMNS + ("ndvi", "height"):
        try:
            nums[col] = float(row[col])
            if not math.isfinite(nums[col]):
                raise ValueError
        except ValueError:
            problems.append(f"malformed number in {col}: {row[col]!r}")
    try:
        date = dt.date.fromisoformat(row["date"])
    except ValueError:
        problems.append(f"malformed date: {row['date']!r}")
        date = None
    if not row["image_id"]:
        problems.append("empty image_id")
    if problems:
        return None, problems
    if not 0.0 <= nums["ndvi"] <= 1.0:
        problems.append(f"ndvi {nums['ndvi']} outside [0, 1]")
    if nums["height"] < 0:
        problems.append(f"negative height {nums['height']}")
    targets = Targets(*(nums[c] for c in TARGET_COLUMNS))
    problems.extend(targets.composition_errors())
    meta = SampleMeta(row["state"], row["species"], nums["ndvi"], nums["height"], date)
    return SampleRecord(row["image_id"], row["image_path"], targets, meta), problems


def load_manifest(path) -> list[SampleRecord]:
    """Parse and validate a manifest; all problems are reported together."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ManifestError([(1, "missing header")]) from None
        if tuple(header) != HEADER:
            missing = [c for c in HEADER if c not in header]
            msg = f"missing column(s) {missing}" if missing else f"header must be {','.join(HEADER)}"
            raise ManifestError([(1, msg)])
        records, problems = [], []
        for lineno, values in enumerate(reader, start=2):
            if len(values) != len(HEADER):
                problems.append((lineno, f"expected {len(HEADER)} fields, got {len(values)}"))
                continue
            rec, errs = _parse_row(dict(zip(HEADER, values)))
            problems.extend((lineno, e) for e in errs)
            if rec is not None and not errs:
                records.append(rec)
    if problems:
        raise ManifestError(problems)
    return records


def write_manifest(path, records: list[SampleRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(HEADER)
        for rec in records:
            writer.writerow(rec.row())


def resolve_image_path(record: SampleRecord, root) -> Path:
    p = Path(record.image_path)
    return p if p.is_absolute() else Path(root) / p


def target_matrix(records: list[SampleRecord]) -> np.ndarray:
    """``[n, 5]`` grams in model order."""
    return np.array([r.targets.as_array() for r in records]).reshape(len(records), 5)


def summary_stats(records: list[SampleRecord]) -> dict[str, dict[str, float]]:
    """Mean, std, min, median, max, skew and zero percentage per target column."""
    from scipy.stats import skew

    y = target_matrix(records)
    out = {}
    for j, col in enumerate(TARGET_COLUMNS):
        v = y[:, j]
        out[col] = {
            "mean": float(v.mean()), "std": float(v.std(ddof=1)) if len(v) > 1 else 0.0,
            "min": float(v.min()), "median": float(np.median(v)), "max": float(v.max()),
            "skew": float(skew(v)) if len(v) > 2 else 0.0,
            "zero_pct": float(100.0 * np.mean(v == 0.0)),
        }
    return out
