"""Colour-index feature extraction and rank-correlation tables over a manifest."""
from __future__ import annotations

import csv
import io
from pathlib import Path

import numpy as np

from .data.manifest import SampleRecord, resolve_image_path
from .imageio import load_image
from .metrics import MetricError, color_indices, spearman
from .model import TARGETS

FEATURES = ("exg", "greenness", "brightness")


def feature_rows(records: list[SampleRecord], root, loader=load_image) -> list[dict]:
    """One row per sample; unreadable images produce an ``error`` entry instead of indices."""
    rows = []
    for r in records:
        row = {"image_id": r.image_id}
        try:
            row.update(color_indices(loader(resolve_image_path(r, Path(root)))))
            row["error"] = ""
        except Exception as exc:  # noqa: BLE001 -- row-level report, keep going
            row.update({f: None for f in FEATURES})
            row["error"] = f"{type(exc).__name__}: {exc}"
        rows.append(row)
    return rows


def correlation_rows(rows: list[dict], records: list[SampleRecord], targets=None) -> list[dict]:
    """Spearman rho for each (feature, target); undefined correlations become error rows."""
    targets = np.array([r.targets.as_array() for r in records]) if targets is None else targets
    ok = np.array([not row["error"] for row in rows])
    out = []
    for f in FEATURES:
        x = np.array([row[f] if row[f] is not None else np.nan for row in rows], dtype=float)[ok]
        for j, t in enumerate(TARGETS):
            entry = {"feature": f, "target": t, "rho": None, "n": int(ok.sum()), "error": ""}
            try:
                entry["rho"] = spearman(x, targets[ok, j])
            except MetricError as exc:
                entry["error"] = str(exc)
            out.append(entry)
    return out


def _csv(rows: list[dict], fields) -> str:
    buf = io.StringIO(newline="")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(fields)
    for row in rows:
        w.writerow(["" if row[k] is None else (repr(row[k]) if isinstance(row[k], float) else row[k])
                    for k in fields])
    return buf.getvalue()


def features_csv(rows: list[dict]) -> str:
    return _csv(rows, ("image_id",) + FEATURES + ("error",))


def correlations_csv(rows: list[dict]) -> str:
    return _csv(rows, ("feature", "target", "rho", "n", "error"))
