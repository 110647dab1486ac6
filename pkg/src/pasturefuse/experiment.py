"""Cross-validated experiment execution and result serialization."""
from __future__ import annotations

import csv
import io
import json
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .autodiff import RngStream, precision
from .config import ExperimentConfig
from .data.manifest import SampleRecord, load_manifest, resolve_image_path, target_matrix
from .data.splits import FoldAssignment, stratified_group_kfold
from .data.synth import synth_dataset
from .imageio import load_image
from .metadata import Vocabulary, metadata_encode
from .metrics import aggregate_folds, fold_mean_std, median_predictor
from .model import CHECKPOINT_FORMAT, DualViewModel, save_checkpoint
from .train import TrainingAborted, ViewData, train_fold
from .views import split_views

RESULT_FORMAT = 1
SCHEMA_PATH = Path(__file__).with_name("result.schema.json")


def load_dataset(cfg: ExperimentConfig) -> tuple[list[SampleRecord], dict[str, np.ndarray], Vocabulary]:
    ds = cfg.dataset
    vocab = Vocabulary.load(ds.vocab) if ds.vocab else Vocabulary()
    if ds.source == "synth":
        records, images = synth_dataset(ds.synth, vocab=vocab)
        return records, images, vocab
    records = load_manifest(ds.manifest)
    root = Path(ds.manifest).parent
    images = {r.image_id: load_image(resolve_image_path(r, root)) for r in records}
    return records, images, vocab


def build_view_data(records, images, view_size: int, vocab: Vocabulary,
                    with_meta: bool = True) -> ViewData:
    left, right = zip(*(split_views(images[r.image_id], view_size) for r in records))
    meta = np.array([metadata_encode(r.meta, vocab) for r in records]) if with_meta else None
    return ViewData(np.stack(left), np.stack(right), target_matrix(records), meta,
                    [r.image_id for r in records])


def fold_streams(seed: int, fold: int) -> tuple[RngStream, RngStream]:
    """(init, train) streams for one fold, derived only from the master seed."""
    root = RngStream(seed).child(("fold", fold))
    return root.child("init"), root.child("train")


@dataclass
class FoldOutcome:
    fold: int
    report: dict | None
    state: dict | None
    n_train: int
    n_val: int
    baseline: dict | None
    error: str | None = None


def run_fold(cfg: ExperimentConfig, data: ViewData, train_idx, val_idx, fold: int,
             log=None) -> FoldOutcome:
    with precision(cfg.precision):
        init_rng, train_rng = fold_streams(cfg.seed, fold)
        model = DualViewModel(cfg.model_config(), init_rng)
        base = median_predictor(data.targets[train_idx], data.targets[val_idx]).to_dict()
        try:
            rep = train_fold(model, data, train_idx, val_idx, cfg.train, train_rng, fold,
                             cfg.augment, log)
        except TrainingAborted as exc:
            return FoldOutcome(fold, None, None, len(train_idx), len(val_idx), base, str(exc))
        return FoldOutcome(fold, rep.to_dict(), model.state_dict(), len(train_idx), len(val_idx), base)


def _fold_job(args):
    return run_fold(*args)


def run_experiment(cfg: ExperimentConfig, out_dir=None, workers: int = 1, log=None,
                   write: bool = True) -> dict:
    """Run every requested fold and return (and optionally write) the result document."""
    start = time.perf_counter()
    records, images, vocab = load_dataset(cfg)
    data = build_view_data(records, images, cfg.backbone.view_size, vocab)
    folds = stratified_group_kfold(records, cfg.n_folds, cfg.seed)
    jobs = []
    for k in cfg.fold_list():
        tr, va = folds.split(records, k)
        jobs.append((cfg, data, tr, va, k, log if workers <= 1 else None))
    if workers <= 1:
        outcomes = [_fold_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_fold_job, jobs))
    result = assemble_result(cfg, outcomes, time.perf_counter() - start)
    if write:
        write_outputs(cfg, result, outcomes, folds, Path(out_dir) if out_dir else cfg.resolved_output())
    return result


def assemble_result(cfg: ExperimentConfig, outcomes: list[FoldOutcome], wall_time: float) -> dict:
    folds = []
    for o in outcomes:
        entry = {"fold": o.fold, "n_train": o.n_train, "n_val": o.n_val,
                 "median_baseline": o.baseline, "status": "ok" if o.error is None else "aborted"}
        if o.error is None:
            best = o.report["best_report"]
            entry.update(per_target_r2=best["per_target_r2"], weighted_r2=best["weighted_r2"],
                         report=o.report)
        else:
            entry["error"] = o.error
        folds.append(entry)
    ok = [f["weighted_r2"] for f in folds if f["status"] == "ok"]
    aggregate = None
    if len(ok) >= 2:
        mean, std = fold_mean_std(ok)
        aggregate = {"mean": mean, "std": std,
                     "cv_percent": aggregate_folds(ok).cv_percent if mean > 0 else None}
    return {
        "format_version": RESULT_FORMAT,
        "status": "complete" if all(f["status"] == "ok" for f in folds) else "partial",
        "config": cfg.to_dict(),
        "folds": folds,
        "aggregate": aggregate,
        "wall_time": wall_time,
        "versions": {"pasturefuse": __version__, "numpy": np.__version__,
                     "python": platform.python_version(), "checkpoint_format": CHECKPOINT_FORMAT,
                     "result_format": RESULT_FORMAT},
    }


def curves_csv(outcomes: list[FoldOutcome]) -> str:
    buf = io.StringIO(newline="")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["fold", "epoch", "train_loss", "val_weighted_r2", "lr_backbone", "lr_task"])
    for o in outcomes:
        if o.report is None:
            continue
        r = o.report
        for e in range(len(r["train_loss"])):
            w.writerow([o.fold, e, repr(r["train_loss"][e]), repr(r["val_weighted_r2"][e]),
                        repr(r["lr_backbone"][e]), repr(r["lr_task"][e])])
    return buf.getvalue()


def write_outputs(cfg: ExperimentConfig, result: dict, outcomes: list[FoldOutcome],
                  folds: FoldAssignment, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "result.json").write_text(json.dumps(result, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    (out / "curves.csv").write_text(curves_csv(outcomes), encoding="utf-8")
    (out / "folds.csv").write_text(folds.to_csv(), encoding="utf-8")
    for o in outcomes:
        if o.state is None:
            continue
        with precision(cfg.precision):
            model = DualViewModel(cfg.model_config(), RngStream(0))
        model.load_state_dict(o.state)
        save_checkpoint(out / f"fold_{o.fold}.npz", model,
                        {"fold": o.fold, "best_epoch": o.report["best_epoch"]})
        (out / f"fold_{o.fold}.json").write_text(json.dumps(o.report, indent=2, sort_keys=True) + "\n",
                                                 encoding="utf-8")


def result_schema() -> dict:
    return json.loads(SCHEMA_PATH.read_text(encoding="utf-8"))


def strip_wall_time(obj):
    """Copy of a result document without any ``wall_time`` entries."""
    if isinstance(obj, dict):
        return {k: strip_wall_time(v) for k, v in obj.items() if k != "wall_time"}
    if isinstance(obj, list):
        return [strip_wall_time(v) for v in obj]
    return obj
