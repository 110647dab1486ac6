"""Training recipe: Huber on log1p targets, AdamW with two learning-rate groups,
per-epoch cosine schedule with linear warmup, global-norm clipping, early stopping."""
from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .autodiff import (
    ConfigurationError,
    DimensionError,
    NumericError,
    RngStream,
    Tensor,
    as_tensor,
    get_dtype,
    make_node,
    no_grad,
)
from .autodiff.tensor import log1p
from .data.augment import AugmentPolicy, augment_pair
from .metrics import MetricError, MetricReport, evaluate
from .model import DualViewModel


@dataclass
class TrainConfig:
    lr_backbone: float = 1e-5
    lr_task: float = 5e-4
    weight_decay: float = 1e-2
    warmup_epochs: int = 5
    max_epochs: int = 50
    patience: int = 10
    huber_beta: float = 5.0
    clip_norm: float = 1.0
    batch_size: int = 8
    loss_targets: str = "all"        # "all" five log targets, or "components" only
    augment: bool = True
    eval_metadata: str = "absent"    # metadata is never available at validation time by default
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if min(self.lr_backbone, self.lr_task) <= 0 or self.clip_norm <= 0:
            raise ConfigurationError("learning rates and clip norm must be positive")
        if self.patience > self.max_epochs:
            raise ConfigurationError("patience cannot exceed max_epochs")
        if self.loss_targets not in ("all", "components"):
            raise ConfigurationError(f"unknown loss_targets {self.loss_targets!r}")
        if self.eval_metadata not in ("absent", "present"):
            raise ConfigurationError(f"unknown eval_metadata {self.eval_metadata!r}")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigurationError("batch_size and max_epochs must be >= 1")


class TrainingAborted(RuntimeError):
    pass


# -- loss, schedule, clipping, optimizer ------------------------------------------

def huber_loss(pred, target, beta: float = 5.0) -> Tensor:
    """Mean of ``0.5 r^2`` for ``|r| <= beta`` and ``beta (|r| - beta/2)`` beyond."""
    pred = as_tensor(pred)
    target = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=pred.data.dtype)
    if pred.shape != target.shape:
        raise DimensionError(f"huber_loss: {pred.shape} vs {target.shape}")
    r = pred.data - target
    a = np.abs(r)
    quad = a <= beta
    vals = np.where(quad, 0.5 * r * r, beta * (a - 0.5 * beta))
    n = max(r.size, 1)
    dr = np.where(quad, r, beta * np.sign(r)) / n
    return make_node(np.asarray(vals.sum() / n), (pred,), lambda g: (g * dr,), "huber")


def cosine_warmup_lr(epoch: int, peak: float, warmup: int = 5, total: int = 50) -> float:
    if not 0 <= epoch < total:
        raise ValueError(f"epoch {epoch} outside schedule [0, {total})")
    if epoch < warmup:
        return peak * (epoch + 1) / warmup
    return peak * 0.5 * (1.0 + math.cos(math.pi * (epoch - warmup) / (total - warmup)))


def clip_grad_norm(grads: list[np.ndarray], max_norm: float = 1.0) -> tuple[list[np.ndarray], float]:
    """Rescale all gradients together so their global L2 norm is at most ``max_norm``."""
    norm = math.sqrt(math.fsum(float((g.astype(np.float64) ** 2).sum()) for g in grads))
    if norm > max_norm:
        scale = max_norm / norm
        return [g * scale for g in grads], norm
    return list(grads), norm


@dataclass
class AdamState:
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adamw_step(params: list[Tensor], grads: list[np.ndarray], state: AdamState, lr: float,
               wd: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """In-place bias-corrected Adam update with decoupled decay ``theta -= lr*wd*theta``."""
    if len(params) != len(grads):
        raise DimensionError("params and grads differ in length")
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient")
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    state.step += 1
    c1 = 1.0 - beta1 ** state.step
    c2 = 1.0 - beta2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g.shape != p.shape:
            raise DimensionError(f"gradient {g.shape} does not match parameter {p.shape}")
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p.data *= 1.0 - lr * wd
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


class ParamGroups:
    """Backbone parameters at one peak rate, everything else at the task rate."""

    def __init__(self, model: DualViewModel, cfg: TrainConfig):
        self.groups = [("backbone", model.backbone_parameters(), cfg.lr_backbone),
                       ("task", model.task_parameters(), cfg.lr_task)]
        self.states = [AdamState() for _ in self.groups]
        names = [id(p) for _, ps, _ in self.groups for p in ps]
        if len(names) != len(set(names)) or set(names) != {id(p) for p in model.parameters()}:
            raise ConfigurationError("parameter groups do not partition the model parameters")

    def all_params(self) -> list[Tensor]:
        return [p for _, ps, _ in self.groups for p in ps]


# -- early stopping ---------------------------------------------------------------

@dataclass
class EarlyStopState:
    """Stop once ``patience`` consecutive epochs fail to beat the best metric."""
    patience: int
    best_metric: float = -math.inf
    best_epoch: int = -1
    epochs_since_improve: int = 0

    def update(self, epoch: int, metric: float) -> tuple[bool, bool]:
        """Returns ``(improved, stop)``."""
        if metric > self.best_metric:
            self.best_metric, self.best_epoch, self.epochs_since_improve = metric, epoch, 0
            return True, False
        self.epochs_since_improve += 1
        return False, self.epochs_since_improve >= self.patience


# -- data and the fold loop -----------------------------------------------------------

@dataclass
class ViewData:
    """Pre-split, resized views and targets for a whole dataset."""
    left: np.ndarray          # [n, S, S, 3]
    right: np.ndarray
    targets: np.ndarray       # [n, 5] grams
    meta: np.ndarray | None   # [n, 23]
    ids: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.targets)


@dataclass
class FoldReport:
    fold: int
    train_loss: list[float] = field(default_factory=list)
    val_weighted_r2: list[float] = field(default_factory=list)
    lr_backbone: list[float] = field(default_factory=list)
    lr_task: list[float] = field(default_factory=list)
    best_epoch: int = -1
    best_metric: float = -math.inf
    best_report: MetricReport | None = None
    epochs_run: int = 0
    wall_time: float = 0.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["best_report"] = None if self.best_report is None else self.best_report.to_dict()
        return d


def _batch_views(data: ViewData, idx: np.ndarray, cfg: TrainConfig, policy: AugmentPolicy,
                 rng: RngStream | None):
    left, right = data.left[idx], data.right[idx]
    if rng is not None and cfg.augment:
        left, right = left.copy(), right.copy()
        for n in range(len(idx)):
            left[n], right[n], _ = augment_pair(left[n], right[n], policy, rng)
    return left, right


def predict_log(model: DualViewModel, data: ViewData, idx, with_meta: bool,
                batch_size: int = 64) -> np.ndarray:
    """Eval-mode log1p predictions ``[len(idx), 5]``."""
    idx = np.asarray(idx)
    out = []
    with no_grad():
        for s in range(0, len(idx), batch_size):
            b = idx[s:s + batch_size]
            meta = data.meta[b] if (with_meta and data.meta is not None) else None
            out.append(model.forward(data.left[b], data.right[b], meta, "eval").data)
    return np.log1p(np.concatenate(out).astype(np.float64))


def train_fold(model: DualViewModel, data: ViewData, train_idx, val_idx, cfg: TrainConfig,
               rng: RngStream, fold: int = 0, augment_policy: AugmentPolicy | None = None,
               log=None) -> FoldReport:
    """Train one freshly initialized model; the best-epoch weights are restored at the end."""
    start = time.perf_counter()
    train_idx, val_idx = np.asarray(train_idx), np.asarray(val_idx)
    policy = augment_policy or AugmentPolicy()
    groups = ParamGroups(model, cfg)
    params = groups.all_params()
    cols = slice(0, 5) if cfg.loss_targets == "all" else slice(0, 3)
    y_log = np.log1p(data.targets)
    use_meta = model.meta is not None
    stopper = EarlyStopState(cfg.patience)
    report = FoldReport(fold)
    best_state = None
    for epoch in range(cfg.max_epochs):
        erng = rng.child(("epoch", epoch))
        lrs = [cosine_warmup_lr(epoch, peak, cfg.warmup_epochs, cfg.max_epochs)
               for _, _, peak in groups.groups]
        order = train_idx[erng.child("shuffle").permutation(len(train_idx))]
        aug_rng, drop_rng = erng.child("augment"), erng.child("dropout")
        losses = []
        for b, s in enumerate(range(0, len(order), cfg.batch_size)):
            idx = order[s:s + cfg.batch_size]
            left, right = _batch_views(data, idx, cfg, policy, aug_rng)
            meta = data.meta[idx] if use_meta else None
            model.zero_grad()
            pred = model.forward(left, right, meta, "train", drop_rng.child(b))
            loss = huber_loss(log1p(pred)[:, cols], y_log[idx][:, cols], cfg.huber_beta)
            if not np.isfinite(loss.data):
                raise TrainingAborted(f"fold {fold} epoch {epoch} batch {b}: non-finite loss {loss.item()}")
            loss.backward()
            grads = [np.zeros_like(p.data) if p.grad is None else p.grad for p in params]
            grads, _ = clip_grad_norm(grads, cfg.clip_norm)
            k = 0
            try:
                for (_, ps, _), state, lr in zip(groups.groups, groups.states, lrs):
                    adamw_step(ps, grads[k:k + len(ps)], state, lr, cfg.weight_decay,
                               cfg.beta1, cfg.beta2, cfg.eps)
                    k += len(ps)
            except NumericError as exc:
                raise TrainingAborted(f"fold {fold} epoch {epoch} batch {b}: {exc}") from exc
            losses.append(float(loss.data) * len(idx))
        with_meta = use_meta and cfg.eval_metadata == "present"
        try:
            metrics = evaluate(predict_log(model, data, val_idx, with_meta), y_log[val_idx])
        except MetricError as exc:
            raise TrainingAborted(f"fold {fold} epoch {epoch}: {exc}") from exc
        report.train_loss.append(math.fsum(losses) / len(order))
        report.val_weighted_r2.append(metrics.weighted_r2)
        report.lr_backbone.append(lrs[0])
        report.lr_task.append(lrs[1])
        improved, stop = stopper.update(epoch, metrics.weighted_r2)
        if improved:
            best_state = {k: v.copy() for k, v in model.state_dict().items()}
            report.best_report = metrics
        if log is not None:
            log(f"fold {fold} epoch {epoch:2d} loss {report.train_loss[-1]:.4f} "
                f"val wR2 {metrics.weighted_r2:.4f}{' *' if improved else ''}")
        report.epochs_run = epoch + 1
        if stop:
            break
    if best_state is not None:
        model.load_state_dict(best_state)
    report.best_epoch, report.best_metric = stopper.best_epoch, stopper.best_metric
    report.wall_time = time.perf_counter() - start
    return report
