"""Self-audits: parameter accounting at full width and a finite-difference gradient suite."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    RngStream,
    Tensor,
    activation,
    depthwise_conv1d,
    dropout,
    grad_check,
    layer_norm,
    linear,
    mean_pool,
    multihead_attention,
    precision,
    selective_ssm_scan,
    softplus,
)
from .fusion import KINDS, BLOCKS, FusionConfig, FusionStack, param_count
from .model import (BackboneSpec, DualViewModel, Head, MetadataBranch, ModelConfig,
                    head_param_count)

# published per-block and two-block totals at d_model=1024, for comparison only
REFERENCE_COUNTS = {
    "gated_dwconv": (2.11e6, 4.21e6),
    "cvga": (5.25e6, 10.50e6),
    "bidir_ssm": (8.77e6, 17.55e6),
    "full_ssm": (6.67e6, 13.34e6),
    "identity": (0.0, 0.0),
}
REFERENCE_HEADS = 1.58e6
REFERENCE_TASK_TOTAL = 5.79e6
REFERENCE_METADATA = 1.12e6


@dataclass
class AuditRow:
    component: str
    symbolic: int
    allocated: int
    reference: float | None = None

    @property
    def consistent(self) -> bool:
        return self.symbolic == self.allocated

    @property
    def rel_dev(self) -> float | None:
        if self.reference is None:
            return None
        if self.reference == 0:
            return 0.0 if self.symbolic == 0 else float("inf")
        return abs(self.symbolic - self.reference) / self.reference

    def fmt(self) -> str:
        ref = "-" if self.reference is None else f"{self.reference / 1e6:.2f}M"
        dev = "" if self.rel_dev is None else f" ({100 * self.rel_dev:.2f}%)"
        ok = "ok" if self.consistent else "MISMATCH"
        return (f"{self.component:<28} symbolic {self.symbolic:>11,d} ({self.symbolic / 1e6:.2f}M)  "
                f"allocated {self.allocated:>11,d}  ref {ref}{dev}  {ok}")


def fusion_audit(kind: str, d_model: int = 1024, depth: int = 2, **kw) -> list[AuditRow]:
    cfg = FusionConfig(kind=kind, depth=depth, d_model=d_model, **kw)
    per_ref, tot_ref = REFERENCE_COUNTS[kind] if d_model == 1024 and depth == 2 else (None, None)
    with precision("f32"):
        stack = FusionStack(cfg, RngStream(0).child(("audit", kind)))
    alloc = stack.num_parameters()
    per_block = 0 if kind == "identity" else BLOCKS[kind].count(cfg)
    per_alloc = stack.blocks[0].num_parameters() if stack.blocks else 0
    return [AuditRow(f"{kind} per block", per_block, per_alloc, per_ref),
            AuditRow(f"{kind} x{depth}", param_count(cfg), alloc, tot_ref)]


def head_audit(d_model: int = 1024, hidden: int = 512) -> AuditRow:
    with precision("f32"):
        rng = RngStream(0).child("audit-heads")
        alloc = sum(Head(d_model, hidden, 0.0, rng.child(i)).num_parameters() for i in range(3))
    ref = REFERENCE_HEADS if (d_model, hidden) == (1024, 512) else None
    return AuditRow("heads (3)", head_param_count(d_model, hidden), alloc, ref)


def metadata_audit(d_model: int = 1024, hidden: int = 64) -> AuditRow:
    with precision("f32"):
        alloc = MetadataBranch(d_model, hidden, 0.2, RngStream(0).child("audit-meta")).num_parameters()
    ref = REFERENCE_METADATA if (d_model, hidden) == (1024, 64) else None
    return AuditRow("metadata branch", MetadataBranch.count(d_model, hidden), alloc, ref)


def full_audit(kinds=KINDS, d_model: int = 1024, depth: int = 2, head_hidden: int = 512,
               metadata: bool = False, primary: str = "gated_dwconv") -> list[AuditRow]:
    """Per-kind fusion rows, heads, optional metadata branch and the task-specific total
    for the ``primary`` kind."""
    rows: list[AuditRow] = []
    totals = {}
    for kind in kinds:
        kr = fusion_audit(kind, d_model, depth)
        rows += kr
        totals[kind] = kr[1]
    heads = head_audit(d_model, head_hidden)
    rows.append(heads)
    extra = []
    if metadata:
        extra.append(metadata_audit(d_model))
        rows += extra
    if primary in totals:
        f = totals[primary]
        sym = f.symbolic + heads.symbolic + sum(r.symbolic for r in extra)
        alloc = f.allocated + heads.allocated + sum(r.allocated for r in extra)
        ref = (REFERENCE_TASK_TOTAL if (primary, d_model, depth, head_hidden, metadata)
               == ("gated_dwconv", 1024, 2, 512, False) else None)
        rows.append(AuditRow(f"task-specific total ({primary})", sym, alloc, ref))
    return rows


# -- gradient suite ------------------------------------------------------

def _rand(rng: RngStream, *shape, positive: bool = False) -> Tensor:
    a = rng.normal(0.0, 1.0, shape)
    if positive:
        a = np.abs(a) + 0.1
    return Tensor(a, requires_grad=True)


def _weighted(out: Tensor, rng: RngStream) -> Tensor:
    # a random linear functional exercises every output entry with a distinct weight
    return (out * Tensor(rng.normal(0.0, 1.0, out.shape))).sum()


def op_cases(rng: RngStream):
    """Yields ``(name, shape_label, objective, params)`` for each differentiable op."""
    for L, di, do in [(3, 4, 2), (5, 3, 6), (2, 7, 3)]:
        x, w, b = _rand(rng, L, di), _rand(rng, di, do), _rand(rng, do)
        r = rng.child(("lin", L))
        yield "linear", f"{L}x{di}->{do}", (lambda x=x, w=w, b=b, r=r: _weighted(linear(x, w, b), RngStream(r.seed, r.stream_id))), [x, w, b]
    for shape in [(4, 8), (2, 3, 5), (6, 2)]:
        x, g, b = _rand(rng, *shape), _rand(rng, shape[-1]), _rand(rng, shape[-1])
        r = rng.child(("ln", shape))
        yield "layer_norm", "x".join(map(str, shape)), (lambda x=x, g=g, b=b, r=r: _weighted(layer_norm(x, g, b), RngStream(r.seed, r.stream_id))), [x, g, b]
    for L, d, k in [(16, 4, 5), (7, 3, 3), (9, 2, 5)]:
        x, kk, b = _rand(rng, L, d), _rand(rng, d, k), _rand(rng, d)
        r = rng.child(("conv", L))
        yield "depthwise_conv1d", f"L{L} d{d} k{k}", (lambda x=x, kk=kk, b=b, r=r: _weighted(depthwise_conv1d(x, kk, b), RngStream(r.seed, r.stream_id))), [x, kk, b]
    for kind in ("sigmoid", "gelu", "softplus", "silu"):
        for shape in [(5,), (3, 4), (2, 2, 3)]:
            x = _rand(rng, *shape)
            r = rng.child((kind, shape))
            yield f"activation:{kind}", "x".join(map(str, shape)), (lambda x=x, kind=kind, r=r: _weighted(activation(kind, x), RngStream(r.seed, r.stream_id))), [x]
    for shape in [(6,), (3, 5), (2, 4, 3)]:
        x = _rand(rng, *shape)
        r = rng.child(("drop", shape))
        mask_rng = rng.child(("dropmask", shape))
        # identical mask on every evaluation: re-seed the stream each call
        yield "dropout", "x".join(map(str, shape)), (lambda x=x, r=r, m=mask_rng: _weighted(dropout(x, 0.3, "train", RngStream(m.seed, m.stream_id)), RngStream(r.seed, r.stream_id))), [x]
    for Lq, Lk, h, dh in [(4, 4, 2, 3), (3, 5, 1, 4), (2, 3, 2, 2)]:
        d = h * dh
        q, kv = _rand(rng, Lq, d), _rand(rng, Lk, d)
        P = {}
        for n in ("q", "k", "v", "o"):
            P[f"w_{n}"] = _rand(rng, d, d)
            P[f"b_{n}"] = _rand(rng, d)
        r = rng.child(("attn", Lq))
        yield "multihead_attention", f"Lq{Lq} Lk{Lk} h{h} dh{dh}", (lambda q=q, kv=kv, P=P, h=h, dh=dh, r=r: _weighted(multihead_attention(q, kv, kv, P, h, dh), RngStream(r.seed, r.stream_id))), [q, kv] + list(P.values())
    for shape in [(8, 3), (1, 4), (2, 5, 2)]:
        x = _rand(rng, *shape)
        r = rng.child(("pool", shape))
        yield "mean_pool", "x".join(map(str, shape)), (lambda x=x, r=r: _weighted(mean_pool(x), RngStream(r.seed, r.stream_id))), [x]
    scan_shapes = [(6, 3, 2), (5, 2, 3), (4, 4, 1)]
    for (L, di, ds), direction in [(sh, dr) for dr in ("forward", "backward") for sh in scan_shapes]:
        x = _rand(rng, L, di)
        delta = _rand(rng, L, di, positive=True)
        A = Tensor(-np.abs(rng.normal(0.0, 1.0, (di, ds))) - 0.1, requires_grad=True)
        B, C, D = _rand(rng, L, ds), _rand(rng, L, ds), _rand(rng, di)
        r = rng.child(("scan", L, direction))
        yield (f"selective_ssm_scan:{direction}", f"L{L} di{di} ds{ds}",
               (lambda x=x, A=A, B=B, C=C, delta=delta, D=D, dr=direction, r=r:
                _weighted(selective_ssm_scan(x, A, B, C, delta, D, dr), RngStream(r.seed, r.stream_id))),
               [x, A, B, C, delta, D])


def block_cases(rng: RngStream):
    """Every fusion kind with depth 1 on three toy shapes."""
    shapes = [(8, 16, 2, 8), (6, 8, 2, 4), (4, 12, 3, 4)]
    for kind in KINDS:
        if kind == "identity":
            continue
        for L, d, h, dh in shapes:
            cfg = FusionConfig(kind=kind, depth=1, d_model=d, heads=h, d_head=dh, d_state=4,
                               dt_rank=2, dropout_p=0.0)
            stack = FusionStack(cfg, rng.child((kind, L, d)))
            x = _rand(rng, L, d)
            r = rng.child(("blk", kind, L))
            yield (f"fusion:{kind}", f"L{L} d{d}",
                   (lambda s=stack, x=x, r=r: _weighted(s(x, "eval"), RngStream(r.seed, r.stream_id))),
                   [x] + stack.parameters())


def model_cases(rng: RngStream):
    """End-to-end toy model (backbone, fusion, heads, metadata) on three settings."""
    settings = [("gated_dwconv", False), ("cvga", True), ("bidir_ssm", False)]
    for kind, meta in settings:
        cfg = ModelConfig(BackboneSpec(view_size=8, patch=4, d_model=8),
                          FusionConfig(kind=kind, depth=1, d_model=8, heads=2, d_head=4, d_state=2,
                                       dt_rank=1, dropout_p=0.0),
                          head_hidden=4, head_dropout=0.0, metadata=meta, meta_hidden=4)
        model = DualViewModel(cfg, rng.child(("model", kind)))
        left = rng.random((2, 8, 8, 3))
        right = rng.random((2, 8, 8, 3))
        m = rng.random((2, 23)) if meta else None
        yield ("model", f"{kind}{'+meta' if meta else ''} B2 S8 d8",
               (lambda model=model, l=left, r_=right, m=m: model.forward(l, r_, m, "eval").sum()),
               model.parameters())


def gradient_suite(seed: int = 0, step: float = 1e-5, tol: float = 1e-4, include_model: bool = True,
                   max_entries: int | None = 60):
    """Run every case; returns ``[(name, shape, GradCheckReport)]``."""
    rng = RngStream(seed).child("gradient-suite")
    cases = list(op_cases(rng.child("ops"))) + list(block_cases(rng.child("blocks")))
    if include_model:
        cases += list(model_cases(rng.child("model")))
    out = []
    with precision("f64"):
        for name, shape, f, params in cases:
            rep = grad_check(f, params, step=step, tol=tol, max_entries=max_entries,
                             rng=rng.child(("probe", name, shape)))
            out.append((name, shape, rep))
    return out
