"""Dual-view regression model: shared backbone, fusion, pooling, compositional heads.

The three heads predict Green, Dead and Clover in grams; GDM and Total are
always sums of those outputs and never predicted on their own.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .autodiff import (
    ConfigurationError,
    DimensionError,
    RngStream,
    Tensor,
    concat,
    dropout,
    gelu,
    get_dtype,
    linear,
    mean_pool,
    softplus,
    stack,
)
from .fusion import FusionConfig, FusionStack
from .metadata import META_DIM, SampleMeta, Vocabulary, metadata_encode
from .nn import Module
from .views import split_views

TARGETS = ("green", "dead", "clover", "gdm", "total")
IMAGENET_MEAN = np.array([0.485, 0.456, 0.406])
IMAGENET_STD = np.array([0.229, 0.224, 0.225])
CHECKPOINT_FORMAT = 1


@dataclass
class BackboneSpec:
    kind: str = "toy_patch"
    view_size: int = 512
    patch: int = 16
    d_model: int = 1024

    def __post_init__(self):
        if self.kind != "toy_patch":
            raise ConfigurationError(f"unsupported backbone kind {self.kind!r}")
        if self.view_size % self.patch:
            raise ConfigurationError("view_size must be divisible by patch")

    @property
    def grid(self) -> tuple[int, int]:
        n = self.view_size // self.patch
        return n, n

    @property
    def tokens(self) -> int:
        gh, gw = self.grid
        return gh * gw


@dataclass
class ModelConfig:
    backbone: BackboneSpec = field(default_factory=BackboneSpec)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    head_hidden: int = 512
    head_dropout: float = 0.2
    metadata: bool = False
    meta_hidden: int = 64
    meta_drop_p: float = 0.2

    def __post_init__(self):
        if self.fusion.d_model != self.backbone.d_model:
            raise ConfigurationError(
                f"fusion d_model {self.fusion.d_model} != backbone d_model {self.backbone.d_model}")


class ToyPatchBackbone(Module):
    """Patchify, linear embed, learned positional offsets: one view -> ``[grid, d]`` tokens."""

    def __init__(self, spec: BackboneSpec, rng: RngStream):
        super().__init__()
        self.spec = spec
        p = spec.patch
        self.add_linear(rng, "embed", 3 * p * p, spec.d_model)
        self.params["pos"] = Tensor(rng.normal(0.0, 0.02, (spec.tokens, spec.d_model)).astype(get_dtype()),
                                    requires_grad=True)

    def patchify(self, views: np.ndarray) -> np.ndarray:
        """``[..., S, S, 3] -> [..., grid, p*p*3]`` in row-major patch order."""
        s, p = self.spec.view_size, self.spec.patch
        if views.shape[-3:] != (s, s, 3):
            raise DimensionError(f"view shape {views.shape[-3:]} != ({s}, {s}, 3)")
        n = s // p
        lead = views.shape[:-3]
        x = views.reshape(lead + (n, p, n, p, 3))
        x = np.moveaxis(x, -3, -4)                       # [..., n, n, p, p, 3]
        return x.reshape(lead + (n * n, p * p * 3))

    def __call__(self, views: np.ndarray) -> Tensor:
        P = self.params
        patches = Tensor(self.patchify(np.asarray(views)).astype(get_dtype()))
        return linear(patches, P["w_embed"], P["b_embed"]) + P["pos"]


def encode_views(backbone: ToyPatchBackbone, left: np.ndarray, right: np.ndarray) -> Tensor:
    """Encode both views with the same parameters and concatenate left then right."""
    if np.shape(left) != np.shape(right):
        raise DimensionError("left and right views differ in shape")
    return concat([backbone(left), backbone(right)], axis=-2)


class Head(Module):
    def __init__(self, d: int, hidden: int, p: float, rng: RngStream):
        super().__init__()
        self.p = p
        self.add_linear(rng, "1", d, hidden)
        self.add_linear(rng, "2", hidden, 1)

    def __call__(self, x: Tensor, mode: str, rng: RngStream | None) -> Tensor:
        P = self.params
        h = dropout(gelu(linear(x, P["w_1"], P["b_1"])), self.p, mode, rng)
        return softplus(linear(h, P["w_2"], P["b_2"]))


def head_param_count(d_model: int, hidden: int) -> int:
    return 3 * ((d_model * hidden + hidden) + (hidden + 1))


class MetadataBranch(Module):
    """23 -> hidden -> hidden MLP whose output is concatenated with the pooled
    features and projected back to the model width."""

    def __init__(self, d: int, hidden: int, drop_p: float, rng: RngStream):
        super().__init__()
        self.drop_p = drop_p
        self.add_linear(rng, "m1", META_DIM, hidden)
        self.add_linear(rng, "m2", hidden, hidden)
        self.add_linear(rng, "proj", d + hidden, d)

    @staticmethod
    def count(d: int, hidden: int) -> int:
        return (META_DIM * hidden + hidden) + (hidden * hidden + hidden) + ((d + hidden) * d + d)


def metadata_inject(pooled: Tensor, meta: np.ndarray | None, branch: MetadataBranch,
                    mode: str = "eval", rng: RngStream | None = None,
                    drop_p: float | None = None) -> Tensor:
    """Fuse pooled features ``[..., d]`` with raw metadata ``[..., 23]``.

    ``meta=None`` means metadata is absent and the all-zero vector is used. In
    train mode each sample's raw vector is zeroed with probability ``drop_p``.
    """
    drop_p = branch.drop_p if drop_p is None else drop_p
    lead = pooled.shape[:-1]
    m = np.zeros(lead + (META_DIM,)) if meta is None else np.array(meta, dtype=np.float64)
    if m.shape != lead + (META_DIM,):
        raise DimensionError(f"metadata shape {m.shape} != {lead + (META_DIM,)}")
    if mode == "train" and drop_p > 0:
        if rng is None:
            raise ConfigurationError("train-mode metadata dropout needs an RngStream")
        keep = rng.random(lead + (1,)) >= drop_p
        m = m * keep
    P = branch.params
    mt = Tensor(m.astype(get_dtype()))
    emb = gelu(linear(gelu(linear(mt, P["w_m1"], P["b_m1"])), P["w_m2"], P["b_m2"]))
    return linear(concat([pooled, emb], axis=-1), P["w_proj"], P["b_proj"])


class DualViewModel(Module):
    def __init__(self, cfg: ModelConfig, rng: RngStream):
        super().__init__()
        self.config = cfg
        d = cfg.backbone.d_model
        self.backbone = ToyPatchBackbone(cfg.backbone, rng.child("backbone"))
        self.fusion = FusionStack(cfg.fusion, rng.child("fusion"))
        self.heads = [Head(d, cfg.head_hidden, cfg.head_dropout, rng.child(f"head.{name}"))
                      for name in TARGETS[:3]]
        self.meta = (MetadataBranch(d, cfg.meta_hidden, cfg.meta_drop_p, rng.child("meta"))
                     if cfg.metadata else None)

    @staticmethod
    def normalize(views: np.ndarray) -> np.ndarray:
        return (views - IMAGENET_MEAN) / IMAGENET_STD

    def backbone_parameters(self) -> list[Tensor]:
        return self.backbone.parameters()

    def task_parameters(self) -> list[Tensor]:
        ids = {id(p) for p in self.backbone_parameters()}
        return [p for p in self.parameters() if id(p) not in ids]

    def forward(self, left: np.ndarray, right: np.ndarray, meta: np.ndarray | None = None,
                mode: str = "eval", rng: RngStream | None = None) -> Tensor:
        """Batched forward: views ``[B, S, S, 3]`` -> all five targets in grams, ``[B, 5]``.

        Without a metadata branch, passing ``meta`` is a configuration error;
        with one, ``meta=None`` takes the absent-metadata path.
        """
        if meta is not None and self.meta is None:
            raise ConfigurationError("metadata supplied to a model built without a metadata branch")
        rng = rng if rng is not None else (RngStream(0, 0) if mode == "train" else None)
        child = (lambda name: rng.child(name)) if rng is not None else (lambda name: None)
        tokens = encode_views(self.backbone, self.normalize(left), self.normalize(right))
        fused = self.fusion(tokens, mode, child("fusion"))
        pooled = mean_pool(fused)
        if self.meta is not None:
            pooled = metadata_inject(pooled, meta, self.meta, mode, child("meta"))
        green, dead, clover = (head(pooled, mode, child(f"head{i}"))[..., 0]
                               for i, head in enumerate(self.heads))
        gdm = green + clover
        total = gdm + dead
        return stack([green, dead, clover, gdm, total], axis=-1)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        named = dict(self.named_parameters())
        missing = set(named) ^ set(state)
        if missing:
            raise KeyError(f"checkpoint keys do not match model: {sorted(missing)[:5]}")
        for name, p in named.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise DimensionError(f"{name}: checkpoint shape {arr.shape} != {p.shape}")
            p.data = arr.astype(p.data.dtype, copy=True)


def predict(model: DualViewModel, img: np.ndarray, metadata: np.ndarray | SampleMeta | None = None,
            mode: str = "eval", rng: RngStream | None = None,
            vocab: Vocabulary = Vocabulary()) -> dict[str, float]:
    """Predict all five targets in grams for one full (unsplit) image."""
    if isinstance(metadata, SampleMeta):
        metadata = metadata_encode(metadata, vocab)
    left, right = split_views(img, model.config.backbone.view_size)
    meta = None if metadata is None else np.asarray(metadata)[None]
    out = model.forward(left[None], right[None], meta, mode, rng).data[0]
    return dict(zip(TARGETS, (float(v) for v in out)))


# -- checkpoints ---------------------------------------------------------------

def save_checkpoint(path, model: DualViewModel, extra: dict | None = None) -> None:
    """Flat ``name -> array`` npz plus a JSON header under ``__meta__``."""
    state = model.state_dict()
    header = {
        "format_version": CHECKPOINT_FORMAT,
        "config": _config_dict(model.config),
        "shapes": {k: list(v.shape) for k, v in state.items()},
        "dtypes": {k: str(v.dtype) for k, v in state.items()},
        "extra": extra or {},
    }
    arrays = dict(state)
    arrays["__meta__"] = np.array(json.dumps(header, sort_keys=True))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with np.load(path, allow_pickle=False) as data:
        header = json.loads(str(data["__meta__"]))
        if header.get("format_version") != CHECKPOINT_FORMAT:
            raise ValueError(f"unsupported checkpoint format {header.get('format_version')}")
        state = {k: data[k] for k in data.files if k != "__meta__"}
    for k, shape in header["shapes"].items():
        if list(state[k].shape) != shape:
            raise ValueError(f"checkpoint entry {k} has shape {state[k].shape}, header says {shape}")
    return state, header


def _config_dict(cfg: ModelConfig) -> dict:
    return asdict(cfg)


def model_from_checkpoint(path) -> DualViewModel:
    state, header = load_checkpoint(path)
    c = header["config"]
    cfg = ModelConfig(backbone=BackboneSpec(**c["backbone"]), fusion=FusionConfig(**c["fusion"]),
                      **{k: v for k, v in c.items() if k not in ("backbone", "fusion")})
    model = DualViewModel(cfg, RngStream(0, 0))
    model.load_state_dict(state)
    return model
