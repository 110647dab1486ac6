"""Cross-view fusion blocks over the concatenated ``[left ; right]`` token sequence.

Five kinds share one contract: ``[..., L, d] -> [..., L, d]``.

* ``identity``      no parameters, tokens pass straight to pooling
* ``gated_dwconv``  ``x + drop(W_p . dwconv_k(LN(x) * sigmoid(W_g . LN(x))))``
* ``cvga``          gated bidirectional cross-attention between the two halves
* ``full_ssm``      unidirectional Mamba-style selective scan block
* ``bidir_ssm``     gated_dwconv sublayer followed by a weight-tied two-way scan
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import (
    ConfigurationError,
    DimensionError,
    RngStream,
    Tensor,
    concat,
    depthwise_conv1d,
    dropout,
    flip,
    get_dtype,
    layer_norm,
    linear,
    multihead_attention,
    no_grad,
    selective_scan,
    sigmoid,
    silu,
    softplus,
    split,
)
from .nn import Module, uniform_fan_in

KINDS = ("identity", "gated_dwconv", "cvga", "full_ssm", "bidir_ssm")


@dataclass
class FusionConfig:
    kind: str = "gated_dwconv"
    depth: int = 2
    d_model: int = 1024
    kernel: int = 5
    heads: int = 8
    d_head: int = 128
    d_state: int = 16
    expand: int = 2
    dt_rank: int | None = None
    dropout_p: float = 0.2

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown fusion kind {self.kind!r}; expected one of {KINDS}")
        if self.depth < 0:
            raise ConfigurationError("fusion depth must be >= 0")
        if self.kernel % 2 == 0:
            raise ConfigurationError(f"fusion kernel must be odd, got {self.kernel}")
        if self.kind == "cvga" and self.heads * self.d_head != self.d_model:
            raise ConfigurationError(
                f"cvga needs heads*d_head == d_model ({self.heads}*{self.d_head} != {self.d_model})")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigurationError("dropout_p must lie in [0, 1)")

    @property
    def d_inner(self) -> int:
        return self.expand * self.d_model

    @property
    def rank(self) -> int:
        return self.dt_rank if self.dt_rank is not None else math.ceil(self.d_model / 16)


# -- blocks ------------------------------------------------------------------

class GatedDWConvBlock(Module):
    def __init__(self, cfg: FusionConfig, rng: RngStream):
        super().__init__()
        d, k = cfg.d_model, cfg.kernel
        self.p = cfg.dropout_p
        self.add_layer_norm("ln", d)
        self.add_linear(rng, "g", d, d)
        self.params["conv_k"] = uniform_fan_in(rng, (d, k), k)
        self.params["conv_b"] = uniform_fan_in(rng, (d,), k)
        self.add_linear(rng, "p", d, d)

    @staticmethod
    def count(cfg: FusionConfig) -> int:
        d, k = cfg.d_model, cfg.kernel
        return 2 * d + (d * d + d) + (d * k + d) + (d * d + d)

    def output_projection(self) -> list[str]:
        return ["w_p", "b_p"]

    def __call__(self, x: Tensor, mode: str = "eval", rng: RngStream | None = None) -> Tensor:
        P = self.params
        h = layer_norm(x, P["ln_gamma"], P["ln_beta"])
        gated = h * sigmoid(linear(h, P["w_g"], P["b_g"]))
        y = linear(depthwise_conv1d(gated, P["conv_k"], P["conv_b"]), P["w_p"], P["b_p"])
        return x + dropout(y, self.p, mode, rng)


class CVGABlock(Module):
    """Cross-view gated attention with one parameter set for both directions.

    ``L' = L + sigmoid(W_gate . LN(L)) * attn(q=LN(L), kv=LN(R))`` and the mirror
    update for ``R``; the halves are re-concatenated left then right.
    """

    def __init__(self, cfg: FusionConfig, rng: RngStream):
        super().__init__()
        d = cfg.d_model
        self.heads, self.d_head, self.p = cfg.heads, cfg.d_head, cfg.dropout_p
        self.add_layer_norm("ln", d)
        for name in ("q", "k", "v", "o"):
            self.add_linear(rng, name, d, d)
        self.add_linear(rng, "gate", d, d)

    @staticmethod
    def count(cfg: FusionConfig) -> int:
        d = cfg.d_model
        return 2 * d + 5 * (d * d + d)

    def output_projection(self) -> list[str]:
        return ["w_o", "b_o"]

    def _half(self, q: Tensor, kv: Tensor, mode, rng) -> Tensor:
        P = self.params
        att = multihead_attention(q, kv, kv, P, self.heads, self.d_head)
        gate = sigmoid(linear(q, P["w_gate"], P["b_gate"]))
        return gate * dropout(att, self.p, mode, rng)

    def __call__(self, x: Tensor, mode: str = "eval", rng: RngStream | None = None) -> Tensor:
        n = x.shape[-2]
        if n % 2:
            raise DimensionError(f"cvga needs an even token count, got {n}")
        P = self.params
        left, right = split(x, [n // 2, n // 2], axis=-2)
        ln = layer_norm(left, P["ln_gamma"], P["ln_beta"])
        rn = layer_norm(right, P["ln_gamma"], P["ln_beta"])
        new_left = left + self._half(ln, rn, mode, rng)
        new_right = right + self._half(rn, ln, mode, rng)
        return concat([new_left, new_right], axis=-2)


def _inv_softplus(y: np.ndarray) -> np.ndarray:
    return y + np.log(-np.expm1(-y))


class SelectiveScanMixer(Module):
    """Pre-norm Mamba mixer without the internal causal convolution.

    ``LN -> in_proj (u, z) -> silu(u) -> x_proj (dt, B, C) -> softplus(dt_proj)``
    then the scan, output gate ``silu(z)`` and ``out_proj``. With
    ``bidirectional`` the same parameters scan both directions and the two
    results are summed before gating.
    """

    def __init__(self, cfg: FusionConfig, rng: RngStream, bidirectional: bool = False):
        super().__init__()
        d, di, ds, r = cfg.d_model, cfg.d_inner, cfg.d_state, cfg.rank
        self.sizes = (di, ds, r)
        self.bidirectional = bidirectional
        self.p = cfg.dropout_p
        dt = get_dtype()
        self.add_layer_norm("ln", d)
        self.params["w_in"] = uniform_fan_in(rng, (d, 2 * di), d)
        self.params["w_x"] = uniform_fan_in(rng, (di, r + 2 * ds), di)
        self.params["w_dt"] = uniform_fan_in(rng, (r, di), r)
        step = np.exp(rng.uniform(math.log(1e-3), math.log(1e-1), di))
        self.params["b_dt"] = Tensor(_inv_softplus(step).astype(dt), requires_grad=True)
        a_log = np.log(np.tile(np.arange(1, ds + 1, dtype=np.float64), (di, 1)))
        self.params["a_log"] = Tensor(a_log.astype(dt), requires_grad=True)
        self.params["d_skip"] = Tensor(np.ones(di, dtype=dt), requires_grad=True)
        self.params["w_out"] = uniform_fan_in(rng, (di, d), di)

    @staticmethod
    def count(cfg: FusionConfig) -> int:
        d, di, ds, r = cfg.d_model, cfg.d_inner, cfg.d_state, cfg.rank
        return 2 * d + d * 2 * di + di * (r + 2 * ds) + (r * di + di) + di * ds + di + di * d

    def scan_terms(self, x: Tensor):
        """Inner sequence, step sizes, B, C and the output gate for ``x``."""
        P = self.params
        di, ds, r = self.sizes
        h = layer_norm(x, P["ln_gamma"], P["ln_beta"])
        u, z = split(linear(h, P["w_in"]), [di, di], axis=-1)
        u = silu(u)
        dt, B, C = split(linear(u, P["w_x"]), [r, ds, ds], axis=-1)
        delta = softplus(linear(dt, P["w_dt"], P["b_dt"]))
        return u, delta, B, C, z

    def mix(self, x: Tensor) -> Tensor:
        """Scan contribution before gating, summed over directions."""
        u, delta, B, C, _ = self.scan_terms(x)
        return self._scan(u, delta, B, C)

    def _scan(self, u, delta, B, C):
        P = self.params
        A = -P["a_log"].exp()
        y = selective_scan(u, delta, A, B, C, P["d_skip"])
        if self.bidirectional:
            ax = u.ndim - 2
            y_rev = selective_scan(flip(u, ax), flip(delta, ax), A, flip(B, ax), flip(C, ax),
                                   P["d_skip"])
            y = y + flip(y_rev, ax)
        return y

    def __call__(self, x: Tensor, mode: str = "eval", rng: RngStream | None = None) -> Tensor:
        u, delta, B, C, z = self.scan_terms(x)
        y = self._scan(u, delta, B, C) * silu(z)
        return x + dropout(linear(y, self.params["w_out"]), self.p, mode, rng)


class FullSSMBlock(SelectiveScanMixer):
    def __init__(self, cfg: FusionConfig, rng: RngStream):
        super().__init__(cfg, rng, bidirectional=False)

    def output_projection(self) -> list[str]:
        return ["w_out"]


class BidirSSMBlock(Module):
    def __init__(self, cfg: FusionConfig, rng: RngStream):
        super().__init__()
        self.conv = GatedDWConvBlock(cfg, rng.child("conv"))
        self.scan = SelectiveScanMixer(cfg, rng.child("scan"), bidirectional=True)

    @staticmethod
    def count(cfg: FusionConfig) -> int:
        return GatedDWConvBlock.count(cfg) + SelectiveScanMixer.count(cfg)

    def output_projection(self) -> list[str]:
        return ["conv.w_p", "conv.b_p", "scan.w_out"]

    def __call__(self, x: Tensor, mode: str = "eval", rng: RngStream | None = None) -> Tensor:
        return self.scan(self.conv(x, mode, rng), mode, rng)


BLOCKS = {
    "gated_dwconv": GatedDWConvBlock,
    "cvga": CVGABlock,
    "full_ssm": FullSSMBlock,
    "bidir_ssm": BidirSSMBlock,
}


def block_param_count(cfg: FusionConfig) -> int:
    """Symbolic trainable-parameter count of one block of ``cfg.kind``."""
    if cfg.kind == "identity":
        return 0
    return BLOCKS[cfg.kind].count(cfg)


def param_count(cfg: FusionConfig) -> int:
    """Symbolic trainable-parameter count of the whole stack."""
    if cfg.kind == "identity":
        return 0
    return cfg.depth * block_param_count(cfg)


class FusionStack(Module):
    def __init__(self, cfg: FusionConfig, rng: RngStream):
        super().__init__()
        self.config = cfg
        n = 0 if cfg.kind == "identity" else cfg.depth
        self.blocks = [BLOCKS[cfg.kind](cfg, rng.child(f"block{i}")) for i in range(n)]

    def __call__(self, x: Tensor, mode: str = "eval", rng: RngStream | None = None) -> Tensor:
        for i, block in enumerate(self.blocks):
            x = block(x, mode, None if rng is None else rng.child(i))
        return x


def fusion_forward(stack: FusionStack, x: Tensor, mode: str = "eval",
                   rng: RngStream | None = None) -> Tensor:
    return stack(x, mode, rng)


def zero_output_projections(module: Module) -> None:
    """Zero every block's output-side projection, making it the identity map."""
    blocks = module.blocks if isinstance(module, FusionStack) else [module]
    for block in blocks:
        named = dict(block.named_parameters())
        for key in block.output_projection():
            named[key].data[...] = 0.0


@dataclass
class ProbeResult:
    """Per perturbed position: influence radius and the span of affected tokens."""
    radius: dict[int, int] = field(default_factory=dict)
    span: dict[int, tuple[int, int]] = field(default_factory=dict)

    @property
    def max_radius(self) -> int:
        return max(self.radius.values(), default=0)


def receptive_field_probe(stack: FusionStack, L: int, epsilon: float = 1e-3,
                          positions=None, rel_tol: float = 1e-9,
                          rng: RngStream | None = None) -> ProbeResult:
    """Perturb one token at a time and record which output tokens move.

    Each perturbation has max-norm ``epsilon`` along a fixed random direction.
    A token counts as influenced when its largest output change exceeds
    ``rel_tol * epsilon``; eval mode keeps the map deterministic.
    """
    rng = rng or RngStream(0, 1)
    d = stack.config.d_model
    x = rng.normal(0.0, 1.0, (L, d))
    # a uniform shift would be erased by LayerNorm, so perturb along a random direction
    direction = rng.normal(0.0, 1.0, d)
    direction /= np.abs(direction).max()
    positions = range(L) if positions is None else positions
    out = ProbeResult()
    with no_grad():
        base = stack(Tensor(x), "eval").data
        for j in positions:
            xp = x.copy()
            xp[j] += epsilon * direction
            diff = np.abs(stack(Tensor(xp), "eval").data - base).max(axis=-1)
            hit = np.nonzero(diff > rel_tol * epsilon)[0]
            if hit.size == 0:
                out.radius[j], out.span[j] = 0, (j, j)
            else:
                out.radius[j] = int(np.abs(hit - j).max())
                out.span[j] = (int(hit.min()), int(hit.max()))
    return out
