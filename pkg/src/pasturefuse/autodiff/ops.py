"""Differentiable building blocks: projections, normalization, convolution,
activations, attention, pooling and the selective state-space scan.

All ops accept arbitrary leading batch axes; the documented shapes describe the
trailing axes only.
"""
from __future__ import annotations

import math

import numpy as np

from .rng import RngStream
from .tensor import (
    ConfigurationError,
    DimensionError,
    NumericError,
    Tensor,
    as_tensor,
    concat,
    flip,
    make_node,
    matmul,
    swapaxes,
)

_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
_GELU_C = 0.044715


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w + b`` for ``x[..., d_in]`` and ``w[d_in, d_out]``."""
    x, w = as_tensor(x), as_tensor(w)
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise DimensionError(f"linear: input {x.shape} incompatible with weight {w.shape}")
    d_in, d_out = w.shape
    flat = x.data.reshape(-1, d_in)
    out = flat @ w.data
    if b is not None:
        b = as_tensor(b)
        if b.shape != (d_out,):
            raise DimensionError(f"linear: bias {b.shape} != ({d_out},)")
        out = out + b.data
    out = out.reshape(x.shape[:-1] + (d_out,))

    def bw(g):
        g2 = g.reshape(-1, d_out)
        gx = (g2 @ w.data.T).reshape(x.shape) if x.requires_grad else None
        gw = flat.T @ g2 if w.requires_grad else None
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    parents = (x, w) if b is None else (x, w, b)
    return make_node(out, parents, bw, "linear")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    x = as_tensor(x)
    d = x.shape[-1] if x.ndim else 0
    if d == 0:
        raise DimensionError("layer_norm over an empty last axis")
    if eps <= 0:
        raise ConfigurationError("layer_norm eps must be positive")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def bw(g):
        lead = tuple(range(g.ndim - 1))
        gxhat = g * gamma.data
        gx = inv * (gxhat - gxhat.mean(axis=-1, keepdims=True)
                    - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return make_node(out, (x, gamma, beta), bw, "layer_norm")


def depthwise_conv1d(x: Tensor, kernels: Tensor, bias: Tensor | None = None) -> Tensor:
    """Per-channel 1-D convolution along the sequence axis with zero same-padding.

    ``x[..., L, d]``, ``kernels[d, k]`` with odd ``k``. Output position ``t`` of
    channel ``c`` is ``sum_j kernels[c, j] * x[t + j - (k-1)//2, c] + bias[c]``.
    """
    x = as_tensor(x)
    d, k = kernels.shape
    if k % 2 == 0:
        raise ConfigurationError(f"depthwise_conv1d needs an odd kernel, got k={k}")
    if x.shape[-1] != d:
        raise DimensionError(f"depthwise_conv1d: {d} kernels for {x.shape[-1]} channels")
    L = x.shape[-2]
    r = (k - 1) // 2
    pad = [(0, 0)] * (x.ndim - 2) + [(r, r), (0, 0)]
    xp = np.pad(x.data, pad)
    out = np.zeros_like(x.data)
    for j in range(k):
        out += xp[..., j:j + L, :] * kernels.data[:, j]
    if bias is not None:
        out = out + bias.data

    def bw(g):
        gxp = np.zeros_like(xp)
        gk = np.empty_like(kernels.data)
        lead = tuple(range(g.ndim - 1))
        for j in range(k):
            gxp[..., j:j + L, :] += g * kernels.data[:, j]
            gk[:, j] = (g * xp[..., j:j + L, :]).sum(axis=lead)
        gx = gxp[..., r:r + L, :]
        if bias is None:
            return gx, gk
        return gx, gk, g.sum(axis=lead)

    parents = (x, kernels) if bias is None else (x, kernels, bias)
    return make_node(out, parents, bw, "dwconv1d")


# -- activations -----------------------------------------------------------

def _sigmoid_np(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid_np(x.data)
    return make_node(s, (x,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def softplus(x: Tensor) -> Tensor:
    """``log(1 + e^x)``, floored at the smallest positive normal so it never hits 0."""
    z = x.data
    out = np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))
    out = np.maximum(out, np.finfo(z.dtype).tiny)
    return make_node(out, (x,), lambda g: (g * _sigmoid_np(z),), "softplus")


def gelu(x: Tensor) -> Tensor:
    """tanh approximation of GELU."""
    z = x.data
    inner = _SQRT_2_OVER_PI * (z + _GELU_C * z ** 3)
    t = np.tanh(inner)
    out = 0.5 * z * (1.0 + t)

    def bw(g):
        dinner = _SQRT_2_OVER_PI * (1.0 + 3.0 * _GELU_C * z * z)
        return (g * (0.5 * (1.0 + t) + 0.5 * z * (1.0 - t * t) * dinner),)

    return make_node(out, (x,), bw, "gelu")


def silu(x: Tensor) -> Tensor:
    z = x.data
    s = _sigmoid_np(z)
    return make_node(z * s, (x,), lambda g: (g * s * (1.0 + z * (1.0 - s)),), "silu")


ACTIVATIONS = {"sigmoid": sigmoid, "gelu": gelu, "softplus": softplus, "silu": silu}


def activation(kind: str, x: Tensor) -> Tensor:
    try:
        fn = ACTIVATIONS[kind]
    except KeyError:
        raise ConfigurationError(f"unknown activation {kind!r}") from None
    return fn(as_tensor(x))


def dropout(x: Tensor, p: float, mode: str, rng: RngStream | None) -> Tensor:
    """Inverted dropout: zero with probability ``p`` and rescale survivors in train mode."""
    if not 0.0 <= p < 1.0:
        raise ConfigurationError(f"dropout probability must lie in [0, 1), got {p}")
    if mode == "eval" or p == 0.0:
        return x
    if mode != "train":
        raise ConfigurationError(f"unknown mode {mode!r}")
    if rng is None:
        raise ConfigurationError("train-mode dropout needs an RngStream")
    keep = (rng.random(x.shape) >= p).astype(x.data.dtype) / (1.0 - p)
    return make_node(x.data * keep, (x,), lambda g: (g * keep,), "dropout")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return make_node(y, (x,), bw, "softmax")


def mean_pool(x: Tensor) -> Tensor:
    """Average over the sequence axis: ``[..., L, d] -> [..., d]``."""
    if x.ndim < 2 or x.shape[-2] == 0:
        raise DimensionError("mean_pool needs at least one token")
    return x.mean(axis=-2)


# -- attention -------------------------------------------------------------

def multihead_attention(q: Tensor, k: Tensor, v: Tensor, params: dict, heads: int, d_head: int,
                        return_weights: bool = False):
    """Scaled dot-product attention with per-head Q/K/V projections and an output projection.

    ``params`` holds ``w_q, b_q, w_k, b_k, w_v, b_v, w_o, b_o``; all weights are
    ``[d, d]`` with ``d == heads * d_head``.
    """
    d = q.shape[-1]
    if heads * d_head != d:
        raise ConfigurationError(f"heads*d_head = {heads * d_head} != model width {d}")
    if k.shape[-1] != d or v.shape[-1] != d:
        raise DimensionError("q, k, v must share the model width")
    if k.shape[-2] != v.shape[-2]:
        raise DimensionError("k and v must have the same length")

    def heads_first(t: Tensor) -> Tensor:
        # [..., L, d] -> [..., h, L, dh]
        return swapaxes(t.reshape(t.shape[:-1] + (heads, d_head)), -2, -3)

    qh = heads_first(linear(q, params["w_q"], params["b_q"]))
    kh = heads_first(linear(k, params["w_k"], params["b_k"]))
    vh = heads_first(linear(v, params["w_v"], params["b_v"]))
    scores = matmul(qh, swapaxes(kh, -1, -2)) * (1.0 / math.sqrt(d_head))
    weights = softmax(scores, axis=-1)
    ctx = swapaxes(matmul(weights, vh), -2, -3)
    ctx = ctx.reshape(ctx.shape[:-2] + (d,))
    out = linear(ctx, params["w_o"], params["b_o"])
    if return_weights:
        return out, weights.data
    return out


# -- selective state-space scan -------------------------------------------

def selective_scan(u: Tensor, delta: Tensor, A: Tensor, B: Tensor, C: Tensor,
                   D: Tensor) -> Tensor:
    """Sequential diagonal selective scan.

    ``h_t = exp(delta_t * A) * h_{t-1} + delta_t * B_t * u_t`` and
    ``y_t = <h_t, C_t> + D * u_t`` with ``h_{-1} = 0``.

    Shapes: ``u, delta [..., L, di]``, ``A [di, ds]``, ``B, C [..., L, ds]``,
    ``D [di]``.
    """
    if np.any(delta.data <= 0):
        raise NumericError("selective_scan needs strictly positive step sizes")
    lead = u.shape[:-2]
    L, di = u.shape[-2:]
    ds = A.shape[1]
    if A.shape[0] != di or D.shape != (di,):
        raise DimensionError("A/D do not match the inner width")
    if delta.shape != u.shape or B.shape != lead + (L, ds) or C.shape != lead + (L, ds):
        raise DimensionError("selective_scan operand shapes disagree")
    uf = u.data.reshape(-1, L, di)
    df = delta.data.reshape(-1, L, di)
    Bf = B.data.reshape(-1, L, ds)
    Cf = C.data.reshape(-1, L, ds)
    nb = uf.shape[0]
    dA = np.exp(df[..., None] * A.data)                      # [b, L, di, ds]
    dBu = (df * uf)[..., None] * Bf[:, :, None, :]          # [b, L, di, ds]
    hs = np.empty((nb, L, di, ds), dtype=uf.dtype)
    h = np.zeros((nb, di, ds), dtype=uf.dtype)
    for t in range(L):
        h = dA[:, t] * h + dBu[:, t]
        hs[:, t] = h
    y = np.einsum("bldn,bln->bld", hs, Cf) + uf * D.data
    out = y.reshape(u.shape)

    def bw(g):
        gf = g.reshape(nb, L, di)
        gC = np.einsum("bld,bldn->bln", gf, hs)
        gD = (gf * uf).sum(axis=(0, 1))
        gu = gf * D.data
        gh_all = np.empty_like(hs)
        gh = np.zeros((nb, di, ds), dtype=uf.dtype)
        for t in range(L - 1, -1, -1):
            gh = gh + gf[:, t, :, None] * Cf[:, t, None, :]
            gh_all[:, t] = gh
            gh = gh * dA[:, t]
        h_prev = np.concatenate([np.zeros_like(hs[:, :1]), hs[:, :-1]], axis=1)
        g_dA = gh_all * h_prev * dA                          # d/d(delta*A) of the decay term
        gA = np.einsum("bldn,bld->dn", g_dA, df)
        gdelta = np.einsum("bldn,dn->bld", g_dA, A.data)
        gBx = np.einsum("bldn,bln->bld", gh_all, Bf)        # sum_n gh * B
        gdelta += gBx * uf
        gu += gBx * df
        gB = np.einsum("bldn,bld->bln", gh_all, df * uf)
        return (gu.reshape(u.shape), gdelta.reshape(u.shape), gA,
                gB.reshape(B.shape), gC.reshape(C.shape), gD)

    return make_node(out, (u, delta, A, B, C, D), bw, "selective_scan")


def selective_ssm_scan(x: Tensor, A: Tensor, B: Tensor, C: Tensor, delta: Tensor, D: Tensor,
                       direction: str = "forward") -> Tensor:
    """Selective scan in either direction; ``backward`` scans the reversed sequence."""
    x, A, B, C, delta, D = (as_tensor(t) for t in (x, A, B, C, delta, D))
    if direction == "forward":
        return selective_scan(x, delta, A, B, C, D)
    if direction != "backward":
        raise ConfigurationError(f"unknown scan direction {direction!r}")
    ax = x.ndim - 2
    y = selective_scan(flip(x, ax), flip(delta, ax), A, flip(B, ax), flip(C, ax), D)
    return flip(y, ax)


__all__ = [
    "linear", "layer_norm", "depthwise_conv1d", "activation", "sigmoid", "softplus", "gelu",
    "silu", "dropout", "softmax", "mean_pool", "multihead_attention", "selective_scan",
    "selective_ssm_scan", "concat",
]
