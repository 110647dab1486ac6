"""Paired augmentation: one parameter draw per sample, applied to both views."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ..autodiff import RngStream


@dataclass
class AugmentPolicy:
    flip_p: float = 0.5
    max_rotation: float = 15.0
    brightness: float = 0.2
    contrast: float = 0.2


@dataclass(frozen=True)
class AugmentParams:
    flip: bool = False
    angle: float = 0.0
    brightness: float = 0.0
    contrast: float = 0.0


def draw_params(policy: AugmentPolicy, rng: RngStream) -> AugmentParams:
    # always four draws, so the stream position does not depend on the outcome
    u = rng.random(4)
    return AugmentParams(
        flip=bool(u[0] < policy.flip_p),
        angle=float((2.0 * u[1] - 1.0) * policy.max_rotation),
        brightness=float((2.0 * u[2] - 1.0) * policy.brightness),
        contrast=float((2.0 * u[3] - 1.0) * policy.contrast),
    )


def apply_params(img: np.ndarray, params: AugmentParams) -> np.ndarray:
    out = img
    if params.flip:
        out = out[:, ::-1]
    if params.angle != 0.0:
        out = ndimage.rotate(out, params.angle, axes=(1, 0), reshape=False, order=1, mode="reflect")
    if params.brightness != 0.0:
        out = out * (1.0 + params.brightness)
    if params.contrast != 0.0:
        mean = out.mean()
        out = (out - mean) * (1.0 + params.contrast) + mean
    if out is img:
        return img.copy()
    return np.clip(out, 0.0, 1.0)


def augment_pair(left: np.ndarray, right: np.ndarray, policy: AugmentPolicy, rng: RngStream,
                 params: AugmentParams | None = None):
    """Returns ``(left', right', params)``; pass ``params`` to force a specific draw."""
    if left.shape != right.shape:
        raise ValueError(f"view shapes differ: {left.shape} vs {right.shape}")
    params = draw_params(policy, rng) if params is None else params
    return apply_params(left, params), apply_params(right, params), params
