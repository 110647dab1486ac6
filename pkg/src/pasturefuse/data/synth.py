"""Procedural dual-view pasture images whose pixel content determines the targets.

Every pixel is soil, green, dead or clover. Targets are grams proportional to
the (optionally boundary-weighted) pixel counts of each vegetation class, so a
noise-free image fully determines its labels. Metadata can be made to leak the
targets, which is what the metadata-shortcut experiment relies on.
"""
from __future__ import annotations

import datetime as dt
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from ..autodiff import RngStream
from ..metadata import DEFAULT_SPECIES, DEFAULT_STATES, SampleMeta, Vocabulary
from .manifest import SampleRecord, Targets, write_manifest

SOIL, GREEN, DEAD, CLOVER = 0, 1, 2, 3
COLORS = np.array([(110, 80, 55), (40, 150, 35), (190, 170, 100), (90, 200, 110)]) / 255.0


@dataclass
class SynthSpec:
    n: int = 357
    height: int = 32
    width: int = 64
    seed: int = 17
    green_grams: float = 100.0     # grams at full coverage of the quadrat
    dead_grams: float = 100.0
    clover_grams: float = 60.0
    green_zero_rate: float = 0.05
    dead_zero_rate: float = 0.112
    clover_zero_rate: float = 0.378
    max_cover: float = 0.95
    blob_sigma: float = 2.0
    boundary_band: int = 4          # columns either side of the view seam
    boundary_weight: float = 0.0    # extra weight on vegetation inside the band
    image_noise: float = 0.0        # per-pixel gaussian noise (std, in [0,1] units)
    target_noise: float = 0.0       # multiplicative lognormal noise on the components
    metadata_strength: float = 0.0  # 0: metadata independent of targets, 1: fully leaks them
    start_year: int = 2014
    end_year: int = 2017

    def __post_init__(self):
        if self.n < 25:
            raise ValueError("synthetic datasets need n >= 25")
        if self.width < 2 or self.width % 2:
            raise ValueError("width must be even and >= 2")


def weight_map(spec: SynthSpec) -> np.ndarray:
    """Per-pixel weight of vegetation mass: 1, plus ``boundary_weight`` near the seam."""
    cols = np.arange(spec.width) + 0.5
    near = np.abs(cols - spec.width / 2) <= spec.boundary_band
    w = np.where(near, 1.0 + spec.boundary_weight, 1.0)
    return np.broadcast_to(w, (spec.height, spec.width))


def _coverages(spec: SynthSpec, rng: RngStream) -> np.ndarray:
    u = rng.random(6)
    green = rng.beta(1.3, 3.2) * 0.85
    dead = rng.beta(1.3, 6.0) * 0.75
    clover = rng.beta(1.1, 5.0) * 0.7
    if u[2] < spec.clover_zero_rate:
        clover = 0.0
    # gdm stays positive: green may only vanish when clover is present
    if u[0] < spec.green_zero_rate and clover > 0:
        green = 0.0
    if u[1] < spec.dead_zero_rate:
        dead = 0.0
    cov = np.array([green, dead, clover])
    total = cov.sum()
    if total > spec.max_cover:
        cov *= spec.max_cover / total
    return cov


def _paint(spec: SynthSpec, cover: np.ndarray, rng: RngStream) -> np.ndarray:
    """Class map with exactly ``round(cover * H * W)`` pixels per vegetation class."""
    n_pix = spec.height * spec.width
    labels = np.full(n_pix, SOIL, dtype=np.int8)
    free = np.ones(n_pix, dtype=bool)
    for cls, frac in zip((GREEN, DEAD, CLOVER), cover):
        field = ndimage.gaussian_filter(rng.normal(0.0, 1.0, (spec.height, spec.width)),
                                        spec.blob_sigma, mode="wrap").ravel()
        k = int(round(frac * n_pix))
        if k == 0:
            continue
        cand = np.nonzero(free)[0]
        pick = cand[np.argsort(-field[cand], kind="stable")[:k]]
        labels[pick] = cls
        free[pick] = False
    return labels.reshape(spec.height, spec.width)


def targets_from_labels(labels: np.ndarray, spec: SynthSpec) -> np.ndarray:
    """Noise-free grams (green, dead, clover) implied by a class map."""
    w = weight_map(spec)
    n_pix = labels.size
    grams = np.array([spec.green_grams, spec.dead_grams, spec.clover_grams])
    mass = np.array([w[labels == c].sum() for c in (GREEN, DEAD, CLOVER)])
    return grams * mass / n_pix


def count_classes(img: np.ndarray) -> np.ndarray:
    """Nearest-colour class map of an image (used as the pixel-counting oracle)."""
    d = ((img[..., None, :] - COLORS) ** 2).sum(axis=-1)
    return d.argmin(axis=-1)


def _metadata(spec: SynthSpec, comp: np.ndarray, rng: RngStream, vocab: Vocabulary) -> SampleMeta:
    u = rng.random(6)
    s = spec.metadata_strength
    total = comp.sum()
    green_frac = (comp[0] + comp[2]) / total if total > 0 else 0.0
    ndvi = float(np.clip((1 - s) * (0.2 + 0.7 * u[0]) + s * (0.1 + 0.8 * green_frac), 0.0, 1.0))
    height = float(max(0.0, (1 - s) * 30.0 * u[1] + s * np.log1p(total) * 5.0))
    state = vocab.states[int(u[2] * len(vocab.states))]
    species = vocab.species[int(u[3] * len(vocab.species))]
    days = (dt.date(spec.end_year, 12, 31) - dt.date(spec.start_year, 1, 1)).days
    date = dt.date(spec.start_year, 1, 1) + dt.timedelta(days=int(u[4] * days))
    return SampleMeta(state, species, round(ndvi, 6), round(height, 6), date)


def synth_dataset(spec: SynthSpec, rng: RngStream | None = None,
                  vocab: Vocabulary = Vocabulary(DEFAULT_STATES, DEFAULT_SPECIES)):
    """Returns ``(records, images)`` with ``images[image_id]`` a float ``[H, W, 3]`` array."""
    rng = rng or RngStream(spec.seed).child("synth")
    records, images = [], {}
    for i in range(spec.n):
        srng = rng.child(i)
        cover = _coverages(spec, srng)
        labels = _paint(spec, cover, srng)
        img = COLORS[labels]
        if spec.image_noise > 0:
            img = np.clip(img + srng.normal(0.0, spec.image_noise, img.shape), 0.0, 1.0)
        comp = targets_from_labels(labels, spec)
        if spec.target_noise > 0:
            comp = comp * np.exp(srng.normal(0.0, spec.target_noise, 3))
        green, dead, clover = (float(v) for v in comp)
        gdm = green + clover
        image_id = f"ID{i:05d}"
        records.append(SampleRecord(image_id, f"images/{image_id}.png",
                                    Targets(green, dead, clover, gdm, gdm + dead),
                                    _metadata(spec, comp, srng, vocab)))
        images[image_id] = img
    return records, images


def write_synth(spec: SynthSpec, out_dir, rng: RngStream | None = None) -> Path:
    """Write images, ``manifest.csv`` and ``vocab.json`` into ``out_dir``."""
    from ..imageio import save_image

    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    vocab = Vocabulary()
    records, images = synth_dataset(spec, rng, vocab)
    for rec in records:
        save_image(out / rec.image_path, images[rec.image_id])
    write_manifest(out / "manifest.csv", records)
    vocab.dump(out / "vocab.json")
    return out / "manifest.csv"
