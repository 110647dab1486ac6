"""Training-time auxiliary metadata: vocabulary and the 23-d encoding.

Layout: state one-hot (4) | species one-hot (15) | ndvi | height | sin, cos of month.
"""
from __future__ import annotations

import datetime as _dt
import json
import math
from dataclasses import dataclass, field

import numpy as np

META_DIM = 23
N_STATES = 4
N_SPECIES = 15

DEFAULT_STATES = ("NSW", "Tas", "Vic", "WA")
DEFAULT_SPECIES = (
    "Lucerne", "Phalaris", "Phalaris_Clover", "Ryegrass", "Ryegrass_Clover", "Clover",
    "Fescue", "Fescue_CrumbWeed", "WhiteClover", "SubcloverLosa", "SubcloverDalkeith",
    "Phalaris_Ryegrass_Clover", "Phalaris_BarleyGrass_SilverGrass", "Mixed", "Cocksfoot",
)


class VocabularyError(ValueError):
    """A categorical value is not part of the vocabulary."""


@dataclass(frozen=True)
class Vocabulary:
    states: tuple = DEFAULT_STATES
    species: tuple = DEFAULT_SPECIES

    def __post_init__(self):
        if len(self.states) != N_STATES or len(set(self.states)) != N_STATES:
            raise VocabularyError(f"vocabulary needs {N_STATES} distinct states")
        if len(self.species) != N_SPECIES or len(set(self.species)) != N_SPECIES:
            raise VocabularyError(f"vocabulary needs {N_SPECIES} distinct species")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        return cls(tuple(raw["states"]), tuple(raw["species"]))

    def dump(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump({"states": list(self.states), "species": list(self.species)}, fh, indent=2)
            fh.write("\n")


@dataclass
class SampleMeta:
    state: str
    species: str
    ndvi: float
    height: float
    date: _dt.date = field(default_factory=lambda: _dt.date(2016, 1, 1))


def month_features(month: int) -> tuple[float, float]:
    if not 1 <= month <= 12:
        raise ValueError(f"month must lie in 1..12, got {month}")
    angle = 2.0 * math.pi * (month % 12) / 12.0
    return math.sin(angle), math.cos(angle)


def metadata_encode(meta: SampleMeta, vocab: Vocabulary = Vocabulary()) -> np.ndarray:
    """Encode one record's metadata as a 23-d float vector.

    An empty species string leaves the species block all-zero; any other
    unknown category raises ``VocabularyError``.
    """
    vec = np.zeros(META_DIM)
    try:
        vec[vocab.states.index(meta.state)] = 1.0
    except ValueError:
        raise VocabularyError(f"unknown state {meta.state!r}") from None
    if meta.species:
        try:
            vec[N_STATES + vocab.species.index(meta.species)] = 1.0
        except ValueError:
            raise VocabularyError(f"unknown species {meta.species!r}") from None
    vec[19] = meta.ndvi
    vec[20] = meta.height
    vec[21], vec[22] = month_features(meta.date.month)
    return vec
