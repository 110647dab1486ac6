from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


def load_image(path) -> np.ndarray:
    """RGB float image in [0, 1]; ``.npy`` files are read as-is."""
    path = Path(path)
    if path.suffix == ".npy":
        return np.load(path).astype(np.float64)
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def save_image(path, img: np.ndarray) -> None:
    arr = np.clip(np.rint(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path, format="PNG")
