"""8-bit RGB PNG input/output with a real-valued [0, 1] internal representation."""

from __future__ import annotations

import numpy as np
from PIL import Image


def load_image(path) -> np.ndarray:
    """Read an 8-bit PNG as an H x W x 3 float64 array in [0, 1] (value / 255)."""
    with Image.open(path) as im:
        rgb = im.convert("RGB")
        arr = np.asarray(rgb, dtype=np.float64) / 255.0
    return arr


def save_image(path, image: np.ndarray) -> None:
    """Write a real-valued image to an 8-bit RGB PNG.

    Values are clamped to [0, 1] and rounded to the nearest of 256 levels.
    A 2-D array is broadcast to three identical channels.
    """
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 2:
        arr = np.repeat(arr[:, :, None], 3, axis=2)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected an HxW or HxWx3 image, got shape {arr.shape}")
    data = np.rint(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(data, mode="RGB").save(path, format="PNG")
