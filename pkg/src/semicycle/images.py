"""PNG input/output. Images live in [-1, 1] as [C,H,W] float arrays inside the package."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .errors import InputError


def to_uint8(x: np.ndarray) -> np.ndarray:
    """[-1, 1] -> [0, 255] with clamping and round-half-to-even."""
    return np.rint((np.clip(x, -1.0, 1.0) + 1.0) * 127.5).astype(np.uint8)


def from_uint8(u: np.ndarray) -> np.ndarray:
    return u.astype(np.float64) / 127.5 - 1.0


def read_image(path, channels: int | None = None) -> np.ndarray:
    """Read a PNG (or any Pillow format) as [C,H,W] in [-1, 1].

    ``channels`` forces 1 (luminance) or 3 (RGB); by default grayscale files stay
    single-channel and everything else becomes RGB.
    """
    try:
        img = Image.open(path)
        img.load()
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot read image {path}: {exc}") from None
    if channels is None:
        channels = 1 if img.mode in ("L", "I", "I;16", "1") else 3
    if channels not in (1, 3):
        raise ValueError("channels must be 1 or 3")
    arr = np.asarray(img.convert("L" if channels == 1 else "RGB"))
    if channels == 1:
        arr = arr[None]
    else:
        arr = arr.transpose(2, 0, 1)
    return from_uint8(arr)


def write_image(path, x: np.ndarray) -> None:
    """Write a [1|3,H,W] array in [-1, 1] as an 8-bit PNG."""
    x = np.asarray(x)
    if x.ndim != 3 or x.shape[0] not in (1, 3):
        raise ValueError(f"expected [1|3,H,W], got {x.shape}")
    u = to_uint8(x)
    img = Image.fromarray(u[0], "L") if x.shape[0] == 1 else Image.fromarray(u.transpose(1, 2, 0), "RGB")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    img.save(path, format="PNG")
