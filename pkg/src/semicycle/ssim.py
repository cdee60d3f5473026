"""Structural similarity over valid (unpadded) windows.

Local statistics use an 11x11 Gaussian window (sigma 1.5) or an 8x8 uniform one.
Multi-channel images average the per-channel SSIM maps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError


@dataclass(frozen=True)
class SsimParams:
    window: str = "gaussian"        # "gaussian" (11x11, sigma 1.5) | "uniform" (8x8)
    k1: float = 0.01
    k2: float = 0.03
    data_range: float = 2.0         # images in [-1, 1]


def window_weights(kind: str) -> np.ndarray:
    if kind == "gaussian":
        ax = np.arange(11) - 5.0
        g = np.exp(-(ax ** 2) / (2 * 1.5 ** 2))
        w = np.outer(g, g)
    elif kind == "uniform":
        w = np.ones((8, 8))
    else:
        raise ValueError(f"unknown window {kind!r}")
    return w / w.sum()


def _local_mean(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    return np.einsum("...ijkl,kl->...ij", sliding_window_view(x, w.shape, axis=(-2, -1)), w)


def ssim_map(a: np.ndarray, b: np.ndarray, params: SsimParams = SsimParams()) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"ssim needs equal shapes, got {a.shape} and {b.shape}")
    w = window_weights(params.window)
    if a.shape[-1] < w.shape[1] or a.shape[-2] < w.shape[0]:
        raise DimensionError(f"image {a.shape[-2:]} smaller than the {w.shape[0]}px window")
    c1 = (params.k1 * params.data_range) ** 2
    c2 = (params.k2 * params.data_range) ** 2
    mu_a, mu_b = _local_mean(a, w), _local_mean(b, w)
    var_a = _local_mean(a * a, w) - mu_a ** 2
    var_b = _local_mean(b * b, w) - mu_b ** 2
    cov = _local_mean(a * b, w) - mu_a * mu_b
    return ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2))


def ssim(a: np.ndarray, b: np.ndarray, params: SsimParams = SsimParams()) -> float:
    """Mean SSIM of two [H,W] or [C,H,W] images."""
    return float(ssim_map(a, b, params).mean())
