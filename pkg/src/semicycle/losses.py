"""Training objectives: pseudo-feature, Gram style, noisy cycle, unpaired cycle and hinge GAN."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, DimensionError
from .tensor import Tensor

PAPER_PIXEL_RANGE = 255.0


@dataclass(frozen=True)
class LossWeights:
    lambda_p: float = 1.0
    lambda_sty: float = 1.0
    lambda_cyc: float = 1.0
    lambda_adv: float = 1.0

    def __post_init__(self):
        for name in ("lambda_p", "lambda_sty", "lambda_cyc", "lambda_adv"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")


@dataclass(frozen=True)
class NoiseSpec:
    """Gaussian noise level in [-1, 1] pixel units plus the seed of its default stream."""

    sigma: float = 20.0 * 2.0 / PAPER_PIXEL_RANGE
    seed: int = 0

    def __post_init__(self):
        if self.sigma < 0:
            raise ConfigError("sigma must be non-negative")

    @classmethod
    def from_paper_units(cls, sigma_8bit: float, seed: int = 0) -> NoiseSpec:
        return cls(sigma_8bit * 2.0 / PAPER_PIXEL_RANGE, seed)

    @property
    def sigma_8bit(self) -> float:
        return self.sigma * PAPER_PIXEL_RANGE / 2.0


Generator = Callable[[Tensor], Tensor]


# ---- pseudo sketch feature losses ----------------------------------------

def _check_levels(pred: Mapping[int, Tensor], psf: Mapping, k: int) -> None:
    for lvl, (patches, valid) in psf.items():
        if lvl not in pred:
            raise DimensionError(f"prediction has no level {lvl}")
        B, c, H, W = pred[lvl].shape
        m = (H - k + 1) * (W - k + 1)
        if patches.shape != (B, m, c * k * k) or valid.shape != (B, m):
            raise DimensionError(
                f"level {lvl}: expected pseudo patches {(B, m, c * k * k)}, got {patches.shape}")


def psf_loss(pred: Mapping[int, Tensor], psf: Mapping[int, tuple[np.ndarray, np.ndarray]], k: int,
             normalize: bool = False) -> Tensor:
    """Sum over levels and patches of squared distance to the pseudo patches.

    ``pred`` maps level -> [B, c, H, W] features of the generated sketch; ``psf`` maps
    level -> (patches [B, m, c*k*k], valid [B, m]). Invalid (zero-norm matched) patches
    are skipped. Batch items are summed.
    """
    _check_levels(pred, psf, k)
    total = None
    for lvl in sorted(psf):
        patches, valid = psf[lvl]
        diff = T.unfold(pred[lvl], k) - Tensor(patches, dtype=pred[lvl].dtype)
        sq = diff * diff * Tensor(valid[..., None], dtype=pred[lvl].dtype)
        term = sq.sum()
        if normalize:
            term = term * (1.0 / max(1, int(valid.sum()) * patches.shape[-1]))
        total = term if total is None else total + term
    return total


def style_loss(pred: Mapping[int, Tensor], psf: Mapping[int, tuple[np.ndarray, np.ndarray]],
               k: int) -> Tensor:
    """Gram-matrix loss between patch-averaged generated features and pseudo features."""
    _check_levels(pred, psf, k)
    total = None
    for lvl in sorted(psf):
        patches, valid = psf[lvl]
        feat = pred[lvl]
        B, c = feat.shape[:2]
        mask = valid.astype(feat.dtype)
        pooled = T.avg_pool2d(feat, k, 1).reshape(B, c, -1)              # B c m
        pooled = pooled * Tensor(mask[:, None, :], dtype=feat.dtype)
        gram = pooled @ pooled.transpose(0, 2, 1)                         # B c c
        target = patches.reshape(B, -1, c, k * k).mean(axis=3) * mask[..., None]  # B m c
        gram_t = np.einsum("bmc,bmd->bcd", target, target)
        m = np.maximum(valid.sum(axis=1), 1).astype(feat.dtype)          # per item
        scale = Tensor((1.0 / (c * m) ** 2)[:, None, None], dtype=feat.dtype)
        d = gram - Tensor(gram_t, dtype=feat.dtype)
        term = (d * d * scale).sum()
        total = term if total is None else total + term
    return total


# ---- noise injection and cycle losses -------------------------------------

def inject_noise(x: Tensor, spec: NoiseSpec, rng: np.random.Generator | None = None) -> Tensor:
    if spec.sigma == 0:
        return x
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    z = rng.standard_normal(x.shape)
    return x + Tensor(spec.sigma * z, dtype=x.dtype)


def _per_item(diff: Tensor, norm: str) -> Tensor:
    if norm == "l1":
        return T.tabs(diff).sum()
    if norm == "l2":
        return (diff * diff).sum()
    raise ConfigError(f"unknown cycle norm {norm!r}")


def cycle_distance(x: Tensor, recon: Tensor, norm: str, normalize: bool) -> Tensor:
    if recon.shape != x.shape:
        raise DimensionError(f"reconstruction {recon.shape} does not match input {x.shape}")
    total = _per_item(recon - x, norm)
    # batch mean of per-image norms; optionally per-pixel mean
    denom = x.data.size if normalize else x.shape[0]
    return total * (1.0 / denom)


def cycle_noise_loss(p: Tensor, g_p2s: Generator, g_s2p: Generator, spec: NoiseSpec,
                     rng: np.random.Generator | None = None, normalize: bool = False) -> Tensor:
    """Squared L2 photo reconstruction through a noise-corrupted intermediate sketch."""
    recon = g_s2p(inject_noise(g_p2s(p), spec, rng))
    return cycle_distance(p, recon, "l2", normalize)


def unpaired_cycle_losses(p: Tensor, s: Tensor, g_p2s: Generator, g_s2p: Generator,
                          norm: str = "l1", normalize: bool = False,
                          noise: NoiseSpec | None = None,
                          rng: np.random.Generator | None = None) -> tuple[Tensor, Tensor]:
    """Photo and sketch cycle-consistency terms.

    ``noise`` (optional) corrupts the intermediate sketch of the photo cycle only.
    """
    mid = g_p2s(p)
    if noise is not None:
        mid = inject_noise(mid, noise, rng)
    lp = cycle_distance(p, g_s2p(mid), norm, normalize)
    ls = cycle_distance(s, g_p2s(g_s2p(s)), norm, normalize)
    return lp, ls


# ---- hinge GAN -------------------------------------------------------------

def hinge_g_loss(fake_scores: Tensor) -> Tensor:
    if fake_scores.data.size == 0:
        raise ContractError("empty batch")
    return -T.mean(fake_scores)


def hinge_d_loss(real_scores: Tensor, fake_scores: Tensor) -> Tensor:
    if real_scores.data.size == 0 or fake_scores.data.size == 0:
        raise ContractError("empty batch")
    return T.mean(T.relu(1.0 - real_scores)) + T.mean(T.relu(1.0 + fake_scores))


def total_losses(l_p, l_sty, l_cyc, l_adv: tuple, l_d: tuple,
                 weights: LossWeights = LossWeights()):
    """Weighted generator total and the summed discriminator total."""
    g = (weights.lambda_p * l_p + weights.lambda_sty * l_sty + weights.lambda_cyc * l_cyc
         + weights.lambda_adv * (l_adv[0] + l_adv[1]))
    d = l_d[0] + l_d[1]
    return g, d
