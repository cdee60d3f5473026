"""Semi-supervised training loop.

A small reference set of aligned photo/sketch pairs plus an optional pool of
photo-only images. Each step updates both discriminators, then both generators.
G_s2p is only ever fed generated sketches with injected noise.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import serialize
from . import tensor as T
from .errors import CheckpointError, ConfigError, ContractError, DimensionError, TrainingError
from .features import LEVELS, ExtractorSpec, FeaturePyramid, extract_batch, get_extractor, gray_to_rgb
from .losses import (LossWeights, NoiseSpec, cycle_distance, hinge_d_loss, hinge_g_loss, inject_noise,
                     psf_loss, style_loss, total_losses)
from .networks import DiscriminatorSpec, Generator, GeneratorSpec, build_discriminator, build_generator
from .optim import Adam
from .psf import ReferencePatchStore, assemble_psf, match_conv, select_candidates
from .tensor import Tensor

log = logging.getLogger(__name__)

NET_NAMES = ("g_p2s", "g_s2p", "d_s", "d_p")
LOG_HEADER = ("step", "epoch", "L_p", "L_sty", "L_cyc", "L_G_adv", "L_D", "lr_g", "lr_d")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    decay_start: int = 10
    batch_size: int = 2
    lr_g: float = 0.001
    lr_d: float = 0.004
    betas: tuple[float, float] = (0.9, 0.999)
    lambda_p: float = 1.0
    lambda_sty: float = 1.0
    lambda_cyc: float = 1.0
    lambda_adv: float = 1.0
    sigma: float = 20.0                     # paper units, 8-bit pixel scale
    k: int = 3
    n: int = 3
    loss_levels: tuple[int, ...] = LEVELS
    seed: int = 0
    checkpoint_interval: int = 0            # steps; 0 saves only at the end
    image_size: int = 64
    max_steps: int = 0                      # 0 runs the full epoch schedule
    gen_width: int = 16
    gen_res: int = 4
    disc_width: int = 16
    extractor_seed: int = 0
    double: bool = False                    # float64 parameters and checkpoints
    normalize_losses: bool = False

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not 0 <= self.decay_start <= self.epochs or self.epochs < 1:
            raise ConfigError("need 0 <= decay_start <= epochs and epochs >= 1")
        if not self.loss_levels or not set(self.loss_levels) <= set(LEVELS):
            raise ConfigError(f"loss_levels must be a non-empty subset of {LEVELS}")
        if self.k < 1 or self.n < 1:
            raise ConfigError("k and n must be >= 1")
        if self.sigma < 0:
            raise ConfigError("sigma must be non-negative")
        if len(self.betas) != 2:
            raise ConfigError("betas needs two values")
        self.weights  # validates the lambdas

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.lambda_p, self.lambda_sty, self.lambda_cyc, self.lambda_adv)

    @property
    def noise(self) -> NoiseSpec:
        return NoiseSpec.from_paper_units(self.sigma, self.seed)

    @property
    def extractor(self) -> ExtractorSpec:
        return ExtractorSpec(seed=self.extractor_seed)

    @property
    def dtype(self):
        return np.float64 if self.double else np.float32


def lr_schedule(epoch: int, cfg: TrainConfig) -> tuple[float, float]:
    """Constant until ``decay_start``, then linear to zero at ``epochs``."""
    if not 0 <= epoch < cfg.epochs:
        raise ContractError(f"epoch {epoch} outside [0, {cfg.epochs})")
    if epoch < cfg.decay_start:
        f = 1.0
    else:
        f = (cfg.epochs - epoch) / (cfg.epochs - cfg.decay_start)
    return cfg.lr_g * f, cfg.lr_d * f


@dataclass
class LossReport:
    step: int
    epoch: int
    l_p: float
    l_sty: float
    l_cyc: float
    l_g_adv: float
    l_d: float
    lr_g: float
    lr_d: float

    def values(self) -> tuple:
        return (self.step, self.epoch, self.l_p, self.l_sty, self.l_cyc, self.l_g_adv, self.l_d,
                self.lr_g, self.lr_d)

    def tsv(self) -> str:
        v = self.values()
        return "\t".join([str(v[0]), str(v[1])] + [f"{x:.9g}" for x in v[2:]])


class Trainer:
    """Owns the four networks, both optimizers and the PSF cache."""

    def __init__(self, cfg: TrainConfig, store: ReferencePatchStore, ref_photos: np.ndarray,
                 ref_sketches: np.ndarray, extra_photos: np.ndarray | None = None):
        self.cfg = cfg
        ext = get_extractor(cfg.extractor)
        store.check(ext.fingerprint)
        if store.k != cfg.k:
            raise ConfigError(f"store was built with k={store.k}, config says k={cfg.k}")
        missing = [lvl for lvl in cfg.loss_levels if lvl not in store.banks]
        if missing:
            raise ConfigError(f"loss levels {missing} are not in the reference store "
                              f"(maps smaller than k at this image size?)")
        if len(ref_photos) != store.N or len(ref_sketches) != store.N:
            raise DimensionError("reference arrays do not match the store size")
        self.store = store
        self.extractor = ext
        extra = np.zeros((0,) + ref_photos.shape[1:]) if extra_photos is None else extra_photos
        if extra.shape[1:] != ref_photos.shape[1:]:
            raise DimensionError(f"extra photos {extra.shape[1:]} vs reference {ref_photos.shape[1:]}")
        self.photos = np.concatenate([ref_photos, extra]).astype(cfg.dtype)
        self.sketches = np.asarray(ref_sketches, dtype=cfg.dtype)
        self.step = 0
        self._psf_cache: dict[int, dict[int, tuple[np.ndarray, np.ndarray]]] = {}

        s = cfg.seed * 100
        self.nets = {
            "g_p2s": build_generator(GeneratorSpec(3, 1, cfg.gen_width, cfg.gen_res), s + 1),
            "g_s2p": build_generator(GeneratorSpec(1, 3, cfg.gen_width, cfg.gen_res), s + 2),
            "d_s": build_discriminator(DiscriminatorSpec(1, cfg.disc_width), s + 3),
            "d_p": build_discriminator(DiscriminatorSpec(3, cfg.disc_width), s + 4),
        }
        for net in self.nets.values():
            net.astype(cfg.dtype)
        self.opt_g = Adam(self._params("g_p2s", "g_s2p"), cfg.lr_g, cfg.betas)
        self.opt_d = Adam(self._params("d_s", "d_p"), cfg.lr_d, cfg.betas)

    def _params(self, *names: str) -> dict[str, Tensor]:
        out = {}
        for name in names:
            out.update(self.nets[name].named_parameters(f"{name}/"))
        return out

    @property
    def steps_per_epoch(self) -> int:
        return math.ceil(len(self.photos) / self.cfg.batch_size)

    @property
    def total_steps(self) -> int:
        return self.cfg.max_steps or self.cfg.epochs * self.steps_per_epoch

    def epoch_of(self, step: int) -> int:
        # a max_steps run shorter or longer than the schedule is squeezed onto it
        if self.cfg.max_steps:
            return min(self.cfg.epochs - 1, step * self.cfg.epochs // self.cfg.max_steps)
        return step // self.steps_per_epoch

    # ---- data ---------------------------------------------------------------

    def batch_indices(self, step: int) -> tuple[np.ndarray, np.ndarray]:
        rng = np.random.default_rng([self.cfg.seed, step, 0])
        b = self.cfg.batch_size
        return rng.integers(len(self.photos), size=b), rng.integers(len(self.sketches), size=b)

    def psf_for(self, idx: int) -> dict[int, tuple[np.ndarray, np.ndarray]]:
        """Pseudo sketch feature patches of photo ``idx`` (cached, the extractor is frozen)."""
        if idx not in self._psf_cache:
            feats = extract_batch(self.photos[idx:idx + 1].astype(np.float64), self.cfg.extractor)
            pyr = FeaturePyramid({lvl: f[0] for lvl, f in feats.items()}, self.extractor.fingerprint, str(idx))
            cand = select_candidates(pyr, self.store, min(self.cfg.n, self.store.N))
            matches = {lvl: match_conv(pyr.levels[lvl], self.store, lvl, cand, pyr.fingerprint)
                       for lvl in self.cfg.loss_levels}
            self._psf_cache[idx] = assemble_psf(matches, self.store)
        return self._psf_cache[idx]

    def batch_psf(self, idx: np.ndarray) -> dict[int, tuple[np.ndarray, np.ndarray]]:
        per = [self.psf_for(int(i)) for i in idx]
        return {lvl: (np.stack([p[lvl][0] for p in per]), np.stack([p[lvl][1] for p in per]))
                for lvl in self.cfg.loss_levels}

    # ---- optimisation --------------------------------------------------------

    def train_step(self) -> LossReport:
        cfg, nets = self.cfg, self.nets
        step = self.step
        epoch = self.epoch_of(step)
        lr_g, lr_d = lr_schedule(epoch, cfg)
        self.opt_g.lr, self.opt_d.lr = lr_g, lr_d
        pi, si = self.batch_indices(step)
        p = Tensor(self.photos[pi], dtype=cfg.dtype)
        s = Tensor(self.sketches[si], dtype=cfg.dtype)
        noise = cfg.noise
        rng = np.random.default_rng([cfg.seed, step, 1])

        # discriminator step: real sketches vs G_p2s(p), real photos vs G_s2p(G_p2s(p) + noise)
        fake_s = nets["g_p2s"](p).detach()
        fake_p = nets["g_s2p"](inject_noise(fake_s, noise, rng)).detach()
        l_d_s = hinge_d_loss(nets["d_s"](s), nets["d_s"](fake_s))
        l_d_p = hinge_d_loss(nets["d_p"](p), nets["d_p"](fake_p))
        _, l_d = total_losses(0.0, 0.0, 0.0, (0.0, 0.0), (l_d_s, l_d_p), cfg.weights)
        self.opt_d.zero_grad()
        l_d.backward()
        self.opt_d.step()

        # generator step
        psf = self.batch_psf(pi)
        fake_s = nets["g_p2s"](p)
        feats = self.extractor.forward(gray_to_rgb(fake_s))
        pred = {lvl: feats[lvl] for lvl in cfg.loss_levels}
        l_p = psf_loss(pred, psf, cfg.k, cfg.normalize_losses)
        l_sty = style_loss(pred, psf, cfg.k)
        rec = nets["g_s2p"](inject_noise(fake_s, noise, rng))
        l_cyc = cycle_distance(p, rec, "l2", cfg.normalize_losses)
        l_adv = (hinge_g_loss(nets["d_s"](fake_s)), hinge_g_loss(nets["d_p"](rec)))
        l_g, _ = total_losses(l_p, l_sty, l_cyc, l_adv, (0.0, 0.0), cfg.weights)
        self.opt_g.zero_grad()
        l_g.backward()
        self.opt_g.step()
        self.opt_d.zero_grad()      # D received gradients through the adversarial terms

        report = LossReport(step, epoch, l_p.item(), l_sty.item(), l_cyc.item(),
                            l_adv[0].item() + l_adv[1].item(), l_d.item(), lr_g, lr_d)
        bad = [name for name, v in zip(LOG_HEADER[2:7], report.values()[2:7]) if not np.isfinite(v)]
        if bad:
            raise TrainingError(f"non-finite {', '.join(bad)} at step {step}; batch seed "
                                f"[{cfg.seed}, {step}], photo indices {pi.tolist()}, sketch indices {si.tolist()}")
        self.step += 1
        return report

    def run(self, steps: int | None = None, log_path=None, checkpoint_dir=None,
            on_checkpoint=None) -> list[LossReport]:
        """Train up to ``steps`` more steps (default: until ``total_steps``)."""
        end = self.total_steps if steps is None else min(self.total_steps, self.step + steps)
        reports = []
        fh = None
        if log_path is not None:
            new = not Path(log_path).exists() or self.step == 0
            fh = open(log_path, "w" if new else "a")
            if new:
                fh.write("\t".join(LOG_HEADER) + "\n")
        try:
            while self.step < end:
                rep = self.train_step()
                reports.append(rep)
                if fh:
                    fh.write(rep.tsv() + "\n")
                    fh.flush()
                every = self.cfg.checkpoint_interval
                if checkpoint_dir is not None and ((every and self.step % every == 0) or self.step == end):
                    path = Path(checkpoint_dir) / f"ckpt_{self.step:06d}.scgt"
                    self.save(path)
                    if on_checkpoint:
                        on_checkpoint(self, path)
        finally:
            if fh:
                fh.close()
        return reports

    # ---- persistence -----------------------------------------------------------

    def state(self) -> dict[str, np.ndarray]:
        out = {}
        for name, net in self.nets.items():
            for k, v in net.state_dict().items():
                out[f"{name}/{k}"] = v
        for prefix, opt in (("opt_g", self.opt_g), ("opt_d", self.opt_d)):
            for k, v in opt.state().items():
                out[f"{prefix}/{k}"] = v
        out["meta/step"] = np.array([self.step], dtype=np.float64)
        return out

    def save(self, path) -> None:
        serialize.save(path, self.state(), double=self.cfg.double)

    def load(self, path) -> None:
        self.load_state(serialize.load(path))

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        """Validate every tensor before touching anything, then restore."""
        expected = {k: v.shape for k, v in self.state().items()}
        problems = [f"{k}: missing" for k in expected if k not in state]
        problems += [f"{k}: unexpected" for k in state if k not in expected]
        problems += [f"{k}: shape {state[k].shape} != {shape}" for k, shape in expected.items()
                     if k in state and state[k].shape != shape]
        if problems:
            raise CheckpointError("checkpoint does not fit these networks:\n  " + "\n  ".join(problems))
        for name, net in self.nets.items():
            pre = f"{name}/"
            net.load_state_dict({k[len(pre):]: v for k, v in state.items()
                                 if k.startswith(pre)})
        for prefix, opt in (("opt_g", self.opt_g), ("opt_d", self.opt_d)):
            pre = f"{prefix}/"
            opt.load_state({k[len(pre):]: v for k, v in state.items() if k.startswith(pre)})
        self.step = int(state["meta/step"][0])


# ---- inference ---------------------------------------------------------------------

def load_generators(path, cfg: TrainConfig | None = None) -> dict[str, Generator]:
    """Both generators from a checkpoint; architecture inferred from ``cfg`` (defaults if None)."""
    cfg = cfg or TrainConfig()
    state = serialize.load(path)
    gens = {
        "g_p2s": Generator(GeneratorSpec(3, 1, cfg.gen_width, cfg.gen_res), 0),
        "g_s2p": Generator(GeneratorSpec(1, 3, cfg.gen_width, cfg.gen_res), 0),
    }
    for name, g in gens.items():
        pre = f"{name}/"
        sub = {k[len(pre):]: v for k, v in state.items() if k.startswith(pre)}
        if not sub:
            raise CheckpointError(f"checkpoint has no {name} tensors")
        g.astype(next(iter(sub.values())).dtype)
        g.load_state_dict(sub)
    return gens


def _translate(gen: Generator, x: np.ndarray, pad: bool) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 3 or x.shape[0] != gen.spec.in_channels:
        raise DimensionError(f"expected [{gen.spec.in_channels},H,W], got {x.shape}")
    f = 2 ** gen.spec.n_down
    H, W = x.shape[1:]
    ph, pw = -H % f, -W % f
    if (ph or pw) and not pad:
        raise DimensionError(f"size {H}x{W} is not divisible by {f} and padding is disabled")
    xp = np.pad(x, ((0, 0), (0, ph), (0, pw)), mode="reflect" if min(H, W) > max(ph, pw) else "edge")
    with T.precision("double" if gen.params["head.w"].data.dtype == np.float64 else "single"):
        out = gen(Tensor(xp[None])).data[0]
    return np.clip(out[:, :H, :W], -1.0, 1.0)


def infer_p2s(gen: Generator, photo: np.ndarray, pad: bool = True) -> np.ndarray:
    """[3,H,W] photo in [-1,1] -> [1,H,W] sketch; no noise at test time."""
    return _translate(gen, photo, pad)


def infer_s2p(gen: Generator, sketch: np.ndarray, pad: bool = True) -> np.ndarray:
    """[1,H,W] sketch in [-1,1] -> [3,H,W] photo."""
    return _translate(gen, sketch, pad)


def smoke_config(**overrides) -> TrainConfig:
    """The 32x32 synthetic profile; level 5 is 2x2 there, too small for k=3."""
    base = TrainConfig(image_size=32, loss_levels=(3, 4), gen_width=8, gen_res=2, disc_width=8,
                       max_steps=200)
    return dataclasses.replace(base, **overrides)
