"""Steganography laboratory.

Trains an unpaired cycle model on the synthetic domains, then asks a small
convolutional probe to recover the hidden hue class from generated sketches.
A probe that beats chance on generated sketches, while failing on true sketches,
exposes a hidden channel; noise injected into the intermediate sketch during
training is expected to close it.
"""

from __future__ import annotations

import colorsys
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import tensor as T
from .losses import NoiseSpec, cycle_distance, hinge_d_loss, hinge_g_loss, inject_noise
from .networks import (Discriminator, DiscriminatorSpec, Generator, GeneratorSpec, Module,
                       build_discriminator, build_generator)
from .optim import Adam
from .synthetic import SyntheticDomainSpec, gen_synthetic_domains
from .tensor import Tensor

log = logging.getLogger(__name__)

TSV_HEADER = ("sigma", "seed", "probe_err_generated", "probe_err_true", "cycle_err", "diverged")


@dataclass(frozen=True)
class StegoConfig:
    sigma_8bit: float = 0.0
    seed: int = 1
    steps: int = 1500
    batch_size: int = 4
    lr_g: float = 1e-3
    lr_d: float = 4e-3
    betas: tuple[float, float] = (0.9, 0.999)
    gen_width: int = 8
    gen_res: int = 2
    gen_norm: str = "instance"
    disc_width: int = 8
    lambda_cyc: float = 10.0
    lambda_adv: float = 0.1
    cycle_norm: str = "l1"
    probe_steps: int = 300
    probe_batch: int = 64
    probe_lr: float = 3e-3
    n_train: int = 512
    n_heldout: int = 128
    image_size: int = 32
    n_hues: int = 4
    data_seed: int = 1234


@dataclass
class StegoReport:
    sigma: float
    seed: int
    probe_err_generated: float
    probe_err_true: float
    cycle_err: float
    diverged: bool = False
    probe_err_noisy: float = float("nan")
    cycle_attr_acc: float = float("nan")
    seconds: float = 0.0
    seeds: list = field(default_factory=list)

    def row(self) -> tuple:
        return (self.sigma, self.seed, self.probe_err_generated, self.probe_err_true,
                self.cycle_err, int(self.diverged))


@dataclass
class StegoNets:
    g_p2s: Generator
    g_s2p: Generator
    d_s: Discriminator
    d_p: Discriminator


def make_dataset(cfg: StegoConfig):
    spec = SyntheticDomainSpec(image_size=cfg.image_size, n_hues=cfg.n_hues, seed=cfg.data_seed)
    photos, sketches, hues = gen_synthetic_domains(spec, cfg.n_train + cfg.n_heldout)
    n = cfg.n_train
    return {
        "train": (photos[:n], sketches[:n], hues[:n]),
        "heldout": (photos[n:], sketches[n:], hues[n:]),
        "n_hues": cfg.n_hues,
    }


def build_nets(cfg: StegoConfig) -> StegoNets:
    s = cfg.seed * 100
    return StegoNets(
        g_p2s=build_generator(GeneratorSpec(3, 1, cfg.gen_width, cfg.gen_res, 2, cfg.gen_norm), s + 1),
        g_s2p=build_generator(GeneratorSpec(1, 3, cfg.gen_width, cfg.gen_res, 2, cfg.gen_norm), s + 2),
        d_s=build_discriminator(DiscriminatorSpec(1, cfg.disc_width, 3), s + 3),
        d_p=build_discriminator(DiscriminatorSpec(3, cfg.disc_width, 3), s + 4),
    )


def _params(*mods: Module) -> dict[str, Tensor]:
    out = {}
    for i, m in enumerate(mods):
        out.update(m.named_parameters(f"{i}/"))
    return out


def batched(fn, x: np.ndarray, size: int = 64) -> np.ndarray:
    return np.concatenate([fn(Tensor(x[i:i + size])).data for i in range(0, len(x), size)])


def train_cycle(nets: StegoNets, data, cfg: StegoConfig) -> tuple[list[dict], bool]:
    photos, sketches, _ = data["train"]
    noise = NoiseSpec.from_paper_units(cfg.sigma_8bit)
    opt_g = Adam(_params(nets.g_p2s, nets.g_s2p), cfg.lr_g, cfg.betas)
    opt_d = Adam(_params(nets.d_s, nets.d_p), cfg.lr_d, cfg.betas)
    history = []
    for step in range(cfg.steps):
        rng = np.random.default_rng([cfg.seed, step])
        p = Tensor(photos[rng.integers(len(photos), size=cfg.batch_size)])
        s = Tensor(sketches[rng.integers(len(sketches), size=cfg.batch_size)])

        # generators: each translation runs once and its output is reused below
        fake_s = nets.g_p2s(p)
        fake_p = nets.g_s2p(s)
        mid = inject_noise(fake_s, noise, rng) if noise.sigma > 0 else fake_s
        l_cp = cycle_distance(p, nets.g_s2p(mid), cfg.cycle_norm, normalize=True)
        l_cs = cycle_distance(s, nets.g_p2s(fake_p), cfg.cycle_norm, normalize=True)
        l_adv = hinge_g_loss(nets.d_s(fake_s)) + hinge_g_loss(nets.d_p(fake_p))
        l_g = cfg.lambda_cyc * (l_cp + l_cs) + cfg.lambda_adv * l_adv
        opt_g.zero_grad()
        l_g.backward()
        opt_g.step()

        # discriminators on the detached fakes of this step
        l_d = (hinge_d_loss(nets.d_s(s), nets.d_s(fake_s.detach()))
               + hinge_d_loss(nets.d_p(p), nets.d_p(fake_p.detach())))
        opt_d.zero_grad()
        l_d.backward()
        opt_d.step()

        rec = {"step": step, "l_cyc_p": l_cp.item(), "l_cyc_s": l_cs.item(),
               "l_adv": l_adv.item(), "l_d": l_d.item()}
        history.append(rec)
        if not all(np.isfinite(v) for v in rec.values()):
            return history, True
    return history, False


# ---- probe -----------------------------------------------------------------

class Probe(Module):
    """conv-relu x3 with stride-2 downsampling, global mean pool, linear head."""

    def __init__(self, in_channels: int, n_classes: int, seed: int, width: int = 16):
        super().__init__()
        rng = np.random.default_rng(seed)
        self._conv("c0", rng, width, in_channels, 3, bias=True)
        self._conv("c1", rng, width * 2, width, 3, bias=True)
        self._conv("c2", rng, width * 2, width * 2, 3, bias=True)
        bound = 1.0 / np.sqrt(width * 2)
        self.params["fc.w"] = Tensor(rng.uniform(-bound, bound, (width * 2, n_classes)), requires_grad=True)
        self.params["fc.b"] = Tensor(np.zeros(n_classes), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        h = T.relu(self.conv(x, "c0", padding=1))
        h = T.relu(self.conv(h, "c1", stride=2, padding=1))
        h = T.relu(self.conv(h, "c2", stride=2, padding=1))
        h = T.mean(h, axis=(2, 3))
        return h @ self.params["fc.w"] + self.params["fc.b"]


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    lp = T.log_softmax(logits, axis=1)
    onehot = np.zeros(logits.shape, dtype=logits.dtype)
    onehot[np.arange(len(labels)), labels] = 1
    return -(lp * Tensor(onehot)).sum() * (1.0 / len(labels))


def train_probe(x_train: np.ndarray, y_train: np.ndarray, x_test: np.ndarray, y_test: np.ndarray,
                n_classes: int, cfg: StegoConfig, seed: int,
                noise: NoiseSpec | None = None) -> float:
    """Fit a probe on (x_train, y_train); return its error rate on x_test.

    With ``noise``, fresh Gaussian noise is added to every training and test input.
    """
    probe = Probe(x_train.shape[1], n_classes, seed)
    opt = Adam(probe.params, cfg.probe_lr)
    for step in range(cfg.probe_steps):
        rng = np.random.default_rng([seed, 7, step])
        idx = rng.integers(len(x_train), size=cfg.probe_batch)
        x = Tensor(x_train[idx])
        if noise is not None:
            x = inject_noise(x, noise, rng)
        loss = cross_entropy(probe(x), y_train[idx])
        opt.zero_grad()
        loss.backward()
        opt.step()
    xt = x_test
    if noise is not None:
        xt = xt + noise.sigma * np.random.default_rng([seed, 8]).standard_normal(xt.shape)
    pred = batched(probe, xt).argmax(axis=1)
    return float(np.mean(pred != y_test))


def classify_hue(photos: np.ndarray, n_hues: int) -> np.ndarray:
    """Nearest hue class of the mean colour of each [-1, 1] photo."""
    rgb = (photos.mean(axis=(2, 3)) + 1) / 2
    h = np.array([colorsys.rgb_to_hsv(*np.clip(c, 0, 1))[0] for c in rgb])
    cls = np.rint(h * n_hues).astype(int) % n_hues
    return cls


def evaluate(nets: StegoNets, data, cfg: StegoConfig) -> dict:
    tr_p, tr_s, tr_h = data["train"]
    ho_p, ho_s, ho_h = data["heldout"]
    n_hues = data["n_hues"]
    gen_tr = batched(nets.g_p2s, tr_p)
    gen_ho = batched(nets.g_p2s, ho_p)
    recon = batched(nets.g_s2p, gen_ho)
    noise = NoiseSpec.from_paper_units(cfg.sigma_8bit)
    return {
        "probe_err_generated": train_probe(gen_tr, tr_h, gen_ho, ho_h, n_hues, cfg, cfg.seed),
        "probe_err_true": train_probe(tr_s, tr_h, ho_s, ho_h, n_hues, cfg, cfg.seed),
        "probe_err_noisy": (train_probe(gen_tr, tr_h, gen_ho, ho_h, n_hues, cfg, cfg.seed, noise)
                            if noise.sigma > 0 else float("nan")),
        "cycle_err": float(np.mean(np.abs(recon - ho_p))),
        "cycle_attr_acc": float(np.mean(classify_hue(recon, n_hues) == ho_h)),
    }


def run_plain_cycle(data, cfg: StegoConfig, max_retries: int = 2):
    """Train the unpaired cycle model and probe it. Diverged runs retry with the next seed."""
    t0 = time.perf_counter()
    seeds = []
    seed = cfg.seed
    for attempt in range(max_retries + 1):
        run_cfg = StegoConfig(**{**asdict(cfg), "seed": seed})
        seeds.append(seed)
        nets = build_nets(run_cfg)
        history, diverged = train_cycle(nets, data, run_cfg)
        if not diverged:
            break
        log.warning("sigma=%s seed=%s diverged; retrying with seed %s", cfg.sigma_8bit, seed, seed + 1)
        seed += 1
    if diverged:
        nan = float("nan")
        return nets, StegoReport(cfg.sigma_8bit, cfg.seed, nan, nan, nan, True,
                                 seconds=time.perf_counter() - t0, seeds=seeds)
    ev = evaluate(nets, data, run_cfg)
    report = StegoReport(cfg.sigma_8bit, cfg.seed, ev["probe_err_generated"], ev["probe_err_true"],
                         ev["cycle_err"], False, ev["probe_err_noisy"], ev["cycle_attr_acc"],
                         time.perf_counter() - t0, seeds)
    return nets, report


def _sweep_job(args):
    data, cfg, keep = args
    nets, rep = run_plain_cycle(data, cfg)
    log.info("sigma=%s seed=%s probe_gen=%.3f probe_true=%.3f cycle=%.4f (%.0fs)",
             cfg.sigma_8bit, cfg.seed, rep.probe_err_generated, rep.probe_err_true, rep.cycle_err, rep.seconds)
    return rep, (nets if keep and not rep.diverged else None)


def noise_sweep(data, sigmas, seeds, base: StegoConfig = StegoConfig(), workers: int = 1,
                keep_nets: bool = False):
    """One run per (sigma, seed). Runs are independent, so ``workers > 1`` uses processes.

    Returns the reports, or ``(reports, nets)`` with ``keep_nets``.
    """
    if not sigmas:
        raise ValueError("sigmas must be non-empty")
    jobs = [(data, replace(base, sigma_8bit=float(sigma), seed=int(seed)), keep_nets)
            for sigma in sigmas for seed in seeds]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_sweep_job, jobs))
    else:
        results = [_sweep_job(j) for j in jobs]
    reports = [r for r, _ in results]
    return (reports, [n for _, n in results]) if keep_nets else reports


def write_tsv(reports, path) -> None:
    with open(path, "w") as fh:
        fh.write("\t".join(TSV_HEADER) + "\n")
        for r in reports:
            sigma, seed, pg, pt, ce, dv = r.row()
            fh.write(f"{sigma:g}\t{seed}\t{pg:.6f}\t{pt:.6f}\t{ce:.6f}\t{dv}\n")
