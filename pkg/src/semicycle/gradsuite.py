"""The full finite-difference gradient suite: primitives, every loss, both network families.

Everything runs in double precision on small seeded instances. Each case reports the
max relative error between tape and central-difference gradients.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .features import ExtractorSpec, get_extractor, gray_to_rgb
from .gradcheck import check_params, grad_check
from .losses import (LossWeights, NoiseSpec, cycle_noise_loss, hinge_d_loss, hinge_g_loss, psf_loss,
                     style_loss, total_losses, unpaired_cycle_losses)
from .networks import DiscriminatorSpec, GeneratorSpec, build_discriminator, build_generator
from .tensor import Tensor

TOLERANCE = 1e-4


@dataclass
class CaseResult:
    name: str
    error: float
    seconds: float

    @property
    def ok(self) -> bool:
        return self.error <= TOLERANCE


def _x(rng, *shape, low=None):
    a = rng.standard_normal(shape)
    if low is not None:
        a = np.abs(a) + low
    return Tensor(a, dtype=np.float64)


def _off_kink(a: np.ndarray, points=(0.0,), gap=1e-3) -> np.ndarray:
    """Push values away from non-differentiable points."""
    a = a.copy()
    for p in points:
        near = np.abs(a - p) < gap
        a[near] = p + np.where(a[near] >= p, 1, -1) * 10 * gap
    return a


def _weighted(rng, shape):
    """Random projection turning a tensor output into a well-scaled scalar."""
    c = Tensor(rng.standard_normal(shape), dtype=np.float64)
    return lambda y: (y * c).sum()


def primitive_cases() -> dict[str, Callable[[], float]]:
    rng = np.random.default_rng(0)
    cases = {}

    def unary(name, fn, shape=(3, 4), low=None, kinks=None):
        x = _x(rng, *shape, low=low)
        if kinks is not None:
            x.data = _off_kink(x.data, kinks)
        proj = _weighted(rng, fn(Tensor(x.data.copy(), dtype=np.float64)).shape)
        cases[name] = lambda: grad_check(lambda t: proj(fn(t)), x)

    unary("add", lambda t: t + Tensor(np.arange(4.0), dtype=np.float64))
    unary("mul", lambda t: t * t)
    unary("div", lambda t: Tensor(np.ones((3, 4)), dtype=np.float64) / t, low=0.5)
    unary("power", lambda t: t ** 3)
    unary("sqrt", T.sqrt, low=0.2)
    unary("exp", T.exp)
    unary("log", T.log, low=0.2)
    unary("abs", T.tabs, kinks=(0.0,))
    unary("tanh", T.tanh)
    unary("relu", T.relu, kinks=(0.0,))
    unary("leaky_relu", lambda t: T.leaky_relu(t, 0.2), kinks=(0.0,))
    unary("sum_axis", lambda t: T.tsum(t, axis=1))
    unary("mean_axis", lambda t: T.mean(t, axis=0, keepdims=True))
    unary("reshape_transpose", lambda t: T.transpose(T.reshape(t, (4, 3)), (1, 0)))
    unary("getitem", lambda t: t[1:, ::2])
    unary("getitem_fancy", lambda t: t[np.array([0, 2, 2])])
    unary("concat", lambda t: T.concat([t, t * 2.0], axis=0))
    unary("matmul", lambda t: t @ Tensor(np.linspace(-1, 1, 20).reshape(4, 5), dtype=np.float64))
    unary("log_softmax", lambda t: T.log_softmax(t, axis=1))
    unary("l2_norm", lambda t: T.l2_norm(t, axis=1))
    w = Tensor(rng.standard_normal((4, 3, 3, 3)), dtype=np.float64)
    unary("conv2d_input", lambda t: T.conv2d(t, w, stride=2, padding=1), shape=(2, 3, 7, 7))
    xin = Tensor(rng.standard_normal((2, 3, 6, 6)), dtype=np.float64)
    unary("conv2d_kernel", lambda t: T.conv2d(xin, t, padding=1), shape=(4, 3, 3, 3))
    unary("conv2d_bias", lambda t: T.conv2d(xin, w, t), shape=(4,))
    unary("unfold", lambda t: T.unfold(t, 3), shape=(2, 3, 5, 5))
    unary("avg_pool2d", lambda t: T.avg_pool2d(t, 2), shape=(2, 3, 6, 6))
    unary("upsample_nearest", lambda t: T.upsample_nearest(t, 2), shape=(2, 3, 3, 3))
    unary("instance_norm", T.instance_norm, shape=(2, 3, 5, 5))
    return cases


def _toy_psf(rng, pred_shapes, k):
    psf = {}
    for lvl, (B, c, h, w) in pred_shapes.items():
        m = (h - k + 1) * (w - k + 1)
        valid = rng.random((B, m)) > 0.2
        psf[lvl] = (rng.standard_normal((B, m, c * k * k)), valid)
    return psf


def loss_cases() -> dict[str, Callable[[], float]]:
    rng = np.random.default_rng(1)
    cases = {}
    shapes = {3: (2, 4, 6, 6), 4: (2, 5, 4, 4), 5: (2, 6, 3, 3)}
    k = 3
    psf = _toy_psf(rng, shapes, k)
    feats = {lvl: rng.standard_normal(s) for lvl, s in shapes.items()}

    def on_level(loss, lvl):
        x = Tensor(feats[lvl].copy(), dtype=np.float64)
        fixed = {l: Tensor(f, dtype=np.float64) for l, f in feats.items()}

        def f(t):
            return loss({**fixed, lvl: t}, psf, k)
        return lambda: grad_check(f, x)

    for lvl in shapes:
        cases[f"psf_loss_level{lvl}"] = on_level(psf_loss, lvl)
        cases[f"style_loss_level{lvl}"] = on_level(style_loss, lvl)

    scores_r = _off_kink(rng.standard_normal((2, 1, 3, 3)) * 1.5, (1.0, -1.0))
    scores_f = _off_kink(rng.standard_normal((2, 1, 3, 3)) * 1.5, (1.0, -1.0))
    sr = Tensor(scores_r, dtype=np.float64)
    sf = Tensor(scores_f, dtype=np.float64)
    cases["hinge_g"] = lambda: grad_check(hinge_g_loss, Tensor(scores_f, dtype=np.float64))
    cases["hinge_d_real"] = lambda: grad_check(lambda t: hinge_d_loss(t, sf), Tensor(scores_r, dtype=np.float64))
    cases["hinge_d_fake"] = lambda: grad_check(lambda t: hinge_d_loss(sr, t), Tensor(scores_f, dtype=np.float64))

    g_p2s, g_s2p = _small_generators()
    p = Tensor(rng.uniform(-1, 1, (2, 3, 8, 8)), dtype=np.float64)
    s = Tensor(rng.uniform(-1, 1, (2, 1, 8, 8)), dtype=np.float64)
    noise = NoiseSpec(0.1, seed=3)

    def cyc():
        return cycle_noise_loss(p, g_p2s, g_s2p, noise, rng=np.random.default_rng(3))

    params = {**g_p2s.named_parameters("g_p2s/"), **g_s2p.named_parameters("g_s2p/")}
    cases["cycle_noise_loss_params"] = lambda: max(check_params(cyc, params, samples=3).values())
    cases["cycle_noise_loss_input"] = lambda: grad_check(
        lambda t: cycle_noise_loss(t, g_p2s, g_s2p, noise, rng=np.random.default_rng(3)),
        Tensor(p.data.copy(), dtype=np.float64), indices=range(0, p.data.size, 7))

    def unpaired(norm):
        def f():
            lp, ls = unpaired_cycle_losses(p, s, g_p2s, g_s2p, norm)
            return lp + ls
        return lambda: max(check_params(f, params, samples=3).values())

    cases["unpaired_cycle_l2_params"] = unpaired("l2")
    cases["unpaired_cycle_l1_params"] = unpaired("l1")
    cases["total_generator_loss_16px"] = _total_loss_case()
    return cases


def _small_generators():
    with T.precision("double"):
        g_p2s = build_generator(GeneratorSpec(3, 1, width=4, n_res=1, n_down=1), 11)
        g_s2p = build_generator(GeneratorSpec(1, 3, width=4, n_res=1, n_down=1), 12)
    return g_p2s.astype(np.float64), g_s2p.astype(np.float64)


def _total_loss_case() -> Callable[[], float]:
    """Generator total on a 16x16 instance, differentiated w.r.t. the input photo."""
    rng = np.random.default_rng(2)
    ext = get_extractor(ExtractorSpec(block_channels=(4, 4, 4, 4, 4)))
    g_p2s, g_s2p = _small_generators()
    with T.precision("double"):
        d_s = build_discriminator(DiscriminatorSpec(1, 4, n_layers=2), 13).astype(np.float64)
        d_p = build_discriminator(DiscriminatorSpec(3, 4, n_layers=2), 14).astype(np.float64)
    k = 1
    shapes = {3: (1, 4, 4, 4), 4: (1, 4, 2, 2), 5: (1, 4, 1, 1)}
    psf = _toy_psf(rng, shapes, k)
    noise = NoiseSpec(0.05, seed=4)
    photo = Tensor(rng.uniform(-1, 1, (1, 3, 16, 16)), dtype=np.float64)

    def f(p):
        s_hat = g_p2s(p)
        feats = ext.forward(gray_to_rgb(s_hat))
        l_p = psf_loss(feats, psf, k)
        l_sty = style_loss(feats, psf, k)
        l_cyc = cycle_noise_loss(p, g_p2s, g_s2p, noise, rng=np.random.default_rng(4))
        l_adv = (hinge_g_loss(d_s(s_hat)), hinge_g_loss(d_p(g_s2p(s_hat))))
        g, _ = total_losses(l_p, l_sty, l_cyc, l_adv, (0.0, 0.0), LossWeights())
        return g

    return lambda: grad_check(f, photo, indices=range(0, photo.data.size, 5))


def network_cases() -> dict[str, Callable[[], float]]:
    rng = np.random.default_rng(3)
    cases = {}
    with T.precision("double"):
        gens = {
            "generator_instance": build_generator(GeneratorSpec(3, 1, width=4, n_res=1, n_down=2), 21),
            "generator_nonorm": build_generator(GeneratorSpec(1, 3, width=4, n_res=1, n_down=1, norm="none"), 22),
        }
        discs = {"discriminator": build_discriminator(DiscriminatorSpec(1, 4, n_layers=3), 23)}
    for name, net in {**gens, **discs}.items():
        net.astype(np.float64)
        x = Tensor(rng.uniform(-1, 1, (2, net.spec.in_channels, 16, 16)), dtype=np.float64)
        proj = _weighted(rng, net(x).shape)
        cases[name] = (lambda net=net, x=x, proj=proj:
                       max(check_params(lambda: proj(net(x)), net.params, samples=4).values()))
    return cases


def all_cases() -> dict[str, Callable[[], float]]:
    return {**primitive_cases(), **loss_cases(), **network_cases()}


def run_suite(names=None) -> list[CaseResult]:
    out = []
    for name, fn in all_cases().items():
        if names and name not in names:
            continue
        t0 = time.perf_counter()
        err = fn()
        out.append(CaseResult(name, float(err), time.perf_counter() - t0))
    return out
