"""Generator and discriminator definitions.

Generator: 7x7 stem, stride-2 downsamples, residual blocks, nearest-upsample + conv
stages, 7x7 head with tanh. Instance norm follows every inner conv, so those convs
carry no bias. Discriminator: stride-2 4x4 convs with leaky ReLU (no norm on the
first), closed by a 3x3 conv emitting a raw patch score map.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import DimensionError
from .tensor import Tensor


@dataclass(frozen=True)
class GeneratorSpec:
    in_channels: int = 3
    out_channels: int = 1
    width: int = 8
    n_res: int = 4
    n_down: int = 2
    norm: str = "instance"      # "instance" | "none"


@dataclass(frozen=True)
class DiscriminatorSpec:
    in_channels: int = 1
    width: int = 8
    n_layers: int = 3
    slope: float = 0.2


class Module:
    def __init__(self):
        self.params: dict[str, Tensor] = {}

    def _conv(self, name: str, rng: np.random.Generator, cout: int, cin: int, k: int,
              bias: bool = False) -> None:
        bound = 1.0 / np.sqrt(cin * k * k)
        self.params[f"{name}.w"] = Tensor(rng.uniform(-bound, bound, (cout, cin, k, k)), requires_grad=True)
        if bias:
            self.params[f"{name}.b"] = Tensor(rng.uniform(-bound, bound, cout), requires_grad=True)

    def conv(self, x: Tensor, name: str, stride: int = 1, padding: int = 0) -> Tensor:
        return T.conv2d(x, self.params[f"{name}.w"], self.params.get(f"{name}.b"), stride, padding)

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        return {prefix + k: v for k, v in self.params.items()}

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        bad = [k for k, v in self.params.items() if k not in state or state[k].shape != v.shape]
        extra = [k for k in state if k not in self.params]
        if bad or extra:
            raise DimensionError(f"state mismatch: missing/shape {bad}, unexpected {extra}")
        for k, v in self.params.items():
            v.data = np.array(state[k], dtype=v.data.dtype)

    def astype(self, dtype) -> Module:
        for p in self.params.values():
            p.data = p.data.astype(dtype)
        return self

    def zero_(self) -> None:
        for p in self.params.values():
            p.data[...] = 0


class Generator(Module):
    def __init__(self, spec: GeneratorSpec, seed: int):
        super().__init__()
        self.spec = spec
        rng = np.random.default_rng(seed)
        w = spec.width
        if spec.norm not in ("instance", "none"):
            raise ValueError(f"unknown norm {spec.norm!r}")
        bias = spec.norm == "none"
        self._conv("stem", rng, w, spec.in_channels, 7, bias)
        ch = w
        for i in range(spec.n_down):
            self._conv(f"down{i}", rng, ch * 2, ch, 3, bias)
            ch *= 2
        for i in range(spec.n_res):
            self._conv(f"res{i}.a", rng, ch, ch, 3, bias)
            self._conv(f"res{i}.b", rng, ch, ch, 3, bias)
        for i in range(spec.n_down):
            self._conv(f"up{i}", rng, ch // 2, ch, 3, bias)
            ch //= 2
        self._conv("head", rng, spec.out_channels, ch, 7, bias=True)

    def __call__(self, x: Tensor) -> Tensor:
        s = self.spec
        if x.ndim != 4 or x.shape[1] != s.in_channels:
            raise DimensionError(f"generator expects [B,{s.in_channels},H,W], got {x.shape}")
        f = 2 ** s.n_down
        if x.shape[2] % f or x.shape[3] % f:
            raise DimensionError(f"H and W must be divisible by {f}, got {x.shape[2:]}")
        norm = T.instance_norm if s.norm == "instance" else (lambda t: t)
        h = T.relu(norm(self.conv(x, "stem", padding=3)))
        for i in range(s.n_down):
            h = T.relu(norm(self.conv(h, f"down{i}", stride=2, padding=1)))
        for i in range(s.n_res):
            r = T.relu(norm(self.conv(h, f"res{i}.a", padding=1)))
            h = h + norm(self.conv(r, f"res{i}.b", padding=1))
        for i in range(s.n_down):
            h = T.relu(norm(self.conv(T.upsample_nearest(h), f"up{i}", padding=1)))
        return T.tanh(self.conv(h, "head", padding=3))


class Discriminator(Module):
    def __init__(self, spec: DiscriminatorSpec, seed: int):
        super().__init__()
        self.spec = spec
        rng = np.random.default_rng(seed)
        cin, ch = spec.in_channels, spec.width
        for i in range(spec.n_layers):
            self._conv(f"l{i}", rng, ch, cin, 4, bias=(i == 0))
            cin, ch = ch, ch * 2
        self._conv("score", rng, 1, cin, 3, bias=True)

    def __call__(self, x: Tensor) -> Tensor:
        s = self.spec
        if x.ndim != 4 or x.shape[1] != s.in_channels:
            raise DimensionError(f"discriminator expects [B,{s.in_channels},H,W], got {x.shape}")
        need = 2 ** (s.n_layers + 1)
        if x.shape[2] < need or x.shape[3] < need:
            raise DimensionError(f"input {x.shape[2:]} smaller than the {need}px receptive field")
        h = x
        for i in range(s.n_layers):
            h = self.conv(h, f"l{i}", stride=2, padding=1)
            if i > 0:
                h = T.instance_norm(h)
            h = T.leaky_relu(h, s.slope)
        return self.conv(h, "score", padding=1)


def build_generator(spec: GeneratorSpec, seed: int) -> Generator:
    return Generator(spec, seed)


def build_discriminator(spec: DiscriminatorSpec, seed: int) -> Discriminator:
    return Discriminator(spec, seed)
