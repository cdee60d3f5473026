"""Hierarchical feature pyramids.

The toy extractor is five frozen conv3x3+ReLU blocks with a stride-2 average pool
after each of the first four, so levels 3/4/5 sit at 1/4, 1/8 and 1/16 of the input
resolution. Weights are orthogonal and a pure function of the seed. A file-backed
mode reads pyramids exported by an external network instead.
"""

from __future__ import annotations

import functools
import hashlib
import io
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .errors import DimensionError, IncompatibleError
from .tensor import Tensor

LEVELS = (3, 4, 5)
FEATURE_MAGIC = b"SCGF"
FEATURE_VERSION = 1
_U32 = struct.Struct("<I")


@dataclass(frozen=True)
class ExtractorSpec:
    mode: str = "toy"                                   # "toy" | "file"
    seed: int = 0
    block_channels: tuple[int, ...] = (16, 32, 32, 64, 64)
    root: str | None = None                             # directory of .scgf files in file mode

    @property
    def channels(self) -> dict[int, int]:
        return {lvl: self.block_channels[lvl - 1] for lvl in LEVELS}

    @property
    def downsample(self) -> dict[int, int]:
        return {lvl: 2 ** (lvl - 1) for lvl in LEVELS}


@dataclass
class FeaturePyramid:
    levels: dict[int, np.ndarray]                        # level -> (c, H, W)
    fingerprint: bytes
    source_id: str = ""

    def shapes(self) -> dict[int, tuple[int, ...]]:
        return {k: v.shape for k, v in self.levels.items()}


def _orthogonal(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    return q if rows >= cols else q.T


class ToyExtractor:
    def __init__(self, spec: ExtractorSpec):
        if spec.mode != "toy":
            raise ValueError("ToyExtractor needs mode='toy'")
        if len(spec.block_channels) != 5:
            raise ValueError("toy extractor has exactly five blocks")
        self.spec = spec
        rng = np.random.default_rng(spec.seed)
        self.weights: list[np.ndarray] = []
        cin = 3
        for cout in spec.block_channels:
            w = _orthogonal(rng, cout, cin * 9) * np.sqrt(2.0)
            self.weights.append(w.reshape(cout, cin, 3, 3))
            cin = cout
        h = hashlib.sha256()
        h.update(f"toy|{spec.seed}|{spec.block_channels}".encode())
        for w in self.weights:
            h.update(np.ascontiguousarray(w, dtype="<f8").tobytes())
        self.fingerprint = h.digest()

    def forward(self, x: Tensor) -> dict[int, Tensor]:
        """[B,3,H,W] -> {level: [B,c,H/2^(l-1),W/2^(l-1)]}, differentiable in ``x``."""
        if x.ndim != 4 or x.shape[1] != 3:
            raise DimensionError(f"extractor expects [B,3,H,W], got {x.shape}")
        H, W = x.shape[2:]
        if H % 16 or W % 16:
            raise DimensionError(
                f"image {H}x{W} must be divisible by 16; pad to {-(-H // 16) * 16}x{-(-W // 16) * 16}")
        out = {}
        h = x
        for i, w in enumerate(self.weights):
            h = T.relu(T.conv2d(h, Tensor(w, dtype=x.dtype), padding=1))
            lvl = i + 1
            if lvl in LEVELS:
                out[lvl] = h
            if i < 4:
                h = T.avg_pool2d(h, 2)
        return out


@functools.lru_cache(maxsize=8)
def get_extractor(spec: ExtractorSpec) -> ToyExtractor:
    return ToyExtractor(spec)


def gray_to_rgb(x: Tensor) -> Tensor:
    if x.shape[1] == 3:
        return x
    return T.concat([x, x, x], axis=1)


def extract_pyramid(image, spec: ExtractorSpec, source_id: str = "") -> FeaturePyramid:
    """Pyramid of one [3,H,W] (or [1,H,W] grayscale) image in [-1, 1].

    In file mode ``image`` is ignored and ``source_id`` names the exported file.
    """
    if spec.mode == "file":
        if spec.root is None:
            raise ValueError("file-backed extractor needs a root directory")
        return load_features(Path(spec.root) / f"{source_id}.scgf")
    ext = get_extractor(spec)
    arr = image.data if isinstance(image, Tensor) else np.asarray(image)
    if arr.ndim != 3:
        raise DimensionError(f"expected a [C,H,W] image, got {arr.shape}")
    x = gray_to_rgb(Tensor(arr[None], dtype=np.float64))
    feats = ext.forward(x)
    return FeaturePyramid({lvl: f.data[0] for lvl, f in feats.items()}, ext.fingerprint, source_id)


def extract_batch(images: np.ndarray, spec: ExtractorSpec) -> dict[int, np.ndarray]:
    """Non-differentiable batched extraction: {level: [B,c,h,w]} in float64."""
    ext = get_extractor(spec)
    x = gray_to_rgb(Tensor(np.asarray(images), dtype=np.float64))
    return {lvl: f.data for lvl, f in ext.forward(x).items()}


# ---- persistence --------------------------------------------------------------

def dumps_features(pyr: FeaturePyramid) -> bytes:
    if len(pyr.fingerprint) != 32:
        raise ValueError("fingerprint must be 32 bytes")
    buf = io.BytesIO()
    buf.write(FEATURE_MAGIC)
    buf.write(_U32.pack(FEATURE_VERSION))
    buf.write(pyr.fingerprint)
    buf.write(_U32.pack(len(pyr.levels)))
    for lvl in sorted(pyr.levels):
        f = pyr.levels[lvl]
        buf.write(struct.pack("<B", lvl))
        for d in f.shape:
            buf.write(_U32.pack(d))
        buf.write(np.ascontiguousarray(f, dtype="<f4").tobytes())
    return buf.getvalue()


def predicted_size(blob_header: bytes) -> int:
    """Total file size implied by the header fields of a feature file."""
    pos = 4 + 4 + 32
    (n,) = _U32.unpack_from(blob_header, pos)
    pos += 4
    for _ in range(n):
        c, h, w = struct.unpack_from("<3I", blob_header, pos + 1)
        pos += 1 + 12 + 4 * c * h * w
    return pos


def loads_features(blob: bytes, source_id: str = "",
                   expected_fingerprint: bytes | None = None) -> FeaturePyramid:
    try:
        return _loads_features(blob, source_id, expected_fingerprint)
    except (struct.error, ValueError) as exc:
        if isinstance(exc, IncompatibleError):
            raise
        raise IncompatibleError(f"feature file is corrupt or truncated: {exc}") from None


def _loads_features(blob: bytes, source_id: str, expected_fingerprint: bytes | None) -> FeaturePyramid:
    if blob[:4] != FEATURE_MAGIC:
        raise IncompatibleError("not a feature file (bad magic)")
    (version,) = _U32.unpack_from(blob, 4)
    if version != FEATURE_VERSION:
        raise IncompatibleError(f"feature file version {version}, expected {FEATURE_VERSION}")
    fp = bytes(blob[8:40])
    if expected_fingerprint is not None and fp != expected_fingerprint:
        raise IncompatibleError(
            f"extractor fingerprint {fp.hex()[:12]} does not match session {expected_fingerprint.hex()[:12]}")
    (n,) = _U32.unpack_from(blob, 40)
    pos = 44
    levels = {}
    for _ in range(n):
        lvl = blob[pos]
        c, h, w = struct.unpack_from("<3I", blob, pos + 1)
        pos += 13
        size = c * h * w
        levels[lvl] = np.frombuffer(blob, "<f4", size, pos).reshape(c, h, w).copy()
        pos += 4 * size
    if pos != len(blob):
        raise IncompatibleError("feature file size does not match its header")
    return FeaturePyramid(levels, fp, source_id)


def save_features(pyr: FeaturePyramid, path) -> None:
    Path(path).write_bytes(dumps_features(pyr))


def load_features(path, expected_fingerprint: bytes | None = None) -> FeaturePyramid:
    path = Path(path)
    return loads_features(path.read_bytes(), path.stem, expected_fingerprint)


def load_feature_dir(root, expected_fingerprint: bytes | None = None) -> list[FeaturePyramid]:
    return [load_features(p, expected_fingerprint) for p in sorted(Path(root).glob("*.scgf"))]
