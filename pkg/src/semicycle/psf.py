"""Pseudo sketch features: dense feature-patch matching against an aligned reference set.

Every k x k patch of a query photo's feature map is matched by cosine similarity to
the patches of the reference photos; the sketch patch stored at the same
(reference, position) becomes its supervision target.

Ties: the winner is the lowest (reference, patch) index whose score is within
``TIE_TOL`` of the maximum. Both matching routes share this rule through
``_pick`` so floating-point reduction order cannot split exact ties.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import tensor as T
from .errors import ContractError, DimensionError, IncompatibleError
from .features import LEVELS, ExtractorSpec, FeaturePyramid, extract_batch, get_extractor
from .tensor import Tensor

TIE_TOL = 1e-9
STORE_MAGIC = b"SCGR"
STORE_VERSION = 1
_U32 = struct.Struct("<I")
# cap on score-matrix elements materialised per band in match_conv
_BAND_BUDGET = 1 << 24


@dataclass
class PatchSet:
    level: int
    k: int
    patches: np.ndarray          # (m, c*k*k), (channel, row, col) order
    norms: np.ndarray            # (m,)
    grid: tuple[int, int]        # (H-k+1, W-k+1)

    @property
    def m(self) -> int:
        return self.patches.shape[0]


@dataclass
class MatchResult:
    level: int
    ref: np.ndarray              # (m,) reference index i'
    patch: np.ndarray            # (m,) patch index j'
    score: np.ndarray            # (m,) cosine similarity
    flagged: np.ndarray          # (m,) zero-norm query patch
    grid: tuple[int, int]

    def pairs(self) -> np.ndarray:
        return np.stack([self.ref, self.patch], axis=1)


@dataclass
class LevelBank:
    photo: np.ndarray            # (N, m, d) unit-normalised photo patches, float32
    sketch: np.ndarray           # (N, m, d) raw sketch patches, float32
    map_shape: tuple[int, int, int]   # (c, h, w) of the level map

    @property
    def photo_zero(self) -> np.ndarray:
        return ~np.any(self.photo != 0, axis=2)


@dataclass
class ReferencePatchStore:
    k: int
    fingerprint: bytes
    banks: dict[int, LevelBank]
    descriptors: np.ndarray      # (N, c5*h5*w5) flattened level-5 photo maps, float32
    level5_channels: int = 0

    @property
    def N(self) -> int:
        return self.descriptors.shape[0]

    def m(self, level: int) -> int:
        return self.banks[level].photo.shape[1]

    def check(self, fingerprint: bytes | None) -> None:
        if fingerprint is not None and fingerprint != self.fingerprint:
            raise IncompatibleError("query features come from a different extractor than the store")


# ---- patches -------------------------------------------------------------------

def extract_patches(fmap, k: int, level: int = 0) -> PatchSet:
    """Dense stride-1 patches of a (c, H, W) map in row-major origin order."""
    arr = fmap.data if isinstance(fmap, Tensor) else np.asarray(fmap)
    if arr.ndim != 3:
        raise DimensionError(f"expected a (c, H, W) map, got {arr.shape}")
    if k < 1 or k % 2 == 0:
        raise DimensionError(f"patch size must be odd and >= 1, got {k}")
    c, H, W = arr.shape
    if k > H or k > W:
        raise DimensionError(f"patch size {k} exceeds map {H}x{W}")
    patches = T.unfold(Tensor(arr[None], dtype=arr.dtype), k).data[0]
    return PatchSet(level, k, patches, np.linalg.norm(patches, axis=1), (H - k + 1, W - k + 1))


def _unit(p: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(p, axis=-1, keepdims=True)
    return np.divide(p, n, out=np.zeros_like(p), where=n > 0)


def _pick(scores: np.ndarray) -> np.ndarray:
    """Tie-aware argmax along axis 0: first index within TIE_TOL of the column max."""
    best = scores.max(axis=0)
    return np.argmax(scores >= best - TIE_TOL, axis=0)


def _candidates(store: ReferencePatchStore, candidates) -> np.ndarray:
    if candidates is None:
        return np.arange(store.N)
    cand = np.unique(np.asarray(candidates, dtype=np.int64))
    if cand.size == 0:
        raise ContractError("candidate set is empty")
    if cand[0] < 0 or cand[-1] >= store.N:
        raise ContractError(f"candidate index out of range for N={store.N}")
    return cand


def _result(level, cand, m, flat_idx, score, flagged, grid) -> MatchResult:
    ref = cand[flat_idx // m]
    patch = flat_idx % m
    ref = np.where(flagged, 0, ref)
    patch = np.where(flagged, 0, patch)
    score = np.where(flagged, 0.0, score)
    return MatchResult(level, ref.astype(np.int64), patch.astype(np.int64), score, flagged, grid)


def _bank(store: ReferencePatchStore, level: int) -> LevelBank:
    if level not in store.banks:
        raise DimensionError(f"store has no level {level} (levels: {sorted(store.banks)})")
    return store.banks[level]


def match_bruteforce(query: PatchSet, store: ReferencePatchStore, level: int, candidates=None,
                     fingerprint: bytes | None = None) -> MatchResult:
    """Per-query-patch exhaustive cosine search over the candidate banks."""
    store.check(fingerprint)
    bank = _bank(store, level)
    cand = _candidates(store, candidates)
    N, m, d = bank.photo.shape
    if query.patches.shape[1] != d:
        raise DimensionError(f"query patch length {query.patches.shape[1]} != store {d}")
    flat = bank.photo[cand].reshape(-1, d).astype(np.float64)
    mq = query.m
    idx = np.zeros(mq, dtype=np.int64)
    score = np.zeros(mq)
    flagged = query.norms == 0
    for j in range(mq):
        if flagged[j]:
            continue
        s = flat @ (query.patches[j] / query.norms[j])
        w = _pick(s[:, None])[0]
        idx[j], score[j] = w, s[w]
    return _result(level, cand, m, idx, score, flagged, query.grid)


def match_conv(fmap, store: ReferencePatchStore, level: int, candidates=None,
               fingerprint: bytes | None = None) -> MatchResult:
    """Cosine matching as convolution: unit reference patches are the kernels.

    Per-location query norms come from convolving the squared map with a ones
    kernel. The output is processed in row bands to bound memory.
    """
    store.check(fingerprint)
    bank = _bank(store, level)
    cand = _candidates(store, candidates)
    arr = fmap.data if isinstance(fmap, Tensor) else np.asarray(fmap)
    arr = arr.astype(np.float64)
    c, H, W = arr.shape
    k = store.k
    N, m, d = bank.photo.shape
    if c * k * k != d:
        raise DimensionError(f"query channels {c} incompatible with store patch length {d}")
    if k > H or k > W:
        raise DimensionError(f"patch size {k} exceeds map {H}x{W}")
    kernels = Tensor(bank.photo[cand].reshape(-1, c, k, k), dtype=np.float64)
    ones = Tensor(np.ones((1, c, k, k)), dtype=np.float64)
    Ho, Wo = H - k + 1, W - k + 1
    rows = max(1, _BAND_BUDGET // max(1, kernels.shape[0] * Wo))
    idx = np.zeros((Ho, Wo), dtype=np.int64)
    score = np.zeros((Ho, Wo))
    qnorm = np.zeros((Ho, Wo))
    for y0 in range(0, Ho, rows):
        y1 = min(Ho, y0 + rows)
        band = Tensor(arr[None, :, y0:y1 + k - 1, :], dtype=np.float64)
        dots = T.conv2d(band, kernels).data[0]                        # (n*m, b, Wo)
        norms = np.sqrt(T.conv2d(band * band, ones).data[0, 0])       # (b, Wo)
        with np.errstate(invalid="ignore", divide="ignore"):
            s = dots / norms
        s = np.where(norms > 0, s, 0.0)
        w = _pick(s.reshape(s.shape[0], -1)).reshape(norms.shape)
        idx[y0:y1] = w
        score[y0:y1] = np.take_along_axis(s, w[None], axis=0)[0]
        qnorm[y0:y1] = norms
    flagged = (qnorm == 0).ravel()
    return _result(level, cand, m, idx.ravel(), score.ravel(), flagged, (Ho, Wo))


def select_candidates(query: FeaturePyramid | np.ndarray, store: ReferencePatchStore, n: int,
                      descriptor: str = "flat") -> list[int]:
    """Indices of the n references whose level-5 photo maps are most cosine-similar.

    ``descriptor="pooled"`` compares channel means instead of the flattened map.
    """
    if store.N == 0:
        raise ContractError("reference store is empty")
    if not 1 <= n <= store.N:
        raise ContractError(f"n must lie in [1, {store.N}], got {n}")
    q = query.levels[5] if isinstance(query, FeaturePyramid) else np.asarray(query)
    refs = store.descriptors.astype(np.float64)
    q = q.astype(np.float64).ravel()
    if descriptor == "pooled":
        c5 = store.level5_channels
        q = q.reshape(c5, -1).mean(axis=1)
        refs = refs.reshape(store.N, c5, -1).mean(axis=2)
    elif descriptor != "flat":
        raise ValueError(f"unknown descriptor {descriptor!r}")
    sims = _unit(refs) @ _unit(q)
    order = np.lexsort((np.arange(store.N), -np.round(sims, 12)))
    return [int(i) for i in order[:n]]


def assemble_psf(matches: Mapping[int, MatchResult], store: ReferencePatchStore
                 ) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    """Gather the aligned sketch patches: level -> (patches (m, d), valid (m,))."""
    out = {}
    for lvl, mr in matches.items():
        bank = _bank(store, lvl)
        patches = bank.sketch[mr.ref, mr.patch].astype(np.float64)
        out[lvl] = (patches, ~mr.flagged)
    return out


def build_psf(query: FeaturePyramid, store: ReferencePatchStore, n: int,
              levels: Sequence[int] = LEVELS) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    """Coarse candidate selection, convolutional matching and gathering for one photo."""
    store.check(query.fingerprint)
    cand = select_candidates(query, store, min(n, store.N))
    matches = {lvl: match_conv(query.levels[lvl], store, lvl, cand) for lvl in levels}
    return assemble_psf(matches, store)


# ---- pixel projection ------------------------------------------------------------

def pixel_projection(match: MatchResult, store: ReferencePatchStore, ref_sketches: np.ndarray,
                     factor: int | None = None) -> np.ndarray:
    """Visualisation only: paste matched reference-sketch pixel blocks, average overlaps.

    Each query patch covers ``k*factor`` pixels per side starting at ``origin*factor``;
    the reference block at the matched origin is copied there. Returns [1, H, W] in [0, 1].
    """
    if ref_sketches is None or len(ref_sketches) == 0:
        raise ContractError("reference sketch images are required")
    ref_sketches = np.asarray(ref_sketches, dtype=np.float64)
    if ref_sketches.shape[0] != store.N:
        raise ContractError(f"{ref_sketches.shape[0]} sketches supplied for a store of {store.N}")
    k = store.k
    bank = _bank(store, match.level)
    factor = 2 ** (match.level - 1) if factor is None else factor
    _, h, w = bank.map_shape
    ref_wo = w - k + 1
    Ho, Wo = match.grid
    C = ref_sketches.shape[1]
    size = k * factor
    acc = np.zeros((C, (Ho + k - 1) * factor, (Wo + k - 1) * factor))
    cnt = np.zeros(acc.shape[1:])
    for j in range(Ho * Wo):
        y, x = divmod(j, Wo)
        ry, rx = divmod(int(match.patch[j]), ref_wo)
        block = ref_sketches[match.ref[j], :, ry * factor:ry * factor + size, rx * factor:rx * factor + size]
        acc[:, y * factor:y * factor + size, x * factor:x * factor + size] += block
        cnt[y * factor:y * factor + size, x * factor:x * factor + size] += 1
    out = acc / np.maximum(cnt, 1)
    return np.clip((out + 1) / 2, 0.0, 1.0)


# ---- store construction and persistence -------------------------------------------

def build_reference_store(photos: np.ndarray, sketches: np.ndarray, spec: ExtractorSpec, k: int = 3,
                          levels: Sequence[int] = LEVELS) -> ReferencePatchStore:
    """Feature banks for aligned (photo [3,H,W], sketch [1|3,H,W]) pairs in [-1, 1].

    Levels whose map is smaller than k are left out of the patch banks; the
    level-5 descriptors are always kept for candidate selection.
    """
    if len(photos) == 0:
        raise ContractError("reference set is empty")
    if len(photos) != len(sketches):
        raise DimensionError(f"{len(photos)} photos but {len(sketches)} sketches")
    for i, (p, s) in enumerate(zip(photos, sketches)):
        if p.shape[1:] != s.shape[1:]:
            raise DimensionError(f"pair {i}: photo {p.shape[1:]} vs sketch {s.shape[1:]}")
        if p.shape[1:] != photos[0].shape[1:]:
            raise DimensionError(f"pair {i}: size {p.shape[1:]} differs from pair 0 {photos[0].shape[1:]}")
    ext = get_extractor(spec)
    pf = extract_batch(np.asarray(photos), spec)
    sf = extract_batch(np.asarray(sketches), spec)
    return store_from_maps({lvl: pf[lvl] for lvl in levels}, {lvl: sf[lvl] for lvl in levels},
                           k, ext.fingerprint, pf[5])


def store_from_maps(photo_maps: Mapping[int, np.ndarray], sketch_maps: Mapping[int, np.ndarray], k: int,
                    fingerprint: bytes, level5: np.ndarray | None = None) -> ReferencePatchStore:
    """Store from precomputed (N, c, h, w) maps per level.

    ``level5`` supplies the candidate-selection descriptors; by default the level-5
    entry of ``photo_maps`` (or the coarsest level given) is used.
    """
    if len(fingerprint) != 32:
        raise ValueError("fingerprint must be 32 bytes")
    banks = {}
    for lvl in sorted(photo_maps):
        pm, sm = np.asarray(photo_maps[lvl]), np.asarray(sketch_maps[lvl])
        if pm.shape[0] != sm.shape[0] or pm.shape[2:] != sm.shape[2:]:
            raise DimensionError(f"level {lvl}: photo maps {pm.shape} vs sketch maps {sm.shape}")
        c, h, w = pm.shape[1:]
        if k > h or k > w:
            continue
        pp = T.unfold(Tensor(pm, dtype=np.float64), k).data
        sp = T.unfold(Tensor(sm, dtype=np.float64), k).data
        banks[lvl] = LevelBank(_unit(pp.astype(np.float32)), sp.astype(np.float32), (c, h, w))
    if level5 is None:
        level5 = photo_maps[5] if 5 in photo_maps else photo_maps[max(photo_maps)]
    level5 = np.asarray(level5)
    desc = level5.reshape(len(level5), -1).astype(np.float32)
    return ReferencePatchStore(k, fingerprint, banks, desc, level5.shape[1])


def _write_array(buf, arr: np.ndarray) -> None:
    buf.write(_U32.pack(arr.ndim))
    for d in arr.shape:
        buf.write(_U32.pack(d))
    buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def dumps_store(store: ReferencePatchStore) -> bytes:
    buf = io.BytesIO()
    buf.write(STORE_MAGIC)
    buf.write(_U32.pack(STORE_VERSION))
    buf.write(store.fingerprint)
    buf.write(_U32.pack(store.N))
    buf.write(_U32.pack(store.k))
    buf.write(_U32.pack(len(store.banks)))
    for lvl in sorted(store.banks):
        b = store.banks[lvl]
        buf.write(_U32.pack(lvl))
        for d in b.map_shape:
            buf.write(_U32.pack(d))
        _write_array(buf, b.photo)
        _write_array(buf, b.sketch)
    buf.write(_U32.pack(store.level5_channels))
    _write_array(buf, store.descriptors)
    return buf.getvalue()


def loads_store(blob: bytes, expected_fingerprint: bytes | None = None) -> ReferencePatchStore:
    try:
        return _loads_store(blob, expected_fingerprint)
    except (struct.error, ValueError) as exc:
        if isinstance(exc, IncompatibleError):
            raise
        raise IncompatibleError(f"store file is corrupt or truncated: {exc}") from None


def _loads_store(blob: bytes, expected_fingerprint: bytes | None) -> ReferencePatchStore:
    if blob[:4] != STORE_MAGIC:
        raise IncompatibleError("not a reference store (bad magic)")
    pos = 4

    def u32():
        nonlocal pos
        (v,) = _U32.unpack_from(blob, pos)
        pos += 4
        return v

    def arr():
        nonlocal pos
        rank = u32()
        dims = tuple(u32() for _ in range(rank))
        size = int(np.prod(dims))
        out = np.frombuffer(blob, "<f4", size, pos).reshape(dims).astype(np.float32)
        pos += 4 * size
        return out

    version = u32()
    if version != STORE_VERSION:
        raise IncompatibleError(f"store version {version}, expected {STORE_VERSION}")
    fp = bytes(blob[pos:pos + 32])
    pos += 32
    if expected_fingerprint is not None and fp != expected_fingerprint:
        raise IncompatibleError("store was built with a different extractor")
    N, k, nlev = u32(), u32(), u32()
    banks = {}
    for _ in range(nlev):
        lvl = u32()
        shape = (u32(), u32(), u32())
        photo = arr()
        sketch = arr()
        banks[lvl] = LevelBank(photo, sketch, shape)
    c5 = u32()
    desc = arr()
    if pos != len(blob) or desc.shape[0] != N:
        raise IncompatibleError("store file is corrupt or truncated")
    return ReferencePatchStore(k, fp, banks, desc, c5)


def save_store(store: ReferencePatchStore, path) -> None:
    Path(path).write_bytes(dumps_store(store))


def load_store(path, expected_fingerprint: bytes | None = None) -> ReferencePatchStore:
    return loads_store(Path(path).read_bytes(), expected_fingerprint)
