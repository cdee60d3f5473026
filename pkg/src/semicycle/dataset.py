"""On-disk dataset layout: ``photos/`` and ``sketches/`` paired by file stem.

``manifest.tsv`` (optional) lists ``stem, split[, hue]``; without it every pair is
training data. Photo-only entries are allowed, orphan sketches are not.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import InputError
from .images import read_image, write_image
from .synthetic import SyntheticDomainSpec, gen_synthetic_domains

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp"}
MANIFEST = "manifest.tsv"


def list_images(directory) -> dict[str, Path]:
    d = Path(directory)
    return {p.stem: p for p in sorted(d.iterdir()) if p.suffix.lower() in IMAGE_SUFFIXES}


@dataclass
class DatasetLayout:
    root: Path
    photos: dict[str, Path]
    sketches: dict[str, Path]
    split: dict[str, str] = field(default_factory=dict)
    attributes: dict[str, int] = field(default_factory=dict)

    def pair_stems(self, split: str | None = "train") -> list[str]:
        return [s for s in sorted(self.sketches) if split is None or self.split.get(s, "train") == split]

    def photo_only_stems(self) -> list[str]:
        return [s for s in sorted(self.photos) if s not in self.sketches]


def scan_layout(root) -> DatasetLayout:
    """Validate the layout; every problem is collected before raising."""
    root = Path(root)
    if not (root / "photos").is_dir():
        raise InputError(f"{root}: missing photos/ directory")
    if not (root / "sketches").is_dir():
        raise InputError(f"{root}: missing sketches/ directory")
    photos = list_images(root / "photos")
    sketches = list_images(root / "sketches")
    problems = [f"sketch {s!r} has no photo with the same stem" for s in sketches if s not in photos]
    sizes = {}
    for stem, path in list(photos.items()) + [(f"{k} (sketch)", v) for k, v in sketches.items()]:
        with Image.open(path) as img:
            sizes[stem] = img.size
    if sizes:
        ref_stem, ref = next(iter(sizes.items()))
        problems += [f"{stem}: size {sz[0]}x{sz[1]} differs from {ref_stem} ({ref[0]}x{ref[1]})"
                     for stem, sz in sizes.items() if sz != ref]
    if problems:
        raise InputError(f"{root}: invalid dataset\n  " + "\n  ".join(problems))
    layout = DatasetLayout(root, photos, sketches)
    man = root / MANIFEST
    if man.exists():
        for line in man.read_text().splitlines()[1:]:
            cols = line.split("\t")
            if len(cols) >= 2:
                layout.split[cols[0]] = cols[1]
            if len(cols) >= 3 and cols[2]:
                layout.attributes[cols[0]] = int(cols[2])
    return layout


def load_pairs(layout: DatasetLayout, split: str | None = "train"):
    """(photos [N,3,H,W], sketches [N,1,H,W], stems) in [-1, 1]."""
    stems = layout.pair_stems(split)
    if not stems:
        raise InputError(f"{layout.root}: no photo/sketch pairs in split {split!r}")
    photos = np.stack([read_image(layout.photos[s], 3) for s in stems])
    sketches = np.stack([read_image(layout.sketches[s], 1) for s in stems])
    return photos, sketches, stems


def load_photo_dir(directory) -> tuple[np.ndarray, list[str]]:
    files = list_images(directory)
    if not files:
        raise InputError(f"{directory}: no images")
    return np.stack([read_image(p, 3) for p in files.values()]), list(files)


def write_synthetic(out, count: int, size: int = 32, seed: int = 0, n_hues: int = 8,
                    test_fraction: float = 0.2) -> DatasetLayout:
    """Render a synthetic paired dataset plus manifest (the last items form the test split)."""
    photos, sketches, hues = gen_synthetic_domains(SyntheticDomainSpec(size, n_hues, seed=seed), count)
    out = Path(out)
    n_test = int(round(count * test_fraction))
    lines = ["stem\tsplit\thue"]
    for i in range(count):
        stem = f"item{i:05d}"
        write_image(out / "photos" / f"{stem}.png", photos[i])
        write_image(out / "sketches" / f"{stem}.png", sketches[i])
        lines.append(f"{stem}\t{'test' if i >= count - n_test else 'train'}\t{hues[i]}")
    (out / MANIFEST).write_text("\n".join(lines) + "\n")
    return scan_layout(out)
