import shutil

import numpy as np
import pytest

from semicycle.dataset import load_pairs, load_photo_dir, scan_layout, write_synthetic
from semicycle.errors import InputError
from semicycle.images import write_image


@pytest.fixture
def synth(tmp_path):
    return write_synthetic(tmp_path / "d", 10, size=16, seed=1, n_hues=4)


def test_write_synthetic_layout(synth):
    assert len(synth.pair_stems("train")) == 8 and len(synth.pair_stems("test")) == 2
    assert len(synth.pair_stems(None)) == 10
    assert set(synth.attributes.values()) <= set(range(4))
    photos, sketches, stems = load_pairs(synth)
    assert photos.shape == (8, 3, 16, 16) and sketches.shape == (8, 1, 16, 16) and len(stems) == 8


def test_regeneration_is_byte_identical(tmp_path):
    a = write_synthetic(tmp_path / "a", 4, size=16, seed=3)
    b = write_synthetic(tmp_path / "b", 4, size=16, seed=3)
    for stem in a.photos:
        assert a.photos[stem].read_bytes() == b.photos[stem].read_bytes()
        assert a.sketches[stem].read_bytes() == b.sketches[stem].read_bytes()


def test_photo_only_entries_allowed(synth):
    write_image(synth.root / "photos" / "extra.png", np.zeros((3, 16, 16)))
    layout = scan_layout(synth.root)
    assert layout.photo_only_stems() == ["extra"]
    photos, stems = load_photo_dir(synth.root / "photos")
    assert len(stems) == 11 and photos.shape[1] == 3


def test_missing_sketch_dir(synth):
    shutil.rmtree(synth.root / "sketches")
    with pytest.raises(InputError, match="sketches/"):
        scan_layout(synth.root)


def test_orphan_sketch_and_size_mismatch_reported_together(synth):
    write_image(synth.root / "sketches" / "ghost.png", np.zeros((1, 16, 16)))
    write_image(synth.root / "photos" / "big.png", np.zeros((3, 20, 20)))
    with pytest.raises(InputError) as err:
        scan_layout(synth.root)
    assert "ghost" in str(err.value) and "big" in str(err.value)


def test_empty_split_and_empty_dir(synth, tmp_path):
    with pytest.raises(InputError):
        load_pairs(synth, "validation")
    (tmp_path / "empty").mkdir()
    with pytest.raises(InputError):
        load_photo_dir(tmp_path / "empty")
