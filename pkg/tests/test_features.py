import numpy as np
import pytest

from semicycle.errors import DimensionError, IncompatibleError
from semicycle.features import (ExtractorSpec, FeaturePyramid, dumps_features, extract_batch, extract_pyramid,
                                get_extractor, load_feature_dir, load_features, loads_features, predicted_size,
                                save_features)
from semicycle.synthetic import SyntheticDomainSpec, gen_synthetic_domains


def test_level_shapes_at_64px(rng):
    pyr = extract_pyramid(rng.uniform(-1, 1, (3, 64, 64)), ExtractorSpec())
    assert pyr.shapes() == {3: (32, 16, 16), 4: (64, 8, 8), 5: (64, 4, 4)}


def test_spec_properties():
    spec = ExtractorSpec()
    assert spec.channels == {3: 32, 4: 64, 5: 64}
    assert spec.downsample == {3: 4, 4: 8, 5: 16}


def test_zero_image_gives_zero_pyramid():
    pyr = extract_pyramid(np.zeros((3, 32, 32)), ExtractorSpec())
    assert all(not np.any(f) for f in pyr.levels.values())


def test_deterministic_and_seed_dependent(rng):
    img = rng.uniform(-1, 1, (3, 32, 32))
    a = extract_pyramid(img, ExtractorSpec(seed=4))
    b = extract_pyramid(img.copy(), ExtractorSpec(seed=4))
    c = extract_pyramid(img, ExtractorSpec(seed=5))
    for lvl in (3, 4, 5):
        assert a.levels[lvl].tobytes() == b.levels[lvl].tobytes()
    assert a.fingerprint == b.fingerprint != c.fingerprint
    assert not np.allclose(a.levels[5], c.levels[5])


def test_weights_are_a_pure_function_of_seed():
    a = get_extractor(ExtractorSpec(seed=9)).weights
    from semicycle.features import ToyExtractor
    b = ToyExtractor(ExtractorSpec(seed=9)).weights
    for wa, wb in zip(a, b):
        np.testing.assert_array_equal(wa, wb)


def test_grayscale_input_is_replicated(rng):
    g = rng.uniform(-1, 1, (1, 32, 32))
    a = extract_pyramid(g, ExtractorSpec())
    b = extract_pyramid(np.repeat(g, 3, axis=0), ExtractorSpec())
    np.testing.assert_array_equal(a.levels[4], b.levels[4])


def test_non_divisible_size_has_padding_hint():
    with pytest.raises(DimensionError, match="pad to 48x32"):
        extract_pyramid(np.zeros((3, 40, 32)), ExtractorSpec())


def test_levels_shrink_and_channels_grow(rng):
    pyr = extract_pyramid(rng.uniform(-1, 1, (3, 64, 48)), ExtractorSpec())
    s = pyr.shapes()
    assert s[3][1] > s[4][1] > s[5][1]
    assert s[3][0] <= s[4][0] <= s[5][0]


def test_shift_by_16_pixels_moves_level5_by_one_cell(rng):
    canvas = np.zeros((3, 192, 192))
    content = rng.uniform(-1, 1, (3, 32, 32))
    a, b = canvas.copy(), canvas.copy()
    a[:, 80:112, 80:112] = content
    b[:, 96:128, 80:112] = content
    fa = extract_pyramid(a, ExtractorSpec()).levels[5]
    fb = extract_pyramid(b, ExtractorSpec()).levels[5]
    np.testing.assert_allclose(fb[:, 3:-2, 2:-2], fa[:, 2:-3, 2:-2], atol=1e-10)


def test_batch_matches_single(rng):
    imgs = rng.uniform(-1, 1, (2, 3, 32, 32))
    batch = extract_batch(imgs, ExtractorSpec())
    one = extract_pyramid(imgs[1], ExtractorSpec())
    np.testing.assert_allclose(batch[5][1], one.levels[5], atol=1e-12)


def test_differentiable_forward(rng):
    from semicycle.gradcheck import grad_check
    from semicycle.tensor import Tensor
    ext = get_extractor(ExtractorSpec(block_channels=(4, 4, 4, 4, 4)))
    x = Tensor(rng.uniform(-1, 1, (1, 3, 16, 16)), dtype=np.float64)
    err = grad_check(lambda t: ext.forward(t)[3].sum() + ext.forward(t)[5].sum(), x, indices=range(0, 768, 37))
    assert err <= 1e-4


# ---- persistence ---------------------------------------------------------------

def test_feature_file_round_trip_is_byte_exact(rng, tmp_path):
    pyr = extract_pyramid(rng.uniform(-1, 1, (3, 32, 32)), ExtractorSpec(), "x")
    blob = dumps_features(pyr)
    assert blob[:4] == b"SCGF"
    path = tmp_path / "x.scgf"
    save_features(pyr, path)
    back = load_features(path)
    assert dumps_features(back) == blob
    assert back.fingerprint == pyr.fingerprint and back.source_id == "x"
    for lvl in (3, 4, 5):
        np.testing.assert_array_equal(back.levels[lvl], pyr.levels[lvl].astype(np.float32))


def test_fingerprint_mismatch_rejected(rng, tmp_path):
    pyr = extract_pyramid(rng.uniform(-1, 1, (3, 16, 16)), ExtractorSpec(seed=1))
    save_features(pyr, tmp_path / "a.scgf")
    other = get_extractor(ExtractorSpec(seed=2)).fingerprint
    with pytest.raises(IncompatibleError):
        load_features(tmp_path / "a.scgf", other)


@pytest.mark.parametrize("mutate", [lambda b: b"NOPE" + b[4:], lambda b: b[:-1], lambda b: b + b"\0",
                                    lambda b: b[:4] + (2).to_bytes(4, "little") + b[8:]])
def test_corrupt_feature_files(rng, mutate):
    blob = dumps_features(extract_pyramid(rng.uniform(-1, 1, (3, 16, 16)), ExtractorSpec()))
    with pytest.raises(IncompatibleError):
        loads_features(mutate(blob))


def test_directory_of_ten_loads_and_sizes_match_headers(tmp_path):
    photos, _, _ = gen_synthetic_domains(SyntheticDomainSpec(image_size=32, seed=2), 10)
    spec = ExtractorSpec()
    for i, p in enumerate(photos):
        save_features(extract_pyramid(p, spec, f"ref{i}"), tmp_path / f"ref{i:02d}.scgf")
    pyrs = load_feature_dir(tmp_path, get_extractor(spec).fingerprint)
    assert len(pyrs) == 10
    for path in sorted(tmp_path.glob("*.scgf")):
        blob = path.read_bytes()
        assert predicted_size(blob) == len(blob) == path.stat().st_size


def test_file_mode_reads_exported_features(rng, tmp_path):
    pyr = FeaturePyramid({3: rng.standard_normal((5, 4, 4)).astype(np.float32),
                          4: rng.standard_normal((6, 2, 2)).astype(np.float32),
                          5: rng.standard_normal((6, 1, 1)).astype(np.float32)}, b"\x07" * 32, "face1")
    save_features(pyr, tmp_path / "face1.scgf")
    got = extract_pyramid(None, ExtractorSpec(mode="file", root=str(tmp_path)), "face1")
    assert got.fingerprint == b"\x07" * 32
    np.testing.assert_array_equal(got.levels[3], pyr.levels[3])
