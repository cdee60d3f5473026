import numpy as np
import pytest

from oracles import match_oracle, random_instance
from semicycle.errors import ContractError, DimensionError, IncompatibleError
from semicycle.features import ExtractorSpec, FeaturePyramid, extract_batch, get_extractor
from semicycle.psf import (TIE_TOL, assemble_psf, build_psf, build_reference_store, dumps_store, extract_patches,
                           load_store, loads_store, match_bruteforce, match_conv, pixel_projection, save_store,
                           select_candidates, store_from_maps)
from semicycle.synthetic import SyntheticDomainSpec, gen_synthetic_domains

FP = bytes(range(32))


def make_store(photo, sketch, k, level=3):
    return store_from_maps({level: photo}, {level: sketch}, k, FP, level5=photo)


# ---- extract_patches -----------------------------------------------------------

def test_hand_enumerated_patch():
    ps = extract_patches(np.arange(16.0).reshape(1, 4, 4), 3)
    assert ps.m == 4 and ps.grid == (2, 2)
    np.testing.assert_array_equal(ps.patches[0], [0, 1, 2, 4, 5, 6, 8, 9, 10])


def test_k1_gives_spatial_fibres(rng):
    f = rng.standard_normal((5, 3, 4))
    ps = extract_patches(f, 1)
    assert ps.m == 12
    np.testing.assert_array_equal(ps.patches[7], f[:, 1, 3])


def test_patches_match_sliding_window_oracle(rng):
    f = rng.standard_normal((8, 10, 10))
    ps = extract_patches(f, 3)
    assert ps.m == 64
    for j in range(64):
        y, x = divmod(j, 8)
        np.testing.assert_array_equal(ps.patches[j], f[:, y:y + 3, x:x + 3].reshape(-1))
    np.testing.assert_allclose(ps.norms, np.linalg.norm(ps.patches, axis=1), rtol=1e-6)


@pytest.mark.parametrize("k", [5, 2, 0])
def test_patch_size_errors(k):
    with pytest.raises(DimensionError):
        extract_patches(np.zeros((1, 4, 4)), k)


# ---- matching ----------------------------------------------------------------

def test_bruteforce_and_conv_match_oracle_small_store(rng):
    photo = rng.standard_normal((3, 1, 6, 6))
    store = make_store(photo, rng.standard_normal((3, 1, 6, 6)), 3)
    query = rng.standard_normal((1, 6, 6))
    ref, patch, score, flag = match_oracle(query, store, 3)
    for res in (match_bruteforce(extract_patches(query, 3, 3), store, 3), match_conv(query, store, 3)):
        np.testing.assert_array_equal(res.ref, ref)
        np.testing.assert_array_equal(res.patch, patch)
        np.testing.assert_allclose(res.score, score, atol=1e-5)
        np.testing.assert_array_equal(res.flagged, flag)


@pytest.mark.parametrize("seed", range(25))
def test_conv_equals_bruteforce_random_instances(seed):
    r = np.random.default_rng(seed)
    photo, sketch, query, k = random_instance(r, ties=seed % 3 == 0)
    store = make_store(photo, sketch, k)
    a = match_conv(query, store, 3)
    b = match_bruteforce(extract_patches(query, k, 3), store, 3)
    np.testing.assert_array_equal(a.pairs(), b.pairs())
    np.testing.assert_allclose(a.score, b.score, atol=1e-9)


def test_self_match_is_a_fixed_point(rng):
    photo = rng.standard_normal((3, 4, 7, 7))
    store = make_store(photo, photo, 3)
    for i in range(3):
        res = match_conv(photo[i], store, 3)
        assert np.all(res.ref == i)
        np.testing.assert_array_equal(res.patch, np.arange(25))
        np.testing.assert_allclose(res.score, 1.0, atol=1e-6)


def test_positive_scaling_of_query_patches_keeps_argmax(rng):
    photo = rng.standard_normal((3, 2, 6, 6))
    store = make_store(photo, photo, 3)
    ps = extract_patches(rng.standard_normal((2, 7, 7)), 3, 3)
    base = match_bruteforce(ps, store, 3)
    scale = rng.uniform(0.1, 10, ps.m)
    ps.patches = ps.patches * scale[:, None]
    ps.norms = ps.norms * scale
    scaled = match_bruteforce(ps, store, 3)
    np.testing.assert_array_equal(scaled.pairs(), base.pairs())


def test_constant_query_ties_go_to_smallest_indices():
    photo = np.ones((3, 2, 5, 5))
    store = make_store(photo, photo, 3)
    res = match_conv(np.full((2, 6, 6), 0.7), store, 3)
    assert np.all(res.ref == 0) and np.all(res.patch == 0)
    np.testing.assert_allclose(res.score, 1.0, atol=1e-9)


def test_duplicate_reference_tie_prefers_lower_index(rng):
    photo = rng.standard_normal((2, 2, 5, 5))
    photo[1] = photo[0]
    store = make_store(photo, photo, 3)
    res = match_conv(photo[1], store, 3)
    assert np.all(res.ref == 0)


def test_zero_norm_query_patches_are_flagged(rng):
    photo = rng.standard_normal((2, 2, 5, 5))
    store = make_store(photo, photo, 3)
    q = rng.standard_normal((2, 6, 6))
    q[:, :3, :3] = 0
    for res in (match_conv(q, store, 3), match_bruteforce(extract_patches(q, 3, 3), store, 3)):
        assert res.flagged[0] and res.flagged.sum() == 1
        assert res.ref[0] == 0 and res.patch[0] == 0 and res.score[0] == 0.0


def test_fingerprint_mismatch_is_rejected(rng):
    photo = rng.standard_normal((1, 1, 4, 4))
    store = make_store(photo, photo, 3)
    with pytest.raises(IncompatibleError):
        match_conv(photo[0], store, 3, fingerprint=b"\x01" * 32)
    with pytest.raises(IncompatibleError):
        match_bruteforce(extract_patches(photo[0], 3), store, 3, fingerprint=b"\x01" * 32)


def test_candidate_errors(rng):
    photo = rng.standard_normal((2, 1, 4, 4))
    store = make_store(photo, photo, 3)
    with pytest.raises(ContractError):
        match_conv(photo[0], store, 3, candidates=[])
    with pytest.raises(ContractError):
        match_conv(photo[0], store, 3, candidates=[2])
    with pytest.raises(DimensionError):
        match_conv(photo[0], store, 4)


def test_banded_conv_matches_unbanded(rng, monkeypatch):
    import semicycle.psf as psf
    photo = rng.standard_normal((3, 2, 8, 8))
    store = make_store(photo, photo, 3)
    q = rng.standard_normal((2, 11, 9))
    full = match_conv(q, store, 3)
    monkeypatch.setattr(psf, "_BAND_BUDGET", 1)
    banded = match_conv(q, store, 3)
    np.testing.assert_array_equal(full.pairs(), banded.pairs())
    np.testing.assert_allclose(full.score, banded.score, rtol=0, atol=1e-12)


# ---- candidates, assembly ---------------------------------------------------------

def test_select_candidates_all_and_self(rng):
    photo = rng.standard_normal((4, 3, 4, 4))
    store = make_store(photo, photo, 3)
    assert sorted(select_candidates(photo[2], store, 4)) == [0, 1, 2, 3]
    assert select_candidates(photo[2], store, 1) == [2]
    with pytest.raises(ContractError):
        select_candidates(photo[2], store, 0)
    with pytest.raises(ContractError):
        select_candidates(photo[2], store, 5)


def test_select_candidates_descending_order(rng):
    photo = rng.standard_normal((5, 2, 3, 3))
    store = make_store(photo, photo, 3)
    q = rng.standard_normal((2, 3, 3))
    order = select_candidates(q, store, 5)
    d = photo.reshape(5, -1)
    cos = d @ q.ravel() / (np.linalg.norm(d, axis=1) * np.linalg.norm(q))
    assert order == list(np.argsort(-cos, kind="stable"))


def test_pooled_descriptor_option(rng):
    photo = rng.standard_normal((3, 4, 2, 2))
    store = make_store(photo, photo, 1)
    assert select_candidates(photo[1], store, 1, descriptor="pooled") == [1]
    with pytest.raises(ValueError):
        select_candidates(photo[1], store, 1, descriptor="median")


def test_assemble_gathers_stored_sketch_patches(rng):
    photo = rng.standard_normal((3, 2, 6, 6))
    sketch = rng.standard_normal((3, 1, 6, 6))
    store = make_store(photo, sketch, 3)
    q = rng.standard_normal((2, 7, 7))
    res = match_bruteforce(extract_patches(q, 3, 3), store, 3)
    patches, valid = assemble_psf({3: res}, store)[3]
    for j in range(res.ref.size):
        y, x = divmod(int(res.patch[j]), 4)
        want = sketch[res.ref[j], :, y:y + 3, x:x + 3].reshape(-1)
        np.testing.assert_allclose(patches[j], want, rtol=1e-6)
    assert valid.all()


def test_assemble_with_aligned_store_returns_photo_patches(rng):
    photo = rng.standard_normal((2, 2, 5, 5))
    store = make_store(photo, photo, 3)
    res = match_conv(photo[1], store, 3)
    patches, _ = assemble_psf({3: res}, store)[3]
    np.testing.assert_allclose(patches, extract_patches(photo[1], 3).patches, rtol=1e-6)


# ---- stores from images -----------------------------------------------------------

@pytest.fixture(scope="module")
def pairs64():
    p, s, _ = gen_synthetic_domains(SyntheticDomainSpec(image_size=64, seed=3), 10)
    return p, s


def test_bank_shapes_for_ten_pairs_at_64px(pairs64):
    store = build_reference_store(*pairs64, ExtractorSpec(), k=3)
    assert store.N == 10
    assert store.banks[3].photo.shape == (10, 196, 288)
    assert store.banks[3].sketch.shape == (10, 196, 288)
    assert store.m(4) == (8 - 2) ** 2 and store.m(5) == (4 - 2) ** 2
    np.testing.assert_allclose(np.linalg.norm(store.banks[3].photo, axis=2)[~store.banks[3].photo_zero], 1,
                               atol=1e-5)


def test_single_pair_store_counts():
    p, s, _ = gen_synthetic_domains(SyntheticDomainSpec(image_size=32, seed=1), 1)
    store = build_reference_store(p, s, ExtractorSpec(), k=1)
    assert store.N == 1
    assert {lvl: store.m(lvl) for lvl in (3, 4, 5)} == {3: 64, 4: 16, 5: 4}


def test_small_maps_skip_levels():
    p, s, _ = gen_synthetic_domains(SyntheticDomainSpec(image_size=32, seed=1), 2)
    store = build_reference_store(p, s, ExtractorSpec(), k=3)
    assert sorted(store.banks) == [3, 4]
    assert store.descriptors.shape == (2, 64 * 4)


def test_pair_dimension_errors(pairs64):
    p, s = pairs64
    with pytest.raises(DimensionError, match="pair 1"):
        build_reference_store([p[0], p[1][:, :32, :32]], [s[0], s[1][:, :32, :32]], ExtractorSpec())
    with pytest.raises(DimensionError):
        build_reference_store(p[:2], s[:1], ExtractorSpec())
    with pytest.raises(ContractError):
        build_reference_store(p[:0], s[:0], ExtractorSpec())


def test_store_bytes_are_deterministic_and_round_trip(pairs64, tmp_path):
    a = dumps_store(build_reference_store(*pairs64, ExtractorSpec(), k=3))
    b = dumps_store(build_reference_store(*pairs64, ExtractorSpec(), k=3))
    assert a == b
    assert a[:4] == b"SCGR"
    path = tmp_path / "ref.scgr"
    save_store(loads_store(a), path)
    assert path.read_bytes() == a
    fp = get_extractor(ExtractorSpec()).fingerprint
    assert load_store(path, fp).N == 10
    with pytest.raises(IncompatibleError):
        load_store(path, get_extractor(ExtractorSpec(seed=1)).fingerprint)
    with pytest.raises(IncompatibleError):
        loads_store(a[:-7])
    with pytest.raises(IncompatibleError):
        loads_store(b"JUNK" + a[4:])


def test_build_psf_self_match_recovers_own_sketch_patches(pairs64):
    p, s = pairs64
    spec = ExtractorSpec()
    store = build_reference_store(p, s, spec, k=3)
    feats = extract_batch(p[4:5], spec)
    pyr = FeaturePyramid({lvl: f[0] for lvl, f in feats.items()}, store.fingerprint)
    psf = build_psf(pyr, store, 3)
    sk = extract_batch(s[4:5], spec)
    for lvl in (3, 4, 5):
        patches, valid = psf[lvl]
        want = extract_patches(sk[lvl][0], 3).patches
        np.testing.assert_allclose(patches[valid], want[valid], rtol=1e-5, atol=1e-5)


# ---- pixel projection ---------------------------------------------------------------

def test_projection_of_constant_sketches_is_constant(rng):
    photo = rng.standard_normal((2, 2, 4, 4))
    store = make_store(photo, photo, 3)
    sketches = np.full((2, 1, 16, 16), 0.2)
    res = match_conv(rng.standard_normal((2, 4, 4)), store, 3)
    out = pixel_projection(res, store, sketches, factor=4)
    np.testing.assert_allclose(out, (0.2 + 1) / 2)


def test_projection_single_block_store(rng):
    photo = rng.standard_normal((1, 2, 3, 3))
    store = make_store(photo, photo, 3)
    block = rng.uniform(-1, 1, (1, 1, 6, 6))
    res = match_conv(rng.standard_normal((2, 3, 3)), store, 3)
    out = pixel_projection(res, store, block, factor=2)
    np.testing.assert_allclose(out, (block[0] + 1) / 2)


def test_projection_needs_sketches(rng):
    photo = rng.standard_normal((2, 1, 3, 3))
    store = make_store(photo, photo, 3)
    res = match_conv(photo[0], store, 3)
    with pytest.raises(ContractError):
        pixel_projection(res, store, None)
    with pytest.raises(ContractError):
        pixel_projection(res, store, np.zeros((1, 1, 12, 12)))


def test_tie_tolerance_constant():
    assert TIE_TOL == 1e-9
