import dataclasses

import numpy as np
import pytest

from semicycle import stego
from semicycle.stego import (StegoConfig, build_nets, classify_hue, cross_entropy, make_dataset, noise_sweep,
                             run_plain_cycle, train_cycle, train_probe, write_tsv)
from semicycle.synthetic import (SyntheticDomainSpec, gen_synthetic_domains, render_photo, render_sketch,
                                 sample_geometry)
from semicycle.tensor import Tensor

TINY = StegoConfig(n_train=32, n_heldout=16, image_size=16, steps=4, probe_steps=10, probe_batch=16)


@pytest.fixture(scope="module")
def tiny_data():
    return make_dataset(TINY)


def test_defaults_match_calibrated_protocol():
    cfg = StegoConfig()
    assert (cfg.image_size, cfg.n_train, cfg.n_heldout, cfg.n_hues) == (32, 512, 128, 4)


def test_sketch_is_hue_free():
    spec = SyntheticDomainSpec(image_size=24, n_hues=4)
    shapes = sample_geometry(np.random.default_rng(0), spec)
    a, b = render_photo(shapes, 0, 24, 4), render_photo(shapes, 2, 24, 4)
    assert not np.array_equal(a, b)
    np.testing.assert_array_equal(render_sketch(shapes, 24), render_sketch(shapes, 24))


def test_dataset_regeneration_identical():
    spec = SyntheticDomainSpec(image_size=16, seed=4)
    a, b = gen_synthetic_domains(spec, 5), gen_synthetic_domains(spec, 5)
    for x, y in zip(a, b):
        assert x.tobytes() == y.tobytes()
    with pytest.raises(ValueError):
        gen_synthetic_domains(spec, 0)


def test_classify_hue_recovers_true_photo_hues():
    photos, _, hues = gen_synthetic_domains(SyntheticDomainSpec(image_size=16, n_hues=4, seed=1), 64)
    assert np.mean(classify_hue(photos, 4) == hues) == 1.0


def test_cross_entropy_matches_numpy(rng):
    logits = rng.standard_normal((5, 4))
    labels = rng.integers(4, size=5)
    lse = np.log(np.exp(logits).sum(axis=1))
    want = np.mean(lse - logits[np.arange(5), labels])
    got = cross_entropy(Tensor(logits, dtype=np.float64), labels).item()
    assert got == pytest.approx(want, rel=1e-6)


def test_probe_learns_hue_from_photos(tiny_data):
    (tp, _, th), (hp, _, hh) = tiny_data["train"], tiny_data["heldout"]
    cfg = dataclasses.replace(TINY, probe_steps=150)
    assert train_probe(tp, th, hp, hh, 4, cfg, seed=0) < 0.3


def test_train_cycle_deterministic(tiny_data):
    cfg = dataclasses.replace(TINY, sigma_8bit=20.0)
    h1, d1 = train_cycle(build_nets(cfg), tiny_data, cfg)
    h2, d2 = train_cycle(build_nets(cfg), tiny_data, cfg)
    assert h1 == h2 and not d1 and not d2 and len(h1) == cfg.steps


def test_noise_changes_training(tiny_data):
    h0, _ = train_cycle(build_nets(TINY), tiny_data, TINY)
    cfg = dataclasses.replace(TINY, sigma_8bit=20.0)
    h1, _ = train_cycle(build_nets(cfg), tiny_data, cfg)
    assert h0[0]["l_cyc_s"] == h1[0]["l_cyc_s"]          # sketch cycle carries no noise
    assert h0[0]["l_cyc_p"] != h1[0]["l_cyc_p"]


def test_report_fields(tiny_data):
    _, rep = run_plain_cycle(tiny_data, TINY)
    assert not rep.diverged and rep.seeds == [TINY.seed]
    for v in (rep.probe_err_generated, rep.probe_err_true, rep.cycle_err):
        assert 0 <= v <= 2
    assert np.isnan(rep.probe_err_noisy)


def test_divergence_retries_next_seed(tiny_data, monkeypatch):
    real = stego.train_cycle

    def flaky(nets, data, cfg):
        hist, _ = real(nets, data, cfg)
        return hist, cfg.seed == TINY.seed
    monkeypatch.setattr(stego, "train_cycle", flaky)
    _, rep = run_plain_cycle(tiny_data, TINY)
    assert rep.seeds == [TINY.seed, TINY.seed + 1] and not rep.diverged
    monkeypatch.setattr(stego, "train_cycle", lambda n, d, c: ([], True))
    _, rep = run_plain_cycle(tiny_data, TINY)
    assert rep.diverged and np.isnan(rep.cycle_err) and len(rep.seeds) == 3


def test_sweep_cartesian_and_tsv(tiny_data, tmp_path):
    reports = noise_sweep(tiny_data, [0, 20], [1, 2], TINY)
    assert [(r.sigma, r.seed) for r in reports] == [(0, 1), (0, 2), (20, 1), (20, 2)]
    write_tsv(reports, tmp_path / "t.tsv")
    lines = (tmp_path / "t.tsv").read_text().splitlines()
    assert len(lines) == 5 and lines[1].startswith("0\t1\t")
    with pytest.raises(ValueError):
        noise_sweep(tiny_data, [], [1], TINY)


def test_parallel_sweep_equals_serial(tiny_data):
    a = noise_sweep(tiny_data, [0, 20], [1], TINY)
    b = noise_sweep(tiny_data, [0, 20], [1], TINY, workers=2)
    assert [r.row() for r in a] == [r.row() for r in b]
