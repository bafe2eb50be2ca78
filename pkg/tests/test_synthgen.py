import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mpns.synthgen import (LatentVars, ModalityLayout, SynthConfig, build_feature_vector,
                           generate_dataset, generate_split, kappa, load_jsonl, sample_variables,
                           save_jsonl, split_modalities)

N_BIG = 100_000


@pytest.fixture(scope="module")
def big():
    return generate_dataset(SynthConfig(s=0.0, n_samples=N_BIG, seed=12345))


class ScriptedRng:
    """Stands in for a Generator with fixed uniform/normal draws."""

    def __init__(self, uniforms, normal=0.0):
        self.uniforms = np.asarray(uniforms, dtype=float)
        self.normal = normal

    def random(self, size):
        return self.uniforms[:size]

    def standard_normal(self, size=None):
        return self.normal if size is None else np.full(size, self.normal)


def test_label_is_sn_when_no_flip():
    v = sample_variables(0.0, ScriptedRng([0.1, 0.9, 0.5, 0.99]))
    assert v.sn == 1 and v.y == 1


def test_label_flips():
    v = sample_variables(0.0, ScriptedRng([0.1, 0.9, 0.5, 0.01]))
    assert v.sn == 1 and v.y == 0


def test_sn_zero_forces_nc_zero():
    rng = np.random.default_rng(0)
    for _ in range(2000):
        v = sample_variables(0.3, rng)
        if v.sn == 0:
            assert v.nc == 0
        else:
            assert v.sf == 1


def test_s_out_of_range_rejected():
    with pytest.raises(ValueError):
        sample_variables(1.0, np.random.default_rng(0))
    with pytest.raises(ValueError):
        SynthConfig(s=-0.1)
    with pytest.raises(ValueError):
        SynthConfig(d=4)


def test_sc_independent_of_sn_at_s0(big):
    assert abs(np.corrcoef(big.sc, big.sn)[0, 1]) < 0.02


def test_structural_zeros_exact(big):
    assert np.all(big.nc[big.sn == 0] == 0)
    assert np.all(big.sf[big.sn == 1] == 1)


def test_generator_rates(big):
    assert abs(np.mean(big.y != big.sn) - 0.15) < 0.01
    assert abs(np.mean(big.nc[big.sn == 1]) - 0.9) < 0.01
    assert abs(np.mean(big.sf[big.sn == 0]) - 0.1) < 0.01


def test_zero_noise_feature_vector():
    cfg = SynthConfig(noise_std=0.0)
    h = build_feature_vector(LatentVars(1, 1, 1, 0.0, 1), cfg, np.random.default_rng(0))
    np.testing.assert_array_equal(h, [1.0] * 21 + [0.0] * 7)


def test_feature_noise_moments():
    cfg = SynthConfig(noise_std=0.3)
    rng = np.random.default_rng(99)
    lat = LatentVars(1, 1, 0, -0.7, 1)
    values = np.repeat([1.0, 1.0, 0.0, -0.7], 7)
    resid = np.array([build_feature_vector(lat, cfg, rng) - values for _ in range(N_BIG)])
    assert np.all(np.abs(resid.mean(axis=0)) < 0.01)
    assert np.all(np.abs(resid.std(axis=0) - 0.3) < 0.01)


def test_leak_event_block_centres():
    cfg = SynthConfig(noise_std=0.3)
    rng = np.random.default_rng(5)
    h = np.array([build_feature_vector(LatentVars(0, 1, 0, 0.0, 0), cfg, rng) for _ in range(4000)])
    assert abs(h[:, 0:7].mean()) < 0.02
    assert abs(h[:, 7:14].mean() - 1.0) < 0.02


def test_split_ramp():
    h1, h2 = split_modalities(np.arange(28.0), ModalityLayout())
    assert h1.tolist() == [0, 1, 2, 3, 4, 7, 8, 9, 10, 11, 14, 15, 16, 17, 18, 21, 22, 23, 24, 25]
    assert h2.tolist() == [0, 1, 2, 5, 6, 7, 8, 9, 12, 13, 14, 15, 16, 19, 20, 21, 22, 23, 26, 27]


def test_split_zero_and_bad_length():
    h1, h2 = split_modalities(np.zeros(28))
    assert not h1.any() and not h2.any() and h1.shape == h2.shape == (20,)
    with pytest.raises(ValueError):
        split_modalities(np.zeros(27))


def test_layout_slices_disjoint_and_cover():
    layout = ModalityLayout()
    for m in (1, 2):
        idx = layout.h_indices(m)
        assert len(idx) == 20 and len(set(idx.tolist())) == 20
    cols = sorted(c for v in ("sn", "sf", "nc", "sc")
                  for c in range(20)[layout.modality_slice(v)])
    assert cols == list(range(20))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=28, max_size=28))
def test_split_shares_invariant_and_recomposes(values):
    h = np.array(values)
    layout = ModalityLayout()
    h1, h2 = split_modalities(h, layout)
    rebuilt = np.full(28, np.nan)
    rebuilt[layout.h_indices(1)] = h1
    rebuilt[layout.h_indices(2)] = h2
    assert rebuilt.tobytes() == h.tobytes()
    for v in range(4):
        a = h1[5 * v:5 * v + 3]
        b = h2[5 * v:5 * v + 3]
        assert a.tobytes() == b.tobytes()


def test_kappa_literal_is_zero():
    t = np.random.default_rng(0).normal(scale=5, size=10_000)
    assert not kappa(t, 0.8, 2.2, "literal_product").any()


def test_kappa_sum_values():
    assert kappa(2.0, 0.8, 2.2) == pytest.approx(2.64, abs=1e-12)
    assert kappa(-2.0, 0.8, 2.2) == pytest.approx(-2.64, abs=1e-12)
    assert kappa(0.5, 0.8, 2.2) == 0.0
    with pytest.raises(ValueError):
        kappa(1.0, 0.0, 1.0)
    with pytest.raises(ValueError):
        kappa(1.0, 1.0, -1.0)


def test_dataset_deterministic_and_typed():
    cfg = SynthConfig(s=0.3, n_samples=300, seed=7)
    a, b = generate_dataset(cfg), generate_dataset(cfg)
    assert a.fingerprint() == b.fingerprint()
    assert a.x1.shape == (300, 20) and a.x2.shape == (300, 20)
    sample = a[3]
    assert sample.y == sample.latents.y
    np.testing.assert_array_equal(sample.x1, a.x1[3])
    assert generate_dataset(SynthConfig(s=0.3, n_samples=300, seed=8)).fingerprint() != a.fingerprint()


def test_dataset_applies_kappa_per_modality():
    cfg = SynthConfig(n_samples=50, seed=3)
    data = generate_dataset(cfg)
    hs = []
    from mpns.synthgen import sample_rng
    for i in range(50):
        rng = sample_rng(3, i)
        hs.append(build_feature_vector(sample_variables(0.0, rng), cfg, rng))
    h1, h2 = split_modalities(np.array(hs))
    np.testing.assert_array_equal(data.x1, kappa(h1, 0.8, 2.2))
    np.testing.assert_array_equal(data.x2, kappa(h2, 1.0, 2.0))


def test_split_ranges_are_disjoint_substreams():
    cfg = SynthConfig(n_samples=1, seed=4)
    train, test = generate_split(cfg, 100, 40)
    full = generate_dataset(SynthConfig(n_samples=140, seed=4))
    np.testing.assert_array_equal(train.x1, full.x1[:100])
    np.testing.assert_array_equal(test.x1, full.x1[100:])


def test_spurious_correlation_monotone_in_s():
    corrs = []
    for s in (0.0, 0.1, 0.3, 0.5, 0.7):
        d = generate_dataset(SynthConfig(s=s, n_samples=N_BIG, seed=2024))
        corrs.append(np.corrcoef(d.sc, d.sn)[0, 1])
    assert all(b >= a for a, b in zip(corrs, corrs[1:]))


def test_jsonl_round_trip(tmp_path):
    data = generate_dataset(SynthConfig(n_samples=20, seed=1))
    path = tmp_path / "d.jsonl"
    save_jsonl(data, path)
    first = json.loads(path.read_text().splitlines()[0])
    assert set(first) == {"x1", "x2", "y", "sn", "sf", "nc", "sc"}
    back = load_jsonl(path)
    assert back.fingerprint() == data.fingerprint()
