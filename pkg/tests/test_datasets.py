import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedgan.datasets import (SWISS_SCALE, Dataset, gen_mixed_gaussians, gen_swiss_roll, gen_synthetic_profiles,
                             gen_uniform_1d, mixture_centers, partition_noniid, profile_base_curve,
                             sample_minibatch, split_holdout)


def test_uniform_bounds_mean_and_seed():
    ds = gen_uniform_1d(4, 0.0, 1e-9, seed=1)
    assert ds.samples.min() >= 0 and ds.samples.max() <= 1e-9
    big = gen_uniform_1d(10 ** 6, seed=0)
    assert abs(big.samples.mean()) < 0.01
    np.testing.assert_array_equal(gen_uniform_1d(50, seed=3).samples, gen_uniform_1d(50, seed=3).samples)
    with pytest.raises(ValueError):
        gen_uniform_1d(5, 1.0, 1.0)


def test_gaussian_layout_and_mode_counts():
    ds = gen_mixed_gaussians(10 ** 5, 8, 2.0, 0.02, seed=0)
    centers = mixture_centers(8, 2.0)
    np.testing.assert_allclose(centers[2], [0.0, 2.0], atol=1e-15)
    counts = np.bincount(ds.labels[:, 0].astype(int), minlength=8)
    n, p = 10 ** 5, 1 / 8
    assert np.all(np.abs(counts - n * p) <= 3 * np.sqrt(n * p * (1 - p)))
    exact = gen_mixed_gaussians(100, sigma=0.0, seed=1)
    np.testing.assert_array_equal(exact.samples, centers[exact.labels[:, 0].astype(int)])
    with pytest.raises(ValueError):
        gen_mixed_gaussians(10, modes=1)


def test_swiss_roll_parametrization():
    ds = gen_swiss_roll(2000, noise=0.0, seed=0)
    t = ds.labels[:, 0]
    np.testing.assert_allclose(np.linalg.norm(ds.samples, axis=1) * SWISS_SCALE, t, atol=1e-9)
    assert np.abs(ds.samples).max() <= 2.0
    assert SWISS_SCALE == pytest.approx(4.5 * np.pi / 2)
    np.testing.assert_array_equal(gen_swiss_roll(30, seed=4).samples, gen_swiss_roll(30, seed=4).samples)


def test_profiles_normalized_and_match_base_curves():
    ds = gen_synthetic_profiles(10 ** 4 * 4, archetypes=4, seed=0)
    assert ds.samples.shape[1] == 24
    assert ds.samples.min() >= 0 and ds.samples.max() <= 1
    arch = np.argmax(ds.labels[:, :4], axis=1)
    weekend = ds.labels[:, -1].astype(bool)
    for a in range(4):
        for w in (False, True):
            sel = (arch == a) & (weekend == w)
            assert np.max(np.abs(ds.samples[sel].mean(axis=0) - profile_base_curve(a, w))) < 0.02


def test_by_range_segments():
    ds = gen_uniform_1d(20000, seed=1)
    part = partition_noniid(ds, 5, "by_range")
    x = ds.samples[:, 0]
    first = x[part.assignments[0]]
    assert first.min() >= -1 and first.max() < -0.6
    assert np.all(x[part.assignments[4]] >= 0.6)


def test_by_label_two_modes_each():
    ds = gen_mixed_gaussians(8000, seed=0)
    part = partition_noniid(ds, 4, "by_label")
    for idx in part.assignments:
        assert len(np.unique(ds.labels[idx, 0])) == 2
    with pytest.raises(ValueError):
        partition_noniid(ds, 9, "by_label")


def test_equal_sizes_give_equal_weights():
    ds = Dataset(np.arange(12.0), np.repeat(np.arange(4), 3))
    for strat in ("by_range", "by_label"):
        part = partition_noniid(ds, 4, strat)
        np.testing.assert_array_equal(part.weights, 0.25)


def test_strategy_compatibility_errors():
    g = gen_mixed_gaussians(100)
    with pytest.raises(ValueError):
        partition_noniid(g, 2, "by_range")
    with pytest.raises(ValueError):
        partition_noniid(g, 2, "by_arc")
    with pytest.raises(ValueError):
        partition_noniid(g, 1, "by_label")
    with pytest.raises(ValueError):
        partition_noniid(g, 2, "shuffle")
    with pytest.raises(ValueError):
        partition_noniid(gen_uniform_1d(1), 2, "by_range")


CASES = {
    "by_range": lambda n, s: gen_uniform_1d(n, seed=s),
    "by_label": lambda n, s: gen_mixed_gaussians(n, seed=s),
    "by_arc": lambda n, s: gen_swiss_roll(n, seed=s),
}


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(sorted(CASES)), st.integers(2, 4), st.integers(400, 3000), st.integers(0, 10 ** 6))
def test_partition_exact_cover_and_weights(strategy, B, n, seed):
    ds = CASES[strategy](n, seed)
    part = partition_noniid(ds, B, strategy, seed)
    allidx = np.concatenate(part.assignments)
    np.testing.assert_array_equal(np.sort(allidx), np.arange(n))
    assert abs(part.weights.sum() - 1.0) < 1e-12
    np.testing.assert_array_equal(part.weights, np.array([len(a) for a in part.assignments]) / n)


@pytest.mark.parametrize("strategy,make", [
    ("by_range", lambda: gen_uniform_1d(5000, seed=0)),
    ("by_label", lambda: gen_mixed_gaussians(5000, seed=0)),
    ("by_arc", lambda: gen_swiss_roll(5000, seed=0)),
    ("by_label", lambda: gen_synthetic_profiles(5000, 5, seed=0)),
])
def test_partitions_are_noniid(strategy, make):
    ds = make()
    # B=4 everywhere: with an odd B the middle by_range segment is centred on the global mean
    part = partition_noniid(ds, 4, strategy)
    mu, sd = ds.samples.mean(axis=0), ds.samples.std(axis=0)
    for idx in part.assignments:
        se = sd / np.sqrt(len(idx))
        assert np.max(np.abs(ds.samples[idx].mean(axis=0) - mu) / se) > 3


def test_holdout_split_keeps_agents_disjoint():
    ds = gen_mixed_gaussians(1000, seed=0)
    part = partition_noniid(ds, 4, "by_label")
    train, held = split_holdout(part, 0.1, seed=2)
    together = np.sort(np.concatenate(train.assignments + [held]))
    np.testing.assert_array_equal(together, np.arange(1000))
    assert len(held) == pytest.approx(100, abs=4)


def test_minibatch_with_replacement():
    ds = gen_uniform_1d(100, seed=0)
    idx = np.arange(10, 13)
    x, labels = sample_minibatch(ds, idx, 50, np.random.default_rng(0))
    assert x.shape == (50, 1) and labels is None
    assert set(np.round(x[:, 0], 15)) <= set(np.round(ds.samples[idx, 0], 15))
    y, _ = sample_minibatch(ds, idx, 50, np.random.default_rng(0))
    np.testing.assert_array_equal(x, y)
    with pytest.raises(ValueError):
        sample_minibatch(ds, [], 4, np.random.default_rng(0))


def test_csv_round_trip(tmp_path):
    ds = gen_synthetic_profiles(20, 3, seed=1)
    ds.to_csv(tmp_path / "p.csv")
    back = Dataset.from_csv(tmp_path / "p.csv")
    np.testing.assert_array_equal(back.samples, ds.samples)
    np.testing.assert_array_equal(back.labels, ds.labels)
    with open(tmp_path / "p.csv") as fh:
        head = fh.readline().strip().split(",")
    assert head[0] == "x0" and head[-1].startswith("label")
