import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sedlnl.dataset import (
    LabeledDataset,
    NoiseSpec,
    augment,
    blob_means,
    generate_blobs,
    inject_noise,
    load_binary,
    load_csv,
    save_binary,
    save_csv,
)
from sedlnl.errors import ConfigError


def test_minimal_instance():
    ds = generate_blobs(2, 1, 2, [1.0, 1.0], seed=0)
    assert len(ds) == 2
    assert set(ds.true_labels.tolist()) == {0, 1}
    assert np.array_equal(ds.given_labels, ds.true_labels)
    assert not ds.is_ood.any()


def test_exact_per_class_counts():
    ds = generate_blobs(4, 1000, 2, [1.0] * 4, seed=3)
    assert ds.features.shape == (4000, 2)
    assert np.bincount(ds.true_labels).tolist() == [1000] * 4


def test_same_seed_is_byte_identical():
    a = generate_blobs(3, 50, 5, [0.5, 1.0, 2.0], seed=11)
    b = generate_blobs(3, 50, 5, [0.5, 1.0, 2.0], seed=11)
    assert a.features.tobytes() == b.features.tobytes()


def test_per_class_spread_is_respected():
    ds = generate_blobs(3, 20000, 2, [0.5, 1.0, 2.0], seed=1)
    means = blob_means(3, 2)
    for c, s in enumerate([0.5, 1.0, 2.0]):
        x = ds.features[ds.true_labels == c]
        np.testing.assert_allclose(x.mean(axis=0), means[c], atol=0.05 * s)
        np.testing.assert_allclose(x.std(axis=0), s, rtol=0.03)


def test_blob_means_distinct_in_any_dim():
    for d in (1, 2, 7):
        m = blob_means(5, d)
        dist = np.linalg.norm(m[:, None] - m[None], axis=-1)
        assert np.all(dist[~np.eye(5, dtype=bool)] > 0)


@pytest.mark.parametrize(
    "kwargs, field",
    [
        (dict(class_count=1, per_class=5, dim=2, spread=[1.0]), "class_count"),
        (dict(class_count=2, per_class=0, dim=2, spread=[1.0, 1.0]), "per_class"),
        (dict(class_count=2, per_class=5, dim=0, spread=[1.0, 1.0]), "dim"),
        (dict(class_count=2, per_class=5, dim=2, spread=[1.0, 0.0]), "spread"),
        (dict(class_count=2, per_class=5, dim=2, spread=[1.0]), "spread"),
    ],
)
def test_invalid_sizes(kwargs, field):
    with pytest.raises(ConfigError) as exc:
        generate_blobs(seed=0, **kwargs)
    assert exc.value.field == field


def test_symmetric_rate_in_binomial_interval():
    ds = generate_blobs(4, 1000, 2, [1.0] * 4, seed=0)
    noisy = inject_noise(ds, NoiseSpec("symmetric", 0.4), seed=5)
    corrupted = int(np.sum(noisy.given_labels != noisy.true_labels))
    assert 1520 <= corrupted <= 1680
    # flips go to each of the other classes
    flipped = noisy.given_labels != noisy.true_labels
    offsets = (noisy.given_labels[flipped] - noisy.true_labels[flipped]) % 4
    assert set(np.unique(offsets).tolist()) == {1, 2, 3}
    assert np.bincount(offsets, minlength=4)[1:].min() > 450


def test_asymmetric_flips_to_next_class():
    ds = generate_blobs(4, 1000, 2, [1.0] * 4, seed=0)
    noisy = inject_noise(ds, NoiseSpec("asymmetric", 0.4), seed=1)
    flipped = noisy.given_labels != noisy.true_labels
    assert np.all(noisy.given_labels[flipped] == (noisy.true_labels[flipped] + 1) % 4)
    assert abs(flipped.mean() - 0.4) <= 0.02


def test_rate_one_disallowed():
    with pytest.raises(ConfigError):
        NoiseSpec("asymmetric", 1.0)
    with pytest.raises(ConfigError):
        NoiseSpec("symmetric", 0.0)


def test_small_flip_set_reproducible():
    ds = generate_blobs(2, 5, 2, [1.0, 1.0], seed=0)
    a = inject_noise(ds, NoiseSpec("symmetric", 0.2), seed=42)
    b = inject_noise(ds, NoiseSpec("symmetric", 0.2), seed=42)
    assert np.array_equal(a.given_labels, b.given_labels)


def test_noise_only_once():
    ds = inject_noise(generate_blobs(2, 50, 2, [1.0, 1.0], 0), NoiseSpec("symmetric", 0.2), 0)
    with pytest.raises(ValueError):
        inject_noise(ds, NoiseSpec("symmetric", 0.2), 1)


def test_openset_requires_nested_spec():
    with pytest.raises(ConfigError):
        NoiseSpec("openset", 0.4, ood_class_count=2)
    with pytest.raises(ConfigError):
        NoiseSpec("openset", 0.4, ood_class_count=0, inner=NoiseSpec("symmetric", 0.4))
    with pytest.raises(ConfigError):
        NoiseSpec("symmetric", 0.4, ood_class_count=1)


def test_openset_construction():
    ds = generate_blobs(4, 500, 2, [1.0] * 4, seed=0)
    spec = NoiseSpec("openset", 0.4, ood_class_count=2, inner=NoiseSpec("asymmetric", 0.4))
    noisy = inject_noise(ds, spec, seed=3)
    assert len(noisy) == 2000 + 2 * 500
    assert noisy.is_ood.sum() == 1000
    assert np.all(noisy.true_labels[noisy.is_ood] == 4)
    assert noisy.given_labels.max() < 4
    # features of in-distribution rows are untouched
    assert np.array_equal(noisy.features[:2000], ds.features)
    ind = ~noisy.is_ood
    assert abs(np.mean(noisy.given_labels[ind] != noisy.true_labels[ind]) - 0.4) <= 0.02
    # OOD centres lie outside the in-distribution hull radius
    ood_norms = np.linalg.norm(noisy.features[noisy.is_ood], axis=1)
    assert np.median(ood_norms) > 2 * np.max(np.linalg.norm(blob_means(4, 2), axis=1))
    assert not noisy.clean_mask()[noisy.is_ood].any()


@pytest.mark.parametrize("kind", ["symmetric", "asymmetric"])
def test_corruption_rate_converges_large_n(kind):
    ds = generate_blobs(5, 20000, 1, [1.0] * 5, seed=0)
    noisy = inject_noise(ds, NoiseSpec(kind, 0.37), seed=9)
    assert abs(np.mean(noisy.given_labels != noisy.true_labels) - 0.37) <= 0.01


@settings(max_examples=30, deadline=None)
@given(
    C=st.integers(2, 6),
    per_class=st.integers(1, 60),
    rate=st.floats(0.01, 0.99),
    kind=st.sampled_from(["symmetric", "asymmetric"]),
    seed=st.integers(0, 2**16),
)
def test_noise_never_touches_features_and_mask_is_consistent(C, per_class, rate, kind, seed):
    ds = generate_blobs(C, per_class, 3, [1.0] * C, seed)
    noisy = inject_noise(ds, NoiseSpec(kind, rate), seed + 1)
    assert np.array_equal(noisy.features, ds.features)
    assert np.array_equal(noisy.true_labels, ds.true_labels)
    assert np.array_equal(noisy.clean_mask(), noisy.given_labels == noisy.true_labels)
    assert np.all((noisy.given_labels >= 0) & (noisy.given_labels < C))


def test_weak_augment_zero_draws_is_identity():
    class ZeroRNG:
        def standard_normal(self, shape):
            return np.zeros(shape)

    x = np.array([1.0, -2.0, 3.0])
    assert np.array_equal(augment(x, "weak", np.ones(3), ZeroRNG()), x)


def test_strong_mask_rate():
    rng = np.random.default_rng(0)
    x = np.full(1000, 5.0)
    out = augment(x, "strong", np.ones(1000), rng)
    zeros = int(np.sum(out == 0.0))
    assert 60 <= zeros <= 140


def test_strong_is_noisier_than_weak():
    rng = np.random.default_rng(1)
    x = np.zeros((20000, 3))
    stats = np.array([1.0, 2.0, 0.5])
    weak = augment(x, "weak", stats, rng)
    strong = augment(x, "strong", stats, rng)
    np.testing.assert_allclose(weak.std(axis=0), 0.05 * stats, rtol=0.05)
    # zero-masking of a zero-mean jitter: var = 0.9 * (0.25 s)^2
    np.testing.assert_allclose(strong.std(axis=0), np.sqrt(0.9) * 0.25 * stats, rtol=0.05)


def test_different_streams_differ():
    x = np.ones(10)
    a = augment(x, "strong", np.ones(10), np.random.default_rng(1))
    b = augment(x, "strong", np.ones(10), np.random.default_rng(2))
    assert not np.array_equal(a, b)
    assert np.all(np.isfinite(a))


def test_augment_rejects_bad_stats_and_strength():
    with pytest.raises(ValueError):
        augment(np.ones(2), "weak", np.array([1.0, 0.0]), np.random.default_rng())
    with pytest.raises(ValueError):
        augment(np.ones(2), "medium", np.ones(2), np.random.default_rng())


def _noisy_openset():
    ds = generate_blobs(3, 40, 4, [1.0, 0.5, 2.0], seed=2)
    return inject_noise(ds, NoiseSpec("openset", 0.3, 1, NoiseSpec("symmetric", 0.3)), seed=4)


def test_csv_round_trip(tmp_path):
    ds = _noisy_openset()
    path = tmp_path / "ds.csv"
    save_csv(ds, path)
    header = path.read_text().splitlines()[0]
    assert header == "f0,f1,f2,f3,true_label,given_label,is_ood"
    back = load_csv(path)
    assert back.class_count == 3
    assert np.array_equal(back.features, ds.features)
    assert np.array_equal(back.true_labels, ds.true_labels)
    assert np.array_equal(back.given_labels, ds.given_labels)
    assert np.array_equal(back.is_ood, ds.is_ood)


def test_binary_round_trip(tmp_path):
    ds = _noisy_openset()
    path = tmp_path / "ds.bin"
    save_binary(ds, path)
    raw = path.read_bytes()
    assert raw[:8] == b"SEDLNLDS"
    assert int.from_bytes(raw[8:10], "little") == 1
    back = load_binary(path)
    assert back.features.tobytes() == ds.features.tobytes()
    assert np.array_equal(back.given_labels, ds.given_labels)
    assert np.array_equal(back.is_ood, ds.is_ood)
    assert back.class_count == ds.class_count


def test_binary_rejects_bad_files(tmp_path):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"NOTADATASETFILE!!!!!!!!")
    with pytest.raises(ValueError):
        load_binary(bad)
    ds = _noisy_openset()
    good = tmp_path / "good.bin"
    save_binary(ds, good)
    good.write_bytes(good.read_bytes()[:-3])
    with pytest.raises(ValueError):
        load_binary(good)


def test_dataset_invariants_enforced():
    with pytest.raises(ValueError):
        LabeledDataset(np.array([[np.nan]]), [0], [0], [False], 2)
    with pytest.raises(ValueError):
        LabeledDataset(np.zeros((1, 1)), [0], [2], [False], 2)
    with pytest.raises(ValueError):
        LabeledDataset(np.zeros((1, 1)), [0], [0], [True], 2)


def test_training_view_hides_ground_truth():
    view = _noisy_openset().training_view()
    assert not hasattr(view, "true_labels")
    assert not hasattr(view, "is_ood")
    assert not hasattr(view, "clean_mask")
