import numpy as np
import pytest
from hypothesis import given, strategies as st

from bcnn_ctn.data import (AugmentConfig, Dataset, DatasetError, SplitSpec, affine, augment, balance_classes,
                           load_directory, make_synthetic, manifest_splits, read_image, read_manifest,
                           resize_bilinear, split_indices, to_signed, write_directory, write_ppm)


def test_resize_checkerboard_by_hand():
    img = np.array([[[1.0, 0.0], [0.0, 1.0]]])
    out = resize_bilinear(img, (4, 4))[0]
    assert out[1, 1] == pytest.approx(5 / 9)
    assert out[0, 0] == 1.0 and out[0, 3] == 0.0 and out[3, 3] == 1.0


def test_resize_identity_and_constant(rng):
    img = rng.random((3, 5, 7))
    np.testing.assert_array_equal(resize_bilinear(img, (5, 7)), img)
    np.testing.assert_allclose(resize_bilinear(np.full((1, 4, 4), 0.3), (9, 2)), 0.3)


def test_affine_quarter_turn_and_flip(rng):
    img = rng.random((2, 7, 7))
    np.testing.assert_allclose(affine(img, np.pi / 2, 1.0, False), np.rot90(img, 1, axes=(1, 2)), atol=1e-9)
    np.testing.assert_array_equal(affine(img, 0.0, 1.0, True), img[:, :, ::-1])
    np.testing.assert_array_equal(affine(img, 0.0, 1.0, False), img)


def test_augment_reproducible_and_bounded(rng):
    img = rng.random((3, 16, 16))
    a = augment(img, AugmentConfig(), np.random.default_rng(3))
    b = augment(img, AugmentConfig(), np.random.default_rng(3))
    np.testing.assert_array_equal(a, b)
    assert img.min() - 1e-12 <= a.min() and a.max() <= img.max() + 1e-12
    np.testing.assert_array_equal(augment(img, AugmentConfig.disabled(), rng), img)


def test_augment_config_validation():
    with pytest.raises(ValueError):
        AugmentConfig(zoom_range=1.0)
    with pytest.raises(ValueError):
        AugmentConfig(rotation_range=-0.1)


def test_to_signed():
    np.testing.assert_array_equal(to_signed(np.array([0.0, 0.5, 1.0])), [-1.0, 0.0, 1.0])


def test_ppm_round_trip(tmp_path, rng):
    img = rng.integers(0, 256, size=(3, 4, 5)) / 255.0
    write_ppm(tmp_path / "x.ppm", img)
    np.testing.assert_allclose(read_image(tmp_path / "x.ppm"), img, atol=1e-12)
    with pytest.raises(DatasetError):
        (tmp_path / "bad.png").write_bytes(b"nope")
        read_image(tmp_path / "bad.png")


def test_directory_round_trip_with_manifest(tmp_path):
    ds = make_synthetic(3, 5, (8, 8), seed=2)
    splits = split_indices(ds.labels, SplitSpec(seed=2))
    write_directory(ds, tmp_path / "d", splits)
    back = load_directory(tmp_path / "d", (8, 8))
    assert back.class_names == ds.class_names
    np.testing.assert_array_equal(back.labels, ds.labels)
    assert np.abs(back.images - ds.images).max() <= 0.5 / 255 + 1e-12
    rec = manifest_splits(back, read_manifest(tmp_path / "d" / "manifest.csv"))
    for k in splits:
        np.testing.assert_array_equal(rec[k], splits[k])


def test_load_directory_errors(tmp_path):
    with pytest.raises(DatasetError):
        load_directory(tmp_path / "nothing", (4, 4))
    (tmp_path / "empty_class").mkdir()
    with pytest.raises(DatasetError):
        load_directory(tmp_path, (4, 4))


def test_dataset_validation():
    with pytest.raises(DatasetError):
        Dataset(np.zeros((2, 3, 4, 4)), [0, 2], ["a", "b"])


def test_balance_classes_exact_counts(rng):
    ds = make_synthetic(3, 6, (8, 8), seed=0).subset(np.r_[0:6, 6:8, 12:15])
    out = balance_classes(ds, 4, rng)
    np.testing.assert_array_equal(out.class_counts(), [4, 4, 4])
    # deficit classes keep every original
    originals = ds.images[ds.labels == 1]
    kept = out.images[out.labels == 1][:2]
    np.testing.assert_array_equal(kept, originals)


@given(st.lists(st.integers(3, 40), min_size=2, max_size=5), st.integers(0, 1000))
def test_split_disjoint_exhaustive_stratified(counts, seed):
    labels = np.repeat(np.arange(len(counts)), counts)
    parts = split_indices(labels, SplitSpec(seed=seed))
    allrows = np.concatenate(list(parts.values()))
    assert sorted(allrows.tolist()) == list(range(len(labels)))
    for c, n in enumerate(counts):
        n_test = (labels[parts["test"]] == c).sum()
        assert abs(n_test - 0.2 * n) <= 1 or n_test in (1, n - 2)
        assert (labels[parts["train"]] == c).sum() >= 1


def test_split_needs_three_per_class():
    with pytest.raises(DatasetError):
        split_indices([0, 0, 1, 1, 1], SplitSpec())


def test_sevenths_proportions():
    parts = split_indices(np.repeat([0, 1], 70), SplitSpec.sevenths())
    assert [len(parts[k]) for k in ("train", "validation", "test")] == [100, 20, 20]


def test_synthetic_deterministic_and_in_range():
    a, b = make_synthetic(4, 5, (16, 16), seed=9), make_synthetic(4, 5, (16, 16), seed=9)
    np.testing.assert_array_equal(a.images, b.images)
    assert a.images.min() >= 0 and a.images.max() <= 1
    assert a.image_shape == (3, 16, 16)
    assert not np.array_equal(a.images, make_synthetic(4, 5, (16, 16), seed=10).images)


@pytest.mark.parametrize("seed", range(5))
def test_synthetic_nearest_centroid_separable(seed):
    # class mean colour alone separates noise-free samples
    ds = make_synthetic(2, 100, (32, 32), seed=seed, noise=0.0)
    x = ds.images.reshape(len(ds), -1)
    cents = np.stack([x[ds.labels == c].mean(0) for c in range(2)])
    pred = ((x[:, None] - cents[None]) ** 2).sum(-1).argmin(1)
    assert (pred == ds.labels).mean() == 1.0
