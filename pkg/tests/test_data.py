import gzip
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedsim.data import (Dataset, dirichlet_partition, gen_synthetic, load_idx,
                         train_test_split, write_idx)
from fedsim.errors import ConfigError, DataError, FormatError
from fedsim.model import ModelSpec, TrainConfig, init_model, local_train, loss_and_accuracy


def test_synthetic_is_reproducible():
    a = gen_synthetic(4, 3, 101, 2.0, 11)
    b = gen_synthetic(4, 3, 101, 2.0, 11)
    np.testing.assert_array_equal(a.features, b.features)
    np.testing.assert_array_equal(a.labels, b.labels)
    assert not np.array_equal(a.features, gen_synthetic(4, 3, 101, 2.0, 12).features)


def test_synthetic_classes_are_balanced():
    data = gen_synthetic(7, 3, 1000, 1.0, 0)
    counts = data.class_counts()
    assert counts.sum() == 1000
    assert counts.max() - counts.min() <= 1


def test_synthetic_closest_means_at_requested_separation():
    # empirical class means should sit close to the generated centres
    data = gen_synthetic(3, 4, 30000, 5.0, 2)
    means = np.array([data.features[data.labels == c].mean(axis=0) for c in range(3)])
    closest = min(np.linalg.norm(means[i] - means[j]) for i in range(3) for j in range(i))
    assert abs(closest - 5.0) < 0.1


@pytest.mark.parametrize("args", [(1, 2, 10, 1.0), (3, 0, 10, 1.0), (5, 2, 4, 1.0),
                                  (3, 2, 10, -1.0)])
def test_synthetic_rejects_bad_sizes(args):
    with pytest.raises(ConfigError):
        gen_synthetic(*args, seed=0)


def _fit(data, epochs, seed=0):
    spec = ModelSpec("logistic", data.dim, 0, data.num_classes)
    cfg = TrainConfig(epochs=epochs, learning_rate=0.1, batch_size=32, seed=seed)
    return spec, local_train(spec, init_model(spec, seed), data, cfg).params


def test_zero_separation_is_at_chance():
    data = gen_synthetic(4, 5, 4000, 0.0, 3)
    train, test = train_test_split(data, 0.5, 3)
    spec, params = _fit(train, 10)
    _, acc = loss_and_accuracy(spec, params, test)
    assert abs(acc - 0.25) <= 0.05


def test_wide_separation_is_learnable():
    data = gen_synthetic(2, 2, 2000, 10.0, 4)
    spec, params = _fit(data, 20)
    assert loss_and_accuracy(spec, params, data)[1] >= 0.99


def test_split_is_disjoint_and_sized():
    data = gen_synthetic(3, 2, 200, 1.0, 0)
    train, test = train_test_split(data, 0.1, 5)
    assert len(train) == 180 and len(test) == 20
    rows = {tuple(r) for r in data.features.tolist()}
    split = {tuple(r) for r in train.features.tolist()} | {tuple(r) for r in test.features.tolist()}
    assert split == rows


def _check_partition(plan, n):
    flat = np.concatenate(plan.assignments)
    assert flat.size == n
    np.testing.assert_array_equal(np.sort(flat), np.arange(n))
    assert all(a.size >= 1 for a in plan.assignments)
    assert math.fsum(plan.fractions()) == 1.0


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 6), st.integers(10, 300), st.integers(1, 40),
       st.floats(0.01, 100.0), st.integers(0, 2**32 - 1))
def test_partition_is_a_set_partition(c, n, k, conc, seed):
    n = max(n, c)
    k = min(k, n)
    data = gen_synthetic(c, 2, n, 1.0, seed % 1000)
    _check_partition(dirichlet_partition(data, k, conc, seed), n)


def test_partition_is_reproducible():
    data = gen_synthetic(5, 2, 500, 1.0, 0)
    a = dirichlet_partition(data, 20, 0.3, 9)
    b = dirichlet_partition(data, 20, 0.3, 9)
    assert all(np.array_equal(x, y) for x, y in zip(a.assignments, b.assignments))


def test_tiny_concentration_repairs_empty_clients():
    data = gen_synthetic(2, 2, 50, 1.0, 0)
    plan = dirichlet_partition(data, 50, 0.001, 1)
    _check_partition(plan, 50)
    assert plan.sizes().tolist() == [1] * 50


def test_large_concentration_matches_global_histogram():
    data = gen_synthetic(10, 2, 20000, 1.0, 0)
    plan = dirichlet_partition(data, 10, 1e6, 3)
    glob = data.class_counts() / len(data)
    for idx in plan.assignments:
        hist = np.bincount(data.labels[idx], minlength=10) / idx.size
        assert np.max(np.abs(hist - glob) / glob) <= 0.2


def test_small_concentration_concentrates_mass():
    data = gen_synthetic(10, 2, 5000, 1.0, 0)
    top = []
    for seed in range(10):
        plan = dirichlet_partition(data, 10, 0.1, seed)
        top.append(max(np.bincount(data.labels[idx], minlength=10).max() / idx.size
                       for idx in plan.assignments))
    assert np.median(top) > 0.6


def test_partition_rejects_bad_inputs():
    data = gen_synthetic(2, 2, 10, 1.0, 0)
    with pytest.raises(ConfigError):
        dirichlet_partition(data, 11, 1.0, 0)
    with pytest.raises(ConfigError):
        dirichlet_partition(data, 2, 0.0, 0)


def test_dataset_validation():
    with pytest.raises(DataError):
        Dataset(np.zeros((3, 2)), np.array([0, 1]), 2)
    with pytest.raises(DataError):
        Dataset(np.zeros((2, 2)), np.array([0, 2]), 2)
    with pytest.raises(DataError):
        Dataset(np.array([[0.0, np.nan]]), np.array([0]), 2)


def test_dataset_is_read_only():
    data = gen_synthetic(2, 2, 10, 1.0, 0)
    with pytest.raises(ValueError):
        data.features[0, 0] = 1.0


# hand-made 2x2 images
IMAGES = np.array([[[0, 1], [2, 255]], [[255, 255], [0, 0]], [[10, 20], [30, 40]]], dtype=np.uint8)
LABELS = np.array([3, 0, 9], dtype=np.uint8)


@pytest.fixture
def idx_files(tmp_path):
    img, lab = tmp_path / "img.idx", tmp_path / "lab.idx"
    write_idx(IMAGES, LABELS, img, lab)
    return img, lab


def test_idx_layout_and_scaling(idx_files):
    raw = idx_files[0].read_bytes()
    assert raw[:4] == b"\x00\x00\x08\x03"
    assert raw[4:16] == (3).to_bytes(4, "big") + (2).to_bytes(4, "big") + (2).to_bytes(4, "big")
    data = load_idx(*idx_files)
    assert data.features.shape == (3, 4)
    np.testing.assert_array_equal(data.features[0], [0.0, 1 / 255, 2 / 255, 1.0])
    np.testing.assert_array_equal(data.labels, [3, 0, 9])
    assert data.num_classes == 10
    assert np.all(np.isin(np.round(data.features * 255), np.arange(256)))


def test_idx_limit_and_gzip(idx_files, tmp_path):
    assert len(load_idx(*idx_files, limit=2)) == 2
    gz_img, gz_lab = tmp_path / "img.gz", tmp_path / "lab.gz"
    gz_img.write_bytes(gzip.compress(idx_files[0].read_bytes()))
    gz_lab.write_bytes(gzip.compress(idx_files[1].read_bytes()))
    np.testing.assert_array_equal(load_idx(gz_img, gz_lab).features, load_idx(*idx_files).features)


def test_idx_limit_zero_is_rejected(idx_files):
    with pytest.raises(DataError):
        load_idx(*idx_files, limit=0)


def test_idx_bad_magic(idx_files):
    img, lab = idx_files
    raw = bytearray(img.read_bytes())
    raw[3] = 0x01
    img.write_bytes(bytes(raw))
    with pytest.raises(FormatError):
        load_idx(img, lab)
    with pytest.raises(FormatError):
        load_idx(lab, lab)


def test_idx_count_mismatch(tmp_path):
    img, lab = tmp_path / "i", tmp_path / "l"
    write_idx(IMAGES, LABELS, img, lab)
    write_idx(IMAGES[:2], LABELS[:2], tmp_path / "i2", tmp_path / "l2")
    with pytest.raises(FormatError):
        load_idx(img, tmp_path / "l2")


def test_idx_truncated_payload(idx_files):
    img, lab = idx_files
    img.write_bytes(img.read_bytes()[:-3])
    with pytest.raises(FormatError):
        load_idx(img, lab)


def test_csv_export(tmp_path):
    data = Dataset(np.array([[0.5, -1.0], [2.0, 3.25]]), np.array([1, 0]), 2)
    path = tmp_path / "d.csv"
    data.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines == ["feature_0,feature_1,label", "0.5,-1.0,1", "2.0,3.25,0"]
