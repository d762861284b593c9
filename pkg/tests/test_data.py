import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import array_shapes, arrays

from bbh import data
from bbh.errors import ContractError, FormatError
from conftest import mnist_path


def hand_file(tmp_path, body, name="x.idx"):
    p = tmp_path / name
    p.write_bytes(bytes(body))
    return str(p)


def test_hand_built_rank2(tmp_path):
    path = hand_file(tmp_path, [0, 0, 8, 2, 0, 0, 0, 2, 0, 0, 0, 2, 0, 128, 255, 1])
    np.testing.assert_array_equal(data.load_idx(path), [[0, 128], [255, 1]])


def test_hand_built_rank1_labels(tmp_path):
    path = hand_file(tmp_path, [0, 0, 8, 1, 0, 0, 0, 3, 7, 0, 9])
    out = data.load_idx(path)
    assert out.shape == (3,)
    np.testing.assert_array_equal(out, [7, 0, 9])


@pytest.mark.parametrize(
    "body,offset",
    [
        ([0, 0, 8, 2, 0, 0, 0, 2, 0, 0, 0, 2, 0, 128, 255], 15),  # truncated payload
        ([1, 0, 8, 1, 0, 0, 0, 1, 5], 0),  # bad magic
        ([0, 0, 9, 1, 0, 0, 0, 1, 5], 2),  # unsupported type
        ([0, 0, 8, 2, 0, 0], 6),  # truncated extents
        ([0, 0], 2),  # truncated header
        ([0, 0, 8, 1, 0, 0, 0, 1, 5, 6], 9),  # trailing byte
    ],
)
def test_format_errors_carry_offset(tmp_path, body, offset):
    with pytest.raises(FormatError, match=f"offset {offset}"):
        data.load_idx(hand_file(tmp_path, body))


@settings(max_examples=50, deadline=None)
@given(arrays(np.uint8, array_shapes(min_dims=1, max_dims=3, max_side=6)), st.booleans())
def test_write_load_roundtrip(tmp_path_factory, arr, gz):
    path = str(tmp_path_factory.mktemp("idx") / ("a.idx.gz" if gz else "a.idx"))
    data.write_idx(path, arr)
    np.testing.assert_array_equal(data.load_idx(path), arr)


def test_normalize():
    np.testing.assert_array_equal(data.normalize([0, 255]), [0.0, 1.0])
    assert data.normalize([128])[0] == pytest.approx(0.50196, abs=1e-5)
    with pytest.raises(ContractError):
        data.normalize([256])
    with pytest.raises(ContractError):
        data.normalize([-1])


def test_batch_sizes_and_determinism():
    batches = data.batch_iter(10, 3, seed=0, epoch=0)
    assert [len(b) for b in batches] == [3, 3, 3, 1]
    again = data.batch_iter(10, 3, seed=0, epoch=0)
    assert all(np.array_equal(a, b) for a, b in zip(batches, again))
    other = data.batch_iter(10, 3, seed=0, epoch=1)
    assert not all(np.array_equal(a, b) for a, b in zip(batches, other))


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 500), st.integers(1, 64), st.integers(0, 10**6), st.integers(0, 50))
def test_batches_partition_indices(n, b, seed, epoch):
    batches = data.batch_iter(n, b, seed, epoch)
    flat = np.concatenate(batches)
    assert len(flat) == n
    np.testing.assert_array_equal(np.sort(flat), np.arange(n))
    assert all(len(x) == b for x in batches[:-1])


def test_toy_cube_and_seed():
    a, b = data.toy_regression(seed=3), data.toy_regression(seed=3)
    np.testing.assert_array_equal(a.inputs, b.inputs)
    np.testing.assert_array_equal(a.targets, b.targets)
    clean = data.toy_regression(5, noise_std=0.0, seed=0)
    np.testing.assert_allclose(clean.targets[:, 0], clean.inputs[:, 0] ** 3)
    assert 2.0**3 == 8.0
    assert a.inputs.min() >= -4 and a.inputs.max() <= 4 and len(a) == 20


def test_toy_residual_sanity():
    n, noise = 20, 3.0
    for seed in range(25):
        ds = data.toy_regression(n, noise_std=noise, seed=seed)
        resid = ds.targets[:, 0] - ds.inputs[:, 0] ** 3
        assert abs(resid.mean()) < 4 * noise / np.sqrt(n)


def test_missing_dataset_names_path(tmp_path):
    missing = str(tmp_path / "nope.idx")
    with pytest.raises(FileNotFoundError, match="nope.idx"):
        data.load_image_dataset(missing, missing, "train")


@pytest.mark.skipif(not os.path.exists(mnist_path("train-images-idx3-ubyte.gz")), reason="MNIST subset missing")
def test_shipped_mnist_subset():
    tr = data.load_image_dataset(mnist_path("train-images-idx3-ubyte.gz"), mnist_path("train-labels-idx1-ubyte.gz"), "train")
    te = data.load_image_dataset(mnist_path("test-images-idx3-ubyte.gz"), mnist_path("test-labels-idx1-ubyte.gz"), "test", limit=100)
    assert tr.inputs.shape == (8000, 784) and len(te) == 100
    assert tr.inputs.min() >= 0 and tr.inputs.max() <= 1
    assert set(np.unique(tr.targets)) == set(range(10))


def test_uniform_noise_fallback():
    ds = data.uniform_noise_images(50, 784, seed=1)
    assert ds.inputs.shape == (50, 784) and 0 <= ds.inputs.min() and ds.inputs.max() <= 1


def test_dataset_validates_targets():
    with pytest.raises(ContractError):
        data.Dataset(np.zeros((2, 1)), np.array([0, 3]), num_classes=3)
    with pytest.raises(ContractError):
        data.Dataset(np.zeros((2, 1)), np.array([0]))
