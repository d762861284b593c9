"""The numba kernels must agree with the numpy fallback."""

import os
import subprocess
import sys

import numpy as np
import pytest

from bbh import kernels

IMPLS = [kernels.numpy_impl] + ([kernels.numba_impl] if kernels.numba_impl is not None else [])


@pytest.fixture(params=IMPLS, ids=lambda k: k.name)
def impl(request):
    return request.param


def test_knn_hand_case(impl):
    q = np.array([[0.0], [1.0]])
    p = np.array([[0.1], [0.9]])
    nd, ni, dd, di = impl.knn_d1(q, p)
    np.testing.assert_allclose(nd[:, 0], [0.1, 0.1])
    np.testing.assert_array_equal(ni[:, 0], [0, 1])
    np.testing.assert_allclose(dd[:, 0], [1.0, 1.0])
    np.testing.assert_array_equal(di[:, 0], [1, 0])


def test_knn_ties_take_first_index(impl):
    q = np.array([[0.0], [2.0], [4.0]])
    p = np.array([[1.0], [-1.0]])
    _, ni, _, di = impl.knn_d1(q, p)
    assert ni[0, 0] == 0
    assert di[1, 0] == 0


@pytest.mark.skipif(kernels.numba_impl is None, reason="numba unavailable")
def test_knn_paths_agree():
    rng = np.random.default_rng(0)
    q, p = rng.normal(size=(5, 300)), rng.normal(size=(7, 300))
    for a, b in zip(kernels.numpy_impl.knn_d1(q, p), kernels.numba_impl.knn_d1(q, p)):
        np.testing.assert_array_equal(a, b)


@pytest.mark.skipif(kernels.numba_impl is None, reason="numba unavailable")
def test_maxpool_and_col2im_paths_agree():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(2, 6, 8, 3))
    o1, a1 = kernels.numpy_impl.maxpool2(x)
    o2, a2 = kernels.numba_impl.maxpool2(x)
    np.testing.assert_array_equal(o1, o2)
    np.testing.assert_array_equal(a1, a2)
    g = rng.normal(size=o1.shape)
    np.testing.assert_array_equal(
        kernels.numpy_impl.maxpool2_backward(g, a1, x.shape), kernels.numba_impl.maxpool2_backward(g, a2, x.shape)
    )
    cols = rng.normal(size=(2, 3, 3, 3, 2, 4))
    np.testing.assert_allclose(
        kernels.numpy_impl.col2im(cols, (2, 7, 6, 4), 3, 2, 2), kernels.numba_impl.col2im(cols, (2, 7, 6, 4), 3, 2, 2), rtol=1e-14
    )


@pytest.mark.skipif(kernels.numba_impl is None, reason="numba unavailable")
def test_adam_paths_agree():
    rng = np.random.default_rng(2)
    states = []
    for impl in (kernels.numpy_impl, kernels.numba_impl):
        p, g = rng.normal(size=50), np.linspace(-1, 1, 50)
        m, v = np.zeros(50), np.zeros(50)
        p0 = np.random.default_rng(9).normal(size=50)
        p[:] = p0
        for t in range(1, 4):
            impl.adam_update(p, g, m, v, 1e-3, 0.9, 0.999, 1e-8, 1 - 0.9**t, 1 - 0.999**t)
        states.append((p, m, v))
    for a, b in zip(*states):
        np.testing.assert_allclose(a, b, rtol=1e-14, atol=1e-17)


def test_maxpool_odd_extent_truncates(impl):
    x = np.arange(25.0).reshape(1, 5, 5, 1)
    out, _ = impl.maxpool2(x)
    np.testing.assert_array_equal(out[0, :, :, 0], [[6, 8], [16, 18]])


def test_env_flag_selects_numpy():
    env = dict(os.environ, BBH_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", "from bbh import kernels; print(kernels.BACKEND)"], env=env, capture_output=True, text=True)
    assert out.stdout.strip() == "numpy"
