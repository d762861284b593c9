import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from bbh import autograd as ag
from bbh import divergence as dv
from bbh.errors import ContractError
from bbh.nets import build_mlp
from bbh.posterior import PointPosterior


def oracle_knn_kl(q, p):
    """Plain-Python reference of the nearest-neighbour estimator (d = 1)."""
    n, m = len(q), len(p)
    total = 0.0
    for i, qi in enumerate(q):
        nu = min(abs(qi - pj) for pj in p)
        rho = min(abs(qi - qj) for j, qj in enumerate(q) if j != i)
        total += math.log(max(nu, 1e-12) / max(rho, 1e-12))
    return total / n + math.log(m / (n - 1))


def test_hand_fixture():
    hand = 0.5 * (math.log(0.1) + math.log(0.1)) + math.log(2 / 1)
    assert hand == pytest.approx(-1.609438, abs=1e-6)
    assert oracle_knn_kl([0.0, 1.0], [0.1, 0.9]) == pytest.approx(hand, abs=1e-12)
    assert dv.knn_kl_estimate(np.array([0.0, 1.0]), np.array([0.1, 0.9])).item() == pytest.approx(hand, abs=1e-9)


def test_fused_path_hand_fixture():
    q = ag.Tensor(np.array([[0.0], [1.0]]))
    assert dv.knn_kl_coordinates(q, np.array([[0.1], [0.9]])).item() == pytest.approx(-1.6094379124341005, abs=1e-9)


def test_per_weight_two_coordinates():
    spec = build_mlp([1, 1])  # one kernel entry + one bias

    class Fixed:
        def sample_stacked(self, rng, S):
            return {"dense0.kernel": ag.Tensor(np.array([0.0, 1.0]).reshape(2, 1, 1)), "dense0.bias": ag.Tensor(np.array([[0.0], [1.0]]))}

    class FixedPrior(dv.PriorSpec):
        def sample(self, rng, shape):
            return np.tile(np.array([[0.1], [0.9]]), (1, shape[1]))

    est = dv.per_weight_knn_kl(Fixed(), np.random.default_rng(0), n=2, m=2, prior=FixedPrior())
    assert est.item() == pytest.approx(-3.218876, abs=1e-6)
    assert spec.num_params() == 2


def test_identical_sets_hit_floor_but_stay_finite():
    w = np.array([0.2, -0.5, 1.0])
    est = dv.knn_kl_estimate(w, w).item()
    assert np.isfinite(est) and est < -20


def test_point_posterior_floor_path():
    post = PointPosterior(build_mlp([3, 2]), np.random.default_rng(0))
    est = dv.per_weight_knn_kl(post, np.random.default_rng(1))
    assert np.isfinite(est.item()) and est.item() > 0  # denominators floored at 1e-12


def test_needs_two_samples():
    with pytest.raises(ContractError):
        dv.knn_kl_estimate(np.array([0.0]), np.array([1.0, 2.0]))
    with pytest.raises(ContractError):
        dv.knn_kl_coordinates(ag.Tensor(np.zeros((1, 3))), np.zeros((2, 3)))


@settings(max_examples=60, deadline=None)
@given(
    arrays(np.float64, st.integers(2, 7), elements=st.floats(-5, 5), unique=True),
    arrays(np.float64, st.integers(1, 6), elements=st.floats(-5, 5)),
)
def test_composite_matches_oracle(q, p):
    assert dv.knn_kl_estimate(q, p).item() == pytest.approx(oracle_knn_kl(list(q), list(p)), rel=1e-10, abs=1e-10)


def test_fused_matches_per_column():
    rng = np.random.default_rng(0)
    q, p = rng.normal(size=(5, 40)), rng.normal(size=(5, 40))
    fused = dv.knn_kl_coordinates(ag.Tensor(q), p).item()
    cols = sum(dv.knn_kl_estimate(q[:, j], p[:, j]).item() for j in range(40))
    assert fused == pytest.approx(cols, rel=1e-12)


@settings(max_examples=40, deadline=None)
@given(
    arrays(np.float64, 6, elements=st.floats(-3, 3), unique=True),
    arrays(np.float64, 4, elements=st.floats(-3, 3)),
    st.floats(0.1, 10) | st.floats(-10, -0.1),
    st.floats(-5, 5),
)
def test_affine_invariance(q, p, a, b):
    before = dv.knn_kl_estimate(q, p).item()
    after = dv.knn_kl_estimate(a * q + b, a * p + b).item()
    if np.min(np.abs(np.subtract.outer(q, p))) > 1e-6 and np.min(np.abs(np.diff(np.sort(q)))) > 1e-6:
        assert after == pytest.approx(before, abs=1e-9)


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(3)
    q, p = rng.normal(size=(5, 1)), rng.normal(size=(5, 1))
    assert ag.gradient_check(lambda t: dv.knn_kl_estimate(t, p), q) < 1e-4
    qm, pm = rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
    assert ag.gradient_check(lambda t: dv.knn_kl_estimate(t, pm), qm) < 1e-4
    qc, pc = rng.normal(size=(5, 8)), rng.normal(size=(5, 8))
    assert ag.gradient_check(lambda t: dv.knn_kl_coordinates(t, pc), qc) < 1e-4


def test_small_sample_consistency():
    rng = np.random.default_rng(0)
    ests = [dv.knn_kl_estimate(rng.normal(1.0, 1.0, 500), rng.normal(size=500)).item() for _ in range(40)]
    assert np.mean(ests) == pytest.approx(0.5, abs=0.1)


# ---- analytical and quadrature -------------------------------------------------

def test_analytical_fixtures():
    assert dv.gaussian_kl_analytical(0, 1, 0, 1) == 0.0
    assert dv.gaussian_kl_analytical(1, 1, 0, 1) == pytest.approx(0.5, abs=1e-15)
    assert dv.gaussian_kl_analytical(0, 2, 0, 1) == pytest.approx(-math.log(2) + 2 - 0.5, abs=1e-15)
    assert dv.gaussian_kl_analytical(0, 2, 0, 1) == pytest.approx(0.806853, abs=1e-6)


@pytest.mark.parametrize("sigma", [0.0, -1.0])
def test_analytical_rejects_bad_sigma(sigma):
    with pytest.raises(ContractError):
        dv.gaussian_kl_analytical(0, sigma)


def test_analytical_nonnegative_zero_only_at_equality():
    mus = np.linspace(-2, 2, 9)
    sigmas = np.linspace(0.25, 3, 12)
    for mu in mus:
        for s in sigmas:
            kl = dv.gaussian_kl_analytical(mu, s, 0.5, 1.25)
            assert kl >= 0
            if not (mu == 0.5 and s == 1.25):
                assert kl > 0
    assert dv.gaussian_kl_analytical(0.5, 1.25, 0.5, 1.25) == pytest.approx(0.0, abs=1e-15)


def test_quadrature_fixtures():
    f = dv.normal_logpdf
    assert abs(dv.quadrature_kl_oracle(f(0, 1), f(0, 1), -10, 10, 100_000)) < 1e-8
    assert dv.quadrature_kl_oracle(f(1, 1), f(0, 1), -15, 15) == pytest.approx(0.5, abs=1e-6)
    assert dv.quadrature_kl_oracle(f(0, 2), f(0, 1), -25, 25) == pytest.approx(0.806853, abs=1e-6)


def test_tape_kl_matches_closed_form():
    mu, sigma = np.array([0.3, -1.0]), np.array([0.5, 2.0])
    tape = dv.gaussian_kl_standard_normal(ag.Tensor(mu), ag.Tensor(sigma)).item()
    assert tape == pytest.approx(dv.gaussian_kl_analytical(mu, sigma).sum(), rel=1e-14)
    assert ag.gradient_check(lambda t: dv.gaussian_kl_standard_normal(t, ag.Tensor(sigma)), mu) < 1e-6
    assert ag.gradient_check(lambda t: dv.gaussian_kl_standard_normal(ag.Tensor(mu), t), sigma) < 1e-6


# ---- discriminator --------------------------------------------------------------

def normal_sampler(mu):
    return lambda rng, k: rng.normal(mu, 1.0, k)


def test_constant_half_discriminator_gives_zero():
    disc = dv.Discriminator()
    for w in disc.weights:
        w.data[...] = 0.0
    np.testing.assert_allclose(disc.prob(np.linspace(-3, 3, 7)), 0.5)
    assert disc.kl_estimate(np.random.default_rng(0).normal(size=100)).item() == 0.0


def test_indistinguishable_samplers():
    sched = dv.DiscriminatorSchedule(batch=512)
    est, disc = dv.discriminator_kl_estimate(normal_sampler(0.0), normal_sampler(0.0), sched, np.random.default_rng(0), steps=300, n_eval=5000)
    assert abs(est) < 0.1
    assert np.all(np.abs(disc.prob(np.linspace(-1.5, 1.5, 7)) - 0.5) < 0.1)


def test_shifted_gaussian_estimate():
    sched = dv.DiscriminatorSchedule(batch=512, lr=3e-3)
    est, _ = dv.discriminator_kl_estimate(normal_sampler(3.0), normal_sampler(0.0), sched, np.random.default_rng(1), steps=1500, n_eval=20000)
    assert est == pytest.approx(4.5, rel=0.25)


def test_discriminator_logit_gradient():
    disc = dv.Discriminator(rng=np.random.default_rng(2))
    x = np.random.default_rng(3).normal(size=6)
    assert ag.gradient_check(lambda t: ag.tsum(disc.logit(t)), x) < 1e-4


def test_unknown_prior_family():
    with pytest.raises(ContractError):
        dv.PriorSpec("laplace")
