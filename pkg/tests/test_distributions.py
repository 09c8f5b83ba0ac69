import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate, stats

from mnigmix.distributions import (
    cholesky,
    gig_logpdf,
    gig_markov_step,
    gig_moment,
    inverse_gaussian_logpdf,
    make_rng,
    mgig_log_unnormalized,
    sample_dirichlet,
    sample_gamma,
    sample_gig,
    sample_inverse_gaussian,
    sample_inverse_wishart,
    sample_mgig,
    sample_mvn,
    sample_truncated_normal_positive,
    sample_wishart,
    truncated_normal_positive_mean,
    wishart_logpdf,
)
from conftest import rel_err
from oracles import gig_moment_quad

N = 100_000


def test_streams_are_reproducible_and_distinct():
    a = make_rng(7, 0).random(5)
    assert np.array_equal(a, make_rng(7, 0).random(5))
    assert not np.array_equal(a, make_rng(7, 1).random(5))
    assert not np.array_equal(a, make_rng(8, 0).random(5))


def test_gamma_exponential_case(rng):
    assert sample_gamma(1.0, 2.0, rng, N).mean() == pytest.approx(0.5, rel=0.02)


def test_gamma_moments(rng):
    x = sample_gamma(3.5, 0.7, rng, N)
    assert x.mean() == pytest.approx(5.0, rel=0.01)
    assert x.var() == pytest.approx(3.5 / 0.49, rel=0.03)


def test_gamma_domain():
    with pytest.raises(ValueError):
        sample_gamma(0.0, 1.0, make_rng(0))


def test_dirichlet(rng):
    assert sample_dirichlet([1, 1], rng, N).mean(axis=0) == pytest.approx([0.5, 0.5], abs=0.005)
    assert sample_dirichlet([2, 4, 6], rng, N).mean(axis=0) == pytest.approx([1 / 6, 1 / 3, 1 / 2], abs=0.004)
    assert np.all(sample_dirichlet([5.0], rng, 10) == 1.0)
    with pytest.raises(ValueError):
        sample_dirichlet([1.0, 0.0], rng)


def test_mvn_moments(rng):
    cov = np.array([[2.0, -1.0], [-1.0, 1.0]])
    x = sample_mvn([1.0, -1.0], cov, rng, N)
    assert x.mean(axis=0) == pytest.approx([1, -1], abs=0.02)
    assert rel_err(np.cov(x, rowvar=False), cov) < 0.02
    assert sample_mvn([0.0, 0.0], np.eye(2), rng).shape == (2,)


def test_mvn_rejects_indefinite(rng):
    with pytest.raises(ValueError):
        sample_mvn([0, 0], [[1.0, 2.0], [2.0, 1.0]], rng)


def test_cholesky_rejects_asymmetric():
    with pytest.raises(ValueError):
        cholesky(np.array([[1.0, 0.5], [0.0, 1.0]]))


@pytest.mark.parametrize("mean, variance, expected", [
    (0.0, 1.0, math.sqrt(2 / math.pi)),
    (5.0, 0.01, 5.0),
    (-3.0, 1.0, 0.28310),
])
def test_truncated_normal_means(rng, mean, variance, expected):
    x = sample_truncated_normal_positive(mean, variance, rng, size=N)
    assert np.all(x > 0)
    assert truncated_normal_positive_mean(mean, variance) == pytest.approx(expected, rel=1e-4)
    assert x.mean() == pytest.approx(expected, rel=0.01)


@pytest.mark.parametrize("mean, sd", [(0.3, 1.0), (-2.0, 0.5), (-8.0, 1.0), (-40.0, 2.0)])
def test_truncated_normal_ks(rng, mean, sd):
    x = sample_truncated_normal_positive(mean, sd**2, rng, size=20_000)
    ref = stats.truncnorm(-mean / sd, np.inf, loc=mean, scale=sd)
    assert stats.kstest(x, ref.cdf).pvalue > 1e-3


def test_truncated_normal_scalar_and_domain(rng):
    assert isinstance(sample_truncated_normal_positive(1.0, 1.0, rng), float)
    with pytest.raises(ValueError):
        sample_truncated_normal_positive(0.0, 0.0, rng)


def test_wishart_one_dimensional_is_gamma(rng):
    x = sample_wishart(3.0, [[2.0]], rng, size=N)[:, 0, 0]
    assert x.mean() == pytest.approx(1.5, rel=0.01)
    assert stats.kstest(x[:20000], stats.gamma(3.0, scale=0.5).cdf).pvalue > 1e-3


def test_wishart_mean(rng):
    c = np.array([[1.0, 0.3], [0.3, 0.5]])
    x = sample_wishart(4.0, c, rng, size=N)
    assert rel_err(x.mean(axis=0), 4.0 * np.linalg.inv(c)) < 0.01
    assert rel_err(sample_wishart(4.0, np.eye(2), rng, size=N).mean(axis=0), 4 * np.eye(2)) < 0.01


def test_wishart_domain(rng):
    with pytest.raises(ValueError):
        sample_wishart(0.4, np.eye(2), rng)
    with pytest.raises(ValueError):
        sample_wishart(3.0, [[1.0, 2.0], [2.0, 1.0]], rng)


def test_wishart_logpdf_matches_scipy():
    c = np.array([[1.0, 0.3], [0.3, 0.5]])
    x = np.array([[2.0, 0.4], [0.4, 3.0]])
    ref = stats.wishart(df=7.0, scale=np.linalg.inv(2 * c)).logpdf(x)
    assert wishart_logpdf(x, 3.5, c) == pytest.approx(ref, rel=1e-12)


def test_inverse_wishart_matches_scipy_mean(rng):
    a = np.array([[2.0, 0.5], [0.5, 1.0]])
    x = sample_inverse_wishart(3.0, a, rng, size=N)
    ref = stats.invwishart(df=6.0, scale=2 * a).mean()
    assert rel_err(x.mean(axis=0), ref) < 0.02


@pytest.mark.parametrize("gamma, delta", [(1.0, 1.0), (2.0, 1.0), (0.6, 1.7)])
def test_inverse_gaussian(rng, gamma, delta):
    u = sample_inverse_gaussian(gamma, delta, rng, size=N)
    assert u.mean() == pytest.approx(delta / gamma, rel=0.01)
    lam = delta**2
    ref = stats.invgauss(mu=delta / gamma / lam, scale=lam)
    assert stats.kstest(u[:20000], ref.cdf).pvalue > 1e-3
    assert inverse_gaussian_logpdf(1.3, gamma, delta) == pytest.approx(ref.logpdf(1.3), rel=1e-12)


def test_inverse_gaussian_domain(rng):
    with pytest.raises(ValueError):
        sample_inverse_gaussian(0.0, 1.0, rng)


def test_gig_logpdf_reduces_to_ig():
    assert gig_logpdf(1.0, -0.5, 1.0, 1.0) == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-12)
    assert gig_logpdf(1.0, -0.5, 1.0, 1.0) == pytest.approx(inverse_gaussian_logpdf(1.0, 1.0, 1.0))


@pytest.mark.parametrize("lam, chi, psi", [(1.0, 4.0, 9.0), (-2.5, 0.3, 2.0), (0.2, 5.0, 0.1)])
def test_gig_logpdf_normalized_and_matches_scipy(lam, chi, psi):
    total = integrate.quad(lambda x: math.exp(gig_logpdf(x, lam, chi, psi)), 0, np.inf, limit=400)[0]
    assert total == pytest.approx(1.0, abs=1e-8)
    ref = stats.geninvgauss(lam, math.sqrt(chi * psi), scale=math.sqrt(chi / psi))
    assert gig_logpdf(0.7, lam, chi, psi) == pytest.approx(ref.logpdf(0.7), rel=1e-10)


def test_gig_logpdf_domain():
    with pytest.raises(ValueError):
        gig_logpdf(0.0, 1.0, 1.0, 1.0)


@pytest.mark.parametrize("k", [1, 2, -1])
@pytest.mark.parametrize("lam, chi, psi", [(1.5, 1.0, 1.0), (-0.5, 2.0, 3.0), (3.2, 0.5, 7.0)])
def test_gig_moment_against_quadrature(k, lam, chi, psi):
    assert gig_moment(k, lam, chi, psi) == pytest.approx(gig_moment_quad(k, lam, chi, psi), rel=1e-8)


def test_markov_step_preserves_target(rng):
    lam, chi, psi = 1.5, 1.0, 1.0
    ref = stats.geninvgauss(lam, math.sqrt(chi * psi), scale=math.sqrt(chi / psi))
    x0 = ref.rvs(size=N, random_state=np.random.default_rng(3))
    x1 = gig_markov_step(x0, lam, chi, psi, rng)
    assert np.all(x1 > 0)
    assert x1.mean() == pytest.approx(gig_moment(1, lam, chi, psi), rel=0.01)
    assert stats.ks_2samp(x1[:20000], x0[20000:40000]).pvalue > 1e-3


def test_markov_step_domain(rng):
    with pytest.raises(ValueError):
        gig_markov_step(1.0, -1.0, 1.0, 1.0, rng)


@given(st.floats(0.1, 5.0), st.floats(0.01, 50), st.floats(0.01, 50), st.floats(1e-3, 1e3))
def test_markov_step_positive(lam, chi, psi, current):
    assert gig_markov_step(current, lam, chi, psi, make_rng(1)) > 0


def test_sample_gig_cold_start_mean(rng):
    x = sample_gig(1.5, 2.5, 1.3, rng, size=N)
    assert x.mean() == pytest.approx(gig_moment(1, 1.5, 2.5, 1.3), rel=0.01)


def test_sample_gig_negative_half_is_ig(rng):
    x = sample_gig(-0.5, 1.0, 4.0, rng, size=N)
    u = sample_inverse_gaussian(2.0, 1.0, rng, size=N)
    assert x.mean() == pytest.approx(u.mean(), rel=0.01)
    assert (x**2).mean() == pytest.approx((u**2).mean(), rel=0.03)


def test_sample_gig_reciprocal_law(rng):
    x = sample_gig(2.0, 3.0, 5.0, rng, size=N)
    assert (1 / x).mean() == pytest.approx(gig_moment(1, -2.0, 5.0, 3.0), rel=0.01)


def test_sample_gig_ks_against_scipy(rng):
    x = sample_gig(-1.5, 2.0, 0.7, rng, size=20000)
    ref = stats.geninvgauss(-1.5, math.sqrt(1.4), scale=math.sqrt(2.0 / 0.7))
    assert stats.kstest(x, ref.cdf).pvalue > 1e-3


def test_sample_gig_warm_start_keeps_shape(rng):
    start = np.full((4, 3), 2.0)
    out = sample_gig(-1.5, np.ones((4, 3)), 2.0, rng, warm_start=start, n_steps=5)
    assert out.shape == (4, 3) and np.all(out > 0)
    assert isinstance(sample_gig(1.0, 1.0, 1.0, rng), float)


def test_sample_gig_domain(rng):
    with pytest.raises(ValueError):
        sample_gig(0.0, 1.0, 1.0, rng)
    with pytest.raises(ValueError):
        sample_gig(1.0, 0.0, 1.0, rng)
    with pytest.raises(ValueError):
        sample_gig(1.0, 1.0, 1.0, rng, n_steps=0)


def test_mgig_one_dimensional_is_gig(rng):
    # MGIG_1(-2, 5, 3) has density x^-3 exp(-5x - 3/x), i.e. GIG(-2, 6, 10)
    x = sample_mgig(2.0, [[3.0]], [1.0], 5.0, rng, size=N)[:, 0, 0]
    for k in (1, 2):
        assert (x**k).mean() == pytest.approx(gig_moment(k, -2.0, 6.0, 10.0), rel=0.01)


def mgig_is_mean(q, a, z, b, n, seed):
    """Mean of MGIG_d(-q, b z z^T, a) by importance sampling from the a-term."""
    a = np.asarray(a, dtype=float)
    prop = stats.invwishart(df=2 * q, scale=2 * a)
    x = prop.rvs(size=n, random_state=np.random.default_rng(seed))
    logw = -b * np.einsum("i,nij,j->n", z, x, z)
    w = np.exp(logw - logw.max())
    return np.einsum("n,nij->ij", w, x) / w.sum()


def test_mgig_two_dimensional_matches_importance_sampling(rng):
    z, a = np.array([1.0, 0.0]), np.eye(2)
    x = sample_mgig(3.0, a, z, 1.0, rng, size=N)
    oracle = mgig_is_mean(3.0, a, z, 1.0, 400_000, 11)
    assert rel_err(x.mean(axis=0), oracle) < 0.02


def test_mgig_log_density_consistent_with_target():
    x = np.array([[1.2, 0.1], [0.1, 0.8]])
    z, a, b = np.array([0.5, -1.0]), np.array([[2.0, 0.3], [0.3, 1.0]]), 1.7
    expected = (-(3.0 + 1.5) * np.log(np.linalg.det(x)) - b * z @ x @ z
                - np.trace(a @ np.linalg.inv(x)))
    assert mgig_log_unnormalized(x, 3.0, b * np.outer(z, z), a) == pytest.approx(expected)


def test_mgig_draws_spd(rng):
    x = sample_mgig(2.5, [[2.0, 0.5], [0.5, 1.0]], [0.3, -2.0], 4.0, rng, size=10_000)
    assert np.all(np.linalg.eigvalsh(x) > 0)
    assert np.allclose(x, np.swapaxes(x, 1, 2))


def test_mgig_domain(rng):
    with pytest.raises(ValueError):
        sample_mgig(3.0, np.eye(2), [0.0, 0.0], 1.0, rng)
    with pytest.raises(ValueError):
        sample_mgig(0.4, np.eye(2), [1.0, 0.0], 1.0, rng)
    with pytest.raises(ValueError):
        sample_mgig(3.0, [[1.0, 2.0], [2.0, 1.0]], [1.0, 0.0], 1.0, rng)
