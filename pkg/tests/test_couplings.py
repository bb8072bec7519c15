import numpy as np
import pytest
from scipy.special import ndtri
from scipy.stats import kstest, norm

from unbiasedmcmc.couplings import (
    DensityHandle,
    RejectionCapError,
    crn_quantile_coupling,
    eta_coupling,
    mixture_maximal_coupling,
    normal_overlap,
    reflection_maximal_coupling,
)
from unbiasedmcmc.rng import derive_stream, standard_normal
from unbiasedmcmc.targets import true_tv_normal

from conftest import binom_se


def normal_handle(mean, sd):
    # the scale term matters: eta couplings compare densities across laws
    return DensityHandle(
        log_density=lambda v: -0.5 * ((float(v) - mean) / sd) ** 2 - np.log(sd),
        sampler=lambda s: mean + sd * standard_normal(s),
    )


def draw_many(fn, n, seed):
    stream = derive_stream(seed, 0)
    draws = [fn(stream) for _ in range(n)]
    xs = np.array([float(np.asarray(d.x).reshape(-1)[0]) for d in draws])
    ys = np.array([float(np.asarray(d.y).reshape(-1)[0]) for d in draws])
    same = np.array([d.identical for d in draws])
    return xs, ys, same


class TestEtaCoupling:
    def test_equal_laws_eta_one_always_identical(self):
        p = normal_handle(0.0, 1.0)
        _, _, same = draw_many(lambda s: eta_coupling(p, p, 1.0, s), 2000, 101)
        assert same.all()

    def test_meeting_probability_matches_overlap(self):
        # empirical P(X = Y) vs 1 - TV from the independent quadrature oracle
        p, q = normal_handle(0.0, 1.0), normal_handle(1.0, 1.0)
        _, _, same = draw_many(lambda s: eta_coupling(p, q, 1.0, s), 10**5, 102)
        expected = 1.0 - true_tv_normal(0.0, 1.0, 1.0, 1.0)
        p_hat = same.mean()
        assert abs(p_hat - expected) <= 3.0 * binom_se(p_hat, same.size)

    def test_equal_laws_sub_maximal_rate(self):
        p = normal_handle(0.0, 1.0)
        _, _, same = draw_many(lambda s: eta_coupling(p, p, 0.5, s), 10**5, 103)
        p_hat = same.mean()
        assert abs(p_hat - 0.5) <= 3.0 * binom_se(p_hat, same.size)

    def test_meeting_rate_increases_with_eta(self):
        p = normal_handle(0.0, 1.0)
        rates, ses = [], []
        for i, eta in enumerate((0.25, 0.5, 1.0)):
            _, _, same = draw_many(lambda s: eta_coupling(p, p, eta, s), 20000, 110 + i)
            rates.append(same.mean())
            ses.append(binom_se(same.mean(), same.size))
        assert rates[0] < rates[1] + 3.0 * (ses[0] + ses[1])
        assert rates[1] < rates[2] + 3.0 * (ses[1] + ses[2])

    def test_marginals(self):
        p, q = normal_handle(0.0, 1.0), normal_handle(1.0, 1.0)
        xs, ys, _ = draw_many(lambda s: eta_coupling(p, q, 1.0, s), 10**5, 104)
        assert kstest(xs, norm(0.0, 1.0).cdf).pvalue > 0.001
        assert kstest(ys, norm(1.0, 1.0).cdf).pvalue > 0.001

    def test_rejects_bad_eta(self):
        p = normal_handle(0.0, 1.0)
        with pytest.raises(ValueError):
            eta_coupling(p, p, 0.0, derive_stream(0, 0))

    def test_rejection_cap_reported(self):
        p, q = normal_handle(0.0, 1.0), normal_handle(0.0, 1.0)
        # equal laws and eta below one: the residual branch accepts a draw y
        # with probability 1 - eta each try; a cap of 1 trips quickly
        stream = derive_stream(0, 7)
        with pytest.raises(RejectionCapError) as err:
            for _ in range(1000):
                eta_coupling(p, q, 0.999, stream, max_iter=1)
        assert err.value.attempts == 1


class TestNormalOverlap:
    def test_equal_laws(self):
        assert normal_overlap(0.0, 1.0, 0.0, 1.0) == 1.0

    def test_equal_variance_closed_form(self):
        assert abs(normal_overlap(0.0, 1.0, 1.0, 1.0) - 2.0 * norm.cdf(-0.5)) < 1e-12

    def test_agrees_with_quadrature_tv(self):
        for m1, s1, m2, s2 in [(0.0, 1.0, 2.0, 3.0), (-1.0, 0.5, 1.0, 1.5), (0.0, 1.0, 0.0, 2.0)]:
            c = normal_overlap(m1, s1, m2, s2)
            assert abs(c - (1.0 - true_tv_normal(m1, s1, m2, s2))) < 1e-7


class TestMixtureMaximalCoupling:
    def test_equal_laws_full_overlap(self):
        _, _, same = draw_many(
            lambda s: mixture_maximal_coupling((0.0, 1.0), (0.0, 1.0), s), 1000, 120
        )
        assert same.all()

    def test_meeting_probability(self):
        _, _, same = draw_many(
            lambda s: mixture_maximal_coupling((0.0, 1.0), (1.0, 1.0), s), 10**5, 121
        )
        expected = 2.0 * norm.cdf(-0.5)
        p_hat = same.mean()
        assert abs(p_hat - expected) <= 3.0 * binom_se(p_hat, same.size)

    def test_far_apart_laws(self):
        xs, ys, same = draw_many(
            lambda s: mixture_maximal_coupling((0.0, 1.0), (10.0, 1.0), s), 20000, 122
        )
        assert normal_overlap(0.0, 1.0, 10.0, 1.0) == pytest.approx(2.0 * norm.cdf(-5.0), rel=1e-6)
        assert same.mean() <= 1e-3
        assert kstest(xs, norm(0.0, 1.0).cdf).pvalue > 0.001
        assert kstest(ys, norm(10.0, 1.0).cdf).pvalue > 0.001

    def test_same_joint_law_as_eta_one(self):
        p_spec, q_spec = (0.0, 1.0), (0.7, 1.3)
        xs_m, ys_m, same_m = draw_many(
            lambda s: mixture_maximal_coupling(p_spec, q_spec, s), 40000, 123
        )
        ph, qh = normal_handle(*p_spec), normal_handle(*q_spec)
        xs_e, ys_e, same_e = draw_many(lambda s: eta_coupling(ph, qh, 1.0, s), 40000, 124)
        se = binom_se(same_m.mean(), same_m.size) + binom_se(same_e.mean(), same_e.size)
        assert abs(same_m.mean() - same_e.mean()) <= 3.0 * se
        from scipy.stats import ks_2samp

        assert ks_2samp(ys_m[~same_m], ys_e[~same_e]).pvalue > 0.001
        assert ks_2samp(xs_m[same_m], xs_e[same_e]).pvalue > 0.001


class TestReflectionMaximalCoupling:
    def test_equal_means_identical(self):
        _, _, same = draw_many(
            lambda s: reflection_maximal_coupling(np.array([2.0]), np.array([2.0]), 1.0, s),
            1000,
            130,
        )
        assert same.all()

    def test_meeting_probability_1d(self):
        _, _, same = draw_many(
            lambda s: reflection_maximal_coupling(np.array([0.0]), np.array([1.0]), 1.0, s),
            10**5,
            131,
        )
        expected = 2.0 * norm.cdf(-0.5)
        p_hat = same.mean()
        assert abs(p_hat - expected) <= 3.0 * binom_se(p_hat, same.size)

    def test_1d_reflection_is_negation(self):
        # exact as real arithmetic; recovering the centered draws here costs
        # one rounding per subtraction, so allow a single ulp
        stream = derive_stream(132, 0)
        mu1, mu2 = np.array([0.0]), np.array([1.0])
        for _ in range(2000):
            d = reflection_maximal_coupling(mu1, mu2, 1.0, stream)
            if not d.identical:
                assert abs((d.x[0] - mu1[0]) + (d.y[0] - mu2[0])) <= 5e-16 * max(1.0, abs(d.x[0]))

    def test_marginals_multivariate(self):
        mu1 = np.array([0.0, 0.0, 0.0])
        mu2 = np.array([1.0, -1.0, 0.5])
        sigma = np.array([1.0, 2.0, 0.5])
        stream = derive_stream(133, 0)
        draws = [reflection_maximal_coupling(mu1, mu2, sigma, stream) for _ in range(20000)]
        xs = np.array([d.x for d in draws])
        ys = np.array([d.y for d in draws])
        for j in range(3):
            assert kstest(xs[:, j], norm(mu1[j], sigma[j]).cdf).pvalue > 0.001
            assert kstest(ys[:, j], norm(mu2[j], sigma[j]).cdf).pvalue > 0.001

    def test_identical_flag_soundness(self):
        stream = derive_stream(134, 0)
        for _ in range(2000):
            d = reflection_maximal_coupling(np.array([0.0]), np.array([0.6]), 1.0, stream)
            assert d.identical == bool(np.array_equal(d.x, d.y))

    def test_rejects_bad_sigma(self):
        with pytest.raises(ValueError):
            reflection_maximal_coupling(np.array([0.0]), np.array([1.0]), 0.0, derive_stream(0, 0))


class TestCrnQuantileCoupling:
    def test_same_quantile_function(self):
        qf = lambda u: float(ndtri(u))
        stream = derive_stream(140, 0)
        for _ in range(200):
            d = crn_quantile_coupling(qf, qf, stream)
            assert d.identical and d.x == d.y

    def test_location_shift(self):
        qf_p = lambda u: float(ndtri(u))
        qf_q = lambda u: float(ndtri(u)) + 3.0
        stream = derive_stream(141, 0)
        diffs = [crn_quantile_coupling(qf_p, qf_q, stream) for _ in range(5000)]
        gaps = np.array([d.y - d.x for d in diffs])
        # the shift survives up to one rounding of the quantile evaluation
        assert np.max(np.abs(gaps - 3.0)) <= 5e-16

    def test_scale_family(self):
        qf_p = lambda u: float(ndtri(u))
        qf_q = lambda u: 2.0 * float(ndtri(u))
        stream = derive_stream(142, 0)
        draws = [crn_quantile_coupling(qf_p, qf_q, stream) for _ in range(5000)]
        xs = np.array([d.x for d in draws])
        ys = np.array([d.y for d in draws])
        np.testing.assert_array_equal(ys, 2.0 * xs)
        assert np.corrcoef(xs, ys)[0, 1] > 1.0 - 1e-12

    def test_covariance_dominates_independent_coupling(self):
        qf = lambda u: float(ndtri(u))
        stream = derive_stream(143, 0)
        draws = [crn_quantile_coupling(qf, lambda u: 1.0 + float(ndtri(u)), stream) for _ in range(20000)]
        xs = np.array([d.x for d in draws])
        ys = np.array([d.y for d in draws])
        crn_cov = np.cov(xs, ys)[0, 1]
        rng = np.random.default_rng(99)
        indep_cov = np.cov(rng.normal(size=20000), 1.0 + rng.normal(size=20000))[0, 1]
        assert crn_cov >= indep_cov
