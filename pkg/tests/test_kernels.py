import numpy as np
import pytest
from scipy import integrate
from scipy.stats import kstest, ks_2samp, norm

from unbiasedmcmc.chains import run_lagged_coupling
from unbiasedmcmc.kernels import (
    KernelSpec,
    coupled_independence_oracle_step,
    coupled_mixture_step,
    coupled_mrth_step,
    independence_oracle_step,
    make_ar1_transitions,
    make_transitions,
    mixture_step,
    mrth_step,
)
from unbiasedmcmc.rng import derive_stream, standard_normal, uniform
from unbiasedmcmc.targets import TargetDistribution, make_ar1_oracle, make_std_normal


def flat_target():
    return TargetDistribution(dimension=1, potential=lambda x: 0.0, label="flat")


def box_target():
    # uniform on [0, 1]: infinite potential outside
    def potential(x):
        return 0.0 if 0.0 <= x[0] <= 1.0 else float("inf")

    return TargetDistribution(dimension=1, potential=potential, label="box")


def chain(step, x0, n, stream):
    xs = np.empty(n)
    x = x0
    for i in range(n):
        x = step(x, stream)
        xs[i] = x[0]
    return xs


def batch_means_variance(xs, batch_size=1000):
    """Classical long-run variance estimate: batch size times the variance
    of batch means.  Independent of the coupling machinery."""
    n = (len(xs) // batch_size) * batch_size
    means = xs[:n].reshape(-1, batch_size).mean(axis=1)
    return batch_size * means.var(ddof=1)


class TestMrthStep:
    def test_constant_potential_always_accepts(self):
        target = flat_target()
        stream = derive_stream(200, 0)
        x = np.array([0.0])
        for _ in range(500):
            nxt = mrth_step(x, target, 1.0, stream)
            assert nxt[0] != x[0]
            x = nxt

    def test_out_of_support_proposals_always_rejected(self):
        target = box_target()
        stream = derive_stream(201, 0)
        x = np.array([0.5])
        for _ in range(2000):
            nxt = mrth_step(x, target, 5.0, stream)
            assert 0.0 <= nxt[0] <= 1.0
            x = nxt

    def test_long_run_mean_and_acceptance_rate(self):
        target = make_std_normal(1)
        stream = derive_stream(202, 0)
        n = 10**5
        xs = chain(lambda x, s: mrth_step(x, target, 1.0, s), np.array([0.0]), n, stream)
        vhat = batch_means_variance(xs)
        assert abs(xs.mean()) < 4.0 * np.sqrt(vhat / n)

        accept_rate = np.mean(xs[1:] != xs[:-1])
        # acceptance probability of the stationary chain by 2-d quadrature
        f = lambda xp, x: (
            norm.pdf(x) * norm.pdf(xp - x) * min(1.0, np.exp(0.5 * x * x - 0.5 * xp * xp))
        )
        expected, _ = integrate.dblquad(f, -8, 8, lambda x: -8, lambda x: 8, epsabs=1e-6)
        assert 0.5 < expected < 0.85
        assert abs(accept_rate - expected) < 0.02


class TestCoupledMrthStep:
    def test_faithful_when_equal(self):
        target = make_std_normal(1)
        stream = derive_stream(210, 0)
        x = np.array([1.2])
        for coupling in ("reflection-maximal", "crn", "eta", "mixture"):
            res = coupled_mrth_step(x, x.copy(), target, 1.0, stream, coupling)
            assert res.met
            np.testing.assert_array_equal(res.next_x, res.next_y)

    def test_marginal_matches_single_kernel(self):
        target = make_std_normal(1)
        n = 10**5
        x0, y0 = np.array([0.3]), np.array([-0.7])
        stream = derive_stream(211, 0)
        coupled_next = np.empty(n)
        for i in range(n):
            res = coupled_mrth_step(x0, y0, target, 1.0, stream)
            coupled_next[i] = res.next_x[0]
        stream = derive_stream(211, 1)
        single_next = np.array([mrth_step(x0, target, 1.0, stream)[0] for _ in range(n)])
        assert ks_2samp(coupled_next, single_next).pvalue > 0.001

    def test_y_marginal_matches_single_kernel(self):
        target = make_std_normal(1)
        n = 3 * 10**4
        x0, y0 = np.array([0.3]), np.array([-0.7])
        stream = derive_stream(212, 0)
        coupled_next = np.empty(n)
        for i in range(n):
            res = coupled_mrth_step(x0, y0, target, 1.0, stream)
            coupled_next[i] = res.next_y[0]
        stream = derive_stream(212, 1)
        single_next = np.array([mrth_step(y0, target, 1.0, stream)[0] for _ in range(n)])
        assert ks_2samp(coupled_next, single_next).pvalue > 0.001

    def test_distant_chains_rarely_meet_in_one_step(self):
        target = make_std_normal(1)
        stream = derive_stream(213, 0)
        x, y = np.array([0.0]), np.array([20.0])
        met = sum(
            coupled_mrth_step(x, y, target, 1.0, stream).met for _ in range(10**4)
        )
        assert met / 10**4 < 1e-3

    def test_stationarity_of_one_step(self):
        target = make_std_normal(1)
        stream = derive_stream(214, 0)
        n = 10**5
        out = np.empty(n)
        for i in range(n):
            x = np.array([standard_normal(stream)])
            out[i] = mrth_step(x, target, 1.0, stream)[0]
        assert kstest(out, norm.cdf).pvalue > 0.001


class TestIndependenceOracle:
    def test_single_step_is_exact_draw(self):
        target = make_std_normal(1)
        stream = derive_stream(220, 0)
        draws = np.array(
            [independence_oracle_step(np.array([55.0]), target, stream)[0] for _ in range(20000)]
        )
        assert kstest(draws, norm.cdf).pvalue > 0.001

    def test_coupled_meets_immediately(self):
        target = make_std_normal(1)
        stream = derive_stream(221, 0)
        res = coupled_independence_oracle_step(np.array([3.0]), np.array([-9.0]), target, stream)
        assert res.met
        np.testing.assert_array_equal(res.next_x, res.next_y)

    def test_requires_direct_sampler(self):
        with pytest.raises(ValueError):
            independence_oracle_step(np.array([0.0]), flat_target(), derive_stream(0, 0))


def crn_transitions(target, sd):
    spec = KernelSpec(target=target, proposal_sd=sd, proposal_coupling="crn")
    return make_transitions(spec)


class TestMixtureKernel:
    def test_single_component_degenerates(self):
        target = make_std_normal(1)
        pair = make_transitions(KernelSpec(target=target, proposal_sd=1.0))
        components = [(1.0, pair.step, pair.coupled_step)]
        x, y = np.array([0.5]), np.array([-0.5])

        res_mix = coupled_mixture_step(x, y, components, derive_stream(230, 0))
        control = derive_stream(230, 0)
        uniform(control)  # burn the component indicator
        res_direct = pair.coupled_step(x, y, control)
        np.testing.assert_array_equal(res_mix.next_x, res_direct.next_x)
        np.testing.assert_array_equal(res_mix.next_y, res_direct.next_y)
        assert res_mix.met == res_direct.met

    def test_indicator_independent_of_states(self):
        target = make_std_normal(1)
        pair = make_transitions(KernelSpec(target=target, proposal_sd=1.0))

        def record_components(calls):
            return [
                (0.7, pair.step, lambda x, y, s: (calls.append(0), pair.coupled_step(x, y, s))[1]),
                (0.3, pair.step, lambda x, y, s: (calls.append(1), pair.coupled_step(x, y, s))[1]),
            ]

        near_calls, far_calls = [], []
        near, far = record_components(near_calls), record_components(far_calls)
        s1, s2 = derive_stream(231, 0), derive_stream(231, 0)
        x = np.array([0.0])
        for _ in range(200):
            coupled_mixture_step(x, np.array([0.1]), near, s1)
            coupled_mixture_step(x, np.array([50.0]), far, s2)
        assert near_calls == far_calls

    def test_contractive_plus_maximal_mixture_meets(self):
        target = make_std_normal(1)
        crn = crn_transitions(target, 1.0)
        refl = make_transitions(KernelSpec(target=target, proposal_sd=1.0))
        components = [
            (0.9, crn.step, crn.coupled_step),
            (0.1, refl.step, refl.coupled_step),
        ]
        step = lambda x, s: mixture_step(x, components, s)
        coupled = lambda x, y, s: coupled_mixture_step(x, y, components, s)
        pi0 = make_std_normal(1).sampler
        taus = []
        for i in range(1000):
            traj = run_lagged_coupling(pi0, step, coupled, 1, 0, derive_stream(232, i),
                                       max_sweeps=10**5, storage="none")
            assert traj.met
            taus.append(traj.tau)
        assert np.isfinite(np.mean(taus))

    def test_empty_components_rejected(self):
        with pytest.raises(ValueError):
            mixture_step(np.array([0.0]), [], derive_stream(0, 0))


class TestKernelSpecValidation:
    def test_bad_sigma(self):
        with pytest.raises(ValueError):
            KernelSpec(target=make_std_normal(1), proposal_sd=0.0)

    def test_bad_sigma_shape(self):
        with pytest.raises(ValueError):
            KernelSpec(target=make_std_normal(2), proposal_sd=np.array([1.0, 1.0, 1.0]))

    def test_vector_sigma_accepted(self):
        spec = KernelSpec(target=make_std_normal(2), proposal_sd=np.array([1.0, 2.0]))
        pair = make_transitions(spec)
        res = pair.coupled_step(np.zeros(2), np.ones(2), derive_stream(0, 0))
        assert res.next_x.shape == (2,)

    def test_mixture_weights_must_sum_to_one(self):
        target = make_std_normal(1)
        sub = KernelSpec(target=target, proposal_sd=1.0)
        with pytest.raises(ValueError):
            KernelSpec(target=target, kind="mixture", components=((0.5, sub), (0.4, sub)))


class TestAr1Transitions:
    def test_invariance(self):
        oracle = make_ar1_oracle(0.9, x0=10.0)
        pair = make_ar1_transitions(oracle)
        stream = derive_stream(240, 0)
        n = 3 * 10**4
        out = np.empty(n)
        for i in range(n):
            x = np.array([standard_normal(stream)])
            out[i] = pair.step(x, stream)[0]
        assert kstest(out, norm.cdf).pvalue > 0.001

    def test_coupled_faithful(self):
        pair = make_ar1_transitions(make_ar1_oracle(0.5, x0=0.0))
        res = pair.coupled_step(np.array([2.0]), np.array([2.0]), derive_stream(241, 0))
        assert res.met
