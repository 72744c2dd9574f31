import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gopvi.models import Dataset, ModelParams, ModelVariant, VariationalParams, elbo, unpack
from gopvi.oracle import OracleConfig, certify_optimum
from gopvi.vem import (
    InitSampler,
    VemConfig,
    VemStatus,
    classify,
    e_step,
    elbo_kkt_residual,
    m_step,
    restart_experiment,
    restart_seed,
    vem_run,
)

PM_OPTIMUM = -84.0319


def _init(kind, data, seed, K=2):
    variant = ModelVariant(kind, K=K)
    sampler = InitSampler.for_data(data, K)
    return variant, sampler.sample(variant, data, np.random.default_rng(seed))


class TestConfig:
    def test_rejects_bad_tolerance(self):
        with pytest.raises(ValueError):
            VemConfig(ModelVariant("pm"), tol=0.0)

    def test_rejects_bad_cap(self):
        with pytest.raises(ValueError):
            VemConfig(ModelVariant("pm"), max_inner=0)

    def test_rejects_unknown_order(self):
        with pytest.raises(ValueError):
            VemConfig(ModelVariant("pm"), e_order="sideways")


class TestSampler:
    def test_shapes_and_simplexes(self, data):
        variant, (params, vparams) = _init("gauss", data, 0)
        assert params.pi.sum() == pytest.approx(1.0)
        np.testing.assert_allclose(vparams.tau.sum(axis=1), 1.0)
        assert params.eta_m < 0
        assert np.all((vparams.nu >= -10) & (vparams.nu <= 25))
        assert np.all(vparams.gamma > 0)

    def test_rejects_nonpositive_parameters(self):
        with pytest.raises(ValueError):
            InitSampler(np.array([1.0, 0.0]), 35.0, (-10.0, 25.0))
        with pytest.raises(ValueError):
            InitSampler(np.ones(2), 35.0, (1.0, 1.0))

    def test_restart_seed_stable(self):
        assert restart_seed(0, 5) == restart_seed(0, 5)
        assert restart_seed(0, 5) != restart_seed(0, 6)
        assert restart_seed(0, 5) != restart_seed(1, 5)


class TestUpdates:
    @pytest.mark.parametrize("kind", ["gmm", "pm", "gauss"])
    def test_each_update_does_not_lower_elbo(self, data, kind):
        for seed in range(20):
            variant, (params, vparams) = _init(kind, data, seed)
            before = elbo(variant, params, vparams, data)
            params = m_step(variant, params, vparams, data)
            after_m = elbo(variant, params, vparams, data)
            vparams, _ = e_step(variant, params, vparams, data)
            after_e = elbo(variant, params, vparams, data)
            assert after_m >= before - 1e-10 * max(1.0, abs(before))
            assert after_e >= after_m - 1e-10 * max(1.0, abs(after_m))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000))
    def test_tau_rows_sum_to_one(self, seed):
        data = Dataset(np.array([-10.0, -10.0, 5.0, 25.0]))
        variant, (params, vparams) = _init("pm", data, seed)
        vparams, _ = e_step(variant, params, vparams, data)
        np.testing.assert_allclose(vparams.tau.sum(axis=1), 1.0, rtol=0, atol=1e-15)

    @pytest.mark.parametrize("kind", ["pm", "gauss"])
    def test_moment_natural_duality(self, data, kind):
        variant, (params, vparams) = _init(kind, data, 3)
        new = m_step(variant, params, vparams, data)
        second = vparams.nu ** 2 + (vparams.gamma if vparams.gamma is not None else 0.0)
        assert -1.0 / (2.0 * new.eta_m) == pytest.approx(second.mean(), rel=1e-14)

    def test_gmm_m_step_weighted_means(self, data):
        variant, (params, vparams) = _init("gmm", data, 4)
        new = m_step(variant, params, vparams, data)
        tau = vparams.tau
        np.testing.assert_allclose(new.mu, (tau * data.y[:, None]).sum(0) / tau.sum(0))
        np.testing.assert_allclose(new.pi, tau.mean(0))


class TestVemRun:
    @pytest.mark.parametrize("kind", ["gmm", "pm", "gauss"])
    def test_monotone_and_stationary(self, data, kind):
        for seed in range(15):
            variant, init = _init(kind, data, seed)
            res = vem_run(VemConfig(variant), data, init)
            assert np.all(np.diff(res.trace) >= -1e-10)
            if res.converged:
                assert elbo_kkt_residual(variant, res.params, res.vparams, data) <= 1e-6

    def test_single_cluster_fixed_point(self, data):
        variant = ModelVariant("pm", K=1)
        init = (ModelParams(pi=np.ones(1), eta_m=-1.0 / (2.0 * 6.25)),
                VariationalParams(tau=np.ones((data.N, 1)), nu=np.array([2.5])))
        res = vem_run(VemConfig(variant), data, init)
        assert res.converged
        nu, eta = res.vparams.nu[0], res.params.eta_m
        assert res.params.pi[0] == 1.0
        assert nu == pytest.approx(data.y.sum() / (data.N - 2.0 * eta), rel=1e-10)
        assert eta == pytest.approx(-1.0 / (2.0 * nu ** 2), rel=1e-10)
        # the larger root of 4 nu^2 - 10 nu + 1 = 0
        assert nu == pytest.approx((10.0 + np.sqrt(84.0)) / 8.0, rel=1e-9)

    def test_fixed_point_takes_one_iteration(self, data):
        variant = ModelVariant("pm", K=1)
        nu = (10.0 + np.sqrt(84.0)) / 8.0
        init = (ModelParams(pi=np.ones(1), eta_m=-1.0 / (2.0 * nu ** 2)),
                VariationalParams(tau=np.ones((data.N, 1)), nu=np.array([nu])))
        res = vem_run(VemConfig(variant), data, init)
        assert res.converged and res.iterations == 1

    def test_collapse_flagged_diverged(self):
        data = Dataset(np.array([-1.0, 1.0]))
        variant = ModelVariant("pm", K=1)
        init = (ModelParams(pi=np.ones(1), eta_m=-0.5),
                VariationalParams(tau=np.ones((2, 1)), nu=np.array([0.3])))
        res = vem_run(VemConfig(variant), data, init)
        assert res.status is VemStatus.DIVERGED
        assert np.isfinite(res.elbo)

    def test_max_iterations_flagged(self, data):
        variant, init = _init("pm", data, 0)
        res = vem_run(VemConfig(variant, max_outer=1), data, init)
        assert res.status is VemStatus.MAX_ITERATIONS and res.iterations == 1

    def test_at_global_optimum_stays_global(self, data):
        variant = ModelVariant("pm")
        best = certify_optimum(variant, data, OracleConfig(n_starts=100))
        init = unpack(variant, best.best_alpha, best.best_beta, data.N)
        res = vem_run(VemConfig(variant), data, init)
        assert classify(res.elbo, best.best_elbo) == "Global"


class TestClassify:
    def test_threshold(self):
        assert classify(-84.5, -84.0) == "Global"
        assert classify(-108.8, -84.0) == "Local"
        assert classify(float("nan"), -84.0) == "Local"


@pytest.fixture(scope="module")
def report(data):
    return restart_experiment(VemConfig(ModelVariant("pm")), data, 100, reference=PM_OPTIMUM)


class TestRestartExperiment:
    def test_local_majority_and_both_basins(self, report):
        counts = report.counts
        assert counts["Local"] >= 50 and counts["Global"] >= 1
        assert counts["Local"] + counts["Global"] == 100

    def test_algorithm_box_order_mostly_global(self, data):
        # refreshing tau from the random locations first lands in the global basin more often
        report = restart_experiment(VemConfig(ModelVariant("pm"), e_order="tau_first"), data, 100,
                                    reference=PM_OPTIMUM)
        assert report.counts["Global"] > report.counts["Local"]

    def test_local_optimum_value(self, report):
        assert report.near(-108.86, 0.5) >= 50

    def test_threshold_insensitive(self, data, report):
        for threshold in (0.5, 2.0):
            again = restart_experiment(VemConfig(ModelVariant("pm")), data, 100,
                                       reference=PM_OPTIMUM, threshold=threshold)
            assert again.counts == report.counts

    def test_deterministic_across_threads(self, data, report):
        again = restart_experiment(VemConfig(ModelVariant("pm")), data, 100,
                                   reference=PM_OPTIMUM, threads=3)
        assert again.rows == report.rows

    def test_rejects_zero_restarts(self, data):
        with pytest.raises(ValueError):
            restart_experiment(VemConfig(ModelVariant("pm")), data, 0, reference=PM_OPTIMUM)
