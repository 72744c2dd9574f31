import numpy as np
import pytest

from gopvi.models import ModelVariant, build_problem
from gopvi.oracle import (
    OracleConfig,
    canonical_point,
    certify_optimum,
    finite_diff_check,
    model_derivative_report,
    on_boundary,
    psd_check,
)


@pytest.fixture(scope="module")
def pm_oracle(data):
    return certify_optimum(ModelVariant("pm"), data, OracleConfig(n_starts=1000))


class TestConfig:
    def test_rejects_zero_starts(self):
        with pytest.raises(ValueError):
            OracleConfig(n_starts=0)

    def test_rejects_nonpositive_radius(self):
        with pytest.raises(ValueError):
            OracleConfig(cluster_radius=0.0)


class TestCertifyOptimum:
    def test_point_mass_optima(self, pm_oracle):
        values = [o.elbo for o in pm_oracle.optima]
        assert pm_oracle.best_elbo == pytest.approx(-84.04, abs=0.5)
        assert any(abs(v + 108.8) < 0.5 for v in values)
        assert sum(o.count for o in pm_oracle.optima) == 1000

    def test_running_best_monotone(self, pm_oracle):
        assert np.all(np.diff(pm_oracle.running_best) >= 0)
        assert pm_oracle.running_best[-1] == pm_oracle.best_elbo

    def test_saturation(self, data, pm_oracle):
        doubled = certify_optimum(ModelVariant("pm"), data, OracleConfig(n_starts=2000))
        assert doubled.best_elbo - pm_oracle.best_elbo <= 1e-6

    def test_deterministic_across_threads(self, data):
        a = certify_optimum(ModelVariant("gauss"), data, OracleConfig(n_starts=40))
        b = certify_optimum(ModelVariant("gauss"), data, OracleConfig(n_starts=40, threads=3))
        assert a.rows() == b.rows()
        assert a.best_beta.tobytes() == b.best_beta.tobytes()

    def test_best_point_reproduces_value(self, data, pm_oracle):
        problem = build_problem(ModelVariant("pm"), data)
        value = -problem.objective(pm_oracle.best_alpha, pm_oracle.best_beta)
        assert value == pytest.approx(pm_oracle.best_elbo, rel=1e-12)
        assert problem.beta.contains(pm_oracle.best_beta, atol=1e-12)

    def test_single_cluster_one_interior_optimum(self, data):
        res = certify_optimum(ModelVariant("pm", K=1), data, OracleConfig(n_starts=200))
        assert len(res.interior_optima) == 1

    def test_single_cluster_gmm_one_optimum(self, data):
        res = certify_optimum(ModelVariant("gmm", K=1), data, OracleConfig(n_starts=50))
        assert len(res.optima) == 1

    @pytest.mark.parametrize("kind,best", [("gmm", -77.2511), ("gauss", -82.7454)])
    def test_other_variants(self, data, kind, best):
        res = certify_optimum(ModelVariant(kind), data, OracleConfig(n_starts=300))
        assert res.best_elbo == pytest.approx(best, abs=1e-3)

    def test_gaussian_above_point_mass(self, data, pm_oracle):
        res = certify_optimum(ModelVariant("gauss"), data, OracleConfig(n_starts=300))
        assert res.best_elbo > pm_oracle.best_elbo


class TestCanonicalPoint:
    def test_label_switch_invariant(self):
        variant = ModelVariant("gauss")
        alpha = np.array([0.3, 0.7, 5.0, -2.0, 0.1, 0.2])
        swapped = np.array([0.7, 0.3, -2.0, 5.0, 0.2, 0.1])
        beta = np.append(np.full(8, 0.5), -0.01)
        np.testing.assert_array_equal(canonical_point(variant, alpha, beta, 4),
                                      canonical_point(variant, swapped, beta, 4))

    def test_prior_variance_appended(self):
        variant = ModelVariant("pm")
        beta = np.append(np.full(8, 0.5), -0.01)
        point = canonical_point(variant, np.array([0.5, 0.5, 1.0, 2.0]), beta, 4)
        assert point[-1] == pytest.approx(50.0)


class TestOnBoundary:
    def test_pinned_prior(self, problems):
        pr = problems["pm"]
        alpha = np.array([0.5, 0.5, 0.0, 1.0])
        beta = np.append(np.full(8, 0.5), pr.beta.lower[-1])
        assert on_boundary(pr, alpha, beta)
        beta[-1] = -0.01
        assert not on_boundary(pr, alpha, beta)


class TestFiniteDiff:
    def test_quadratic_exact(self, rng):
        points = rng.normal(size=(20, 5))
        # central differences are exact for quadratics; a wide step leaves only rounding
        report = finite_diff_check(lambda x: float(x @ x), lambda x: 2.0 * x, points, h=1e-3)
        assert report.max_error <= 1e-10

    def test_sign_flip_detected(self, rng):
        points = rng.normal(size=(10, 3)) + 5.0
        report = finite_diff_check(lambda x: float(x @ x), lambda x: -2.0 * x, points)
        assert report.max_error == pytest.approx(2.0, rel=1e-6)

    def test_worst_index(self):
        points = [np.array([0.0]), np.array([3.0])]
        report = finite_diff_check(lambda x: float(x[0] ** 2), lambda x: np.array([2.0 * x[0] + (x[0] > 1)]),
                                   points)
        assert report.worst_index == 1

    def test_bad_step(self):
        with pytest.raises(ValueError):
            finite_diff_check(lambda x: 0.0, lambda x: x, [np.zeros(1)], h=0.0)

    @pytest.mark.parametrize("kind", ["gmm", "pm", "gauss"])
    def test_model_gradients(self, data, kind):
        report = model_derivative_report(ModelVariant(kind), data, n_points=100)
        # points reach the probability floor, where the difference quotient itself is coarse
        assert report["grad_error_alpha"] <= 1e-4 and report["grad_error_beta"] <= 1e-4
        assert report["min_eig_alpha"] >= -1e-8 and report["min_eig_beta"] >= -1e-8


class TestPsdCheck:
    def test_inverse_responsibilities(self, rng):
        tau = rng.uniform(1e-6, 1.0, size=8)
        assert psd_check(np.diag(1.0 / tau))

    def test_negative_definite(self):
        assert not psd_check(-np.eye(3))

    def test_symmetrises(self):
        assert psd_check(np.array([[1.0, 2.0], [0.0, 1.0]]))

    def test_point_mass_alpha_hessian(self, problems, rng):
        from gopvi.core import random_feasible_point

        pr = problems["pm"]
        for s in range(20):
            a = random_feasible_point(pr.alpha, 2 * s)
            b = random_feasible_point(pr.beta, 2 * s + 1)
            H = pr.hess_alpha(a, b)
            tau = b[:8].reshape(4, 2)
            np.testing.assert_allclose(np.diag(H)[2:], tau.sum(0) - 2.0 * b[8], rtol=1e-12)
            assert psd_check(H)
