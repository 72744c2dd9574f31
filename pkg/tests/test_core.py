import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gopvi.core import (
    BiconvexProblem,
    GradientMismatch,
    InvalidSpace,
    MultiplierSet,
    NonBiconvex,
    VariableSpace,
    central_gradient,
    gradient_error,
    min_eigenvalue,
    project_box_simplex,
    random_feasible_point,
    validate_problem,
)


def _bilinear(scale_grad=1.0, hess_sign=0.0):
    space = VariableSpace(["a"], [-1.0], [1.0])
    bspace = VariableSpace(["b"], [-1.0], [1.0])
    return BiconvexProblem(
        alpha=space,
        beta=bspace,
        objective=lambda a, b: float(a[0] * b[0] + 0.5 * hess_sign * a[0] ** 2),
        grad_alpha=lambda a, b: np.array([scale_grad * b[0] + hess_sign * a[0]]),
        grad_beta=lambda a, b: np.array([a[0]]),
        hess_alpha=lambda a, b: np.array([[hess_sign]]),
        hess_beta=lambda a, b: np.zeros((1, 1)),
    )


class TestVariableSpace:
    def test_rejects_inverted_bounds(self):
        with pytest.raises(InvalidSpace):
            VariableSpace(["x"], [1.0], [0.0])

    def test_rejects_infinite_bounds(self):
        with pytest.raises(InvalidSpace):
            VariableSpace(["x"], [0.0], [np.inf])

    def test_rejects_overlapping_groups(self):
        with pytest.raises(InvalidSpace):
            VariableSpace(["x", "y", "z"], [0] * 3, [1] * 3, [[0, 1], [1, 2]])

    def test_rejects_infeasible_group(self):
        with pytest.raises(InvalidSpace):
            VariableSpace(["x", "y"], [0.6, 0.6], [1, 1], [[0, 1]])

    def test_rejects_negative_simplex_bound(self):
        with pytest.raises(InvalidSpace):
            VariableSpace(["x", "y"], [-0.1, 0.0], [1, 1], [[0, 1]])

    def test_effective_bounds_tighten_group(self):
        s = VariableSpace(["x", "y"], [0.3, 0.0], [1.0, 1.0], [[0, 1]])
        lo, hi = s.effective_bounds()
        np.testing.assert_allclose(hi, [1.0, 0.7])
        np.testing.assert_allclose(lo, [0.3, 0.0])

    def test_singleton_group_is_fixed(self):
        s = VariableSpace(["p"], [1e-6], [1.0], [[0]])
        assert s.fixed_mask().tolist() == [True]

    def test_equality_matrix(self):
        s = VariableSpace(list("abcd"), [0] * 4, [1] * 4, [[0, 1], [2, 3]])
        A, b = s.equality_matrix()
        np.testing.assert_array_equal(A, [[1, 1, 0, 0], [0, 0, 1, 1]])
        np.testing.assert_array_equal(b, [1, 1])


class TestRandomFeasiblePoint:
    def test_two_simplex_sums_to_one(self):
        s = VariableSpace(["x", "y"], [0, 0], [1, 1], [[0, 1]])
        x = random_feasible_point(s, 3)
        assert abs(x.sum() - 1.0) <= 1e-12
        assert s.contains(x)

    def test_deterministic(self):
        s = VariableSpace(["x", "y", "e"], [0, 0, -50], [1, 1, -1e-4], [[0, 1]])
        np.testing.assert_array_equal(random_feasible_point(s, 9), random_feasible_point(s, 9))

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=50, deadline=None)
    def test_eta_dimension_stays_in_box(self, seed):
        s = VariableSpace(["eta"], [-50.0], [-1e-4])
        x = random_feasible_point(s, seed)
        assert -50.0 <= x[0] <= -1e-4

    @given(st.integers(0, 10_000), st.integers(1, 5), st.integers(1, 4))
    @settings(max_examples=60, deadline=None)
    def test_groups_and_box(self, seed, n_groups, width):
        n = n_groups * width
        s = VariableSpace([f"v{i}" for i in range(n)], [1e-6] * n, [1.0] * n,
                          [range(g * width, (g + 1) * width) for g in range(n_groups)])
        x = random_feasible_point(s, seed)
        assert np.all(x >= s.lower) and np.all(x <= s.upper)
        for g in s.simplex_groups:
            assert abs(x[list(g)].sum() - 1.0) <= 1e-12


class TestProjection:
    @given(st.lists(st.floats(-5, 5), min_size=2, max_size=6))
    @settings(max_examples=100, deadline=None)
    def test_box_simplex_projection_is_feasible_and_optimal(self, z):
        z = np.array(z)
        lo, hi = np.full(z.size, 0.01), np.ones(z.size)
        x = project_box_simplex(z, lo, hi)
        assert abs(x.sum() - 1.0) <= 1e-12
        assert np.all(x >= lo - 1e-15) and np.all(x <= hi + 1e-15)
        # no feasible random point is closer to z
        rng = np.random.default_rng(0)
        for _ in range(20):
            y = project_box_simplex(rng.dirichlet(np.ones(z.size)), lo, hi)
            assert np.linalg.norm(x - z) <= np.linalg.norm(y - z) + 1e-9


class TestMultiplierSet:
    def test_negative_mu_rejected(self):
        with pytest.raises(ValueError):
            MultiplierSet(lam=[0.0], mu=[-1.0])


class TestDerivativeHelpers:
    def test_central_gradient_of_quadratic(self):
        g = central_gradient(lambda x: float(x @ x), np.array([1.0, -2.0]))
        np.testing.assert_allclose(g, [2.0, -4.0], atol=1e-8)

    def test_gradient_error_sign_flip(self):
        assert gradient_error(np.array([-3.0, 4.0]), np.array([3.0, -4.0])) == pytest.approx(2.0)

    def test_min_eigenvalue_symmetrises(self):
        assert min_eigenvalue([[1.0, 2.0], [0.0, 1.0]]) == pytest.approx(0.0)


class TestValidateProblem:
    def test_bilinear_is_biconvex(self):
        report = validate_problem(_bilinear(), n_probe=20)
        assert report.min_eig_alpha == 0.0 and report.min_eig_beta == 0.0
        assert report.slater_ok

    def test_concave_block_rejected(self):
        with pytest.raises(NonBiconvex):
            validate_problem(_bilinear(hess_sign=-1.0), n_probe=5)

    def test_wrong_gradient_rejected(self):
        with pytest.raises(GradientMismatch):
            validate_problem(_bilinear(scale_grad=-1.0), n_probe=5)

    def test_point_mass_model(self, problems):
        report = validate_problem(problems["pm"], n_probe=100)
        assert report.min_eig_alpha >= -1e-8 and report.min_eig_beta >= -1e-8

    def test_gaussian_model_gradients(self, problems):
        report = validate_problem(problems["gauss"], n_probe=100)
        assert report.max_grad_error <= 1e-4

    def test_equality_constraints_are_affine(self, problems):
        rng = np.random.default_rng(1)
        for con in problems["pm"].equality_constraints:
            x, y = rng.normal(size=con.coeffs.size), rng.normal(size=con.coeffs.size)
            h0 = con(np.zeros_like(x))
            assert con(x + y) - h0 == pytest.approx((con(x) - h0) + (con(y) - h0))
