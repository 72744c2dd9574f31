"""Biconvex program definition shared by the kernel, engine and models.

A problem is split into two variable blocks, ``alpha`` and ``beta``. Each block
lives in a :class:`VariableSpace`: a finite box plus disjoint simplex groups
(index sets whose entries must sum to one). The objective must be convex in
each block when the other is held fixed.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import brentq


class GopError(Exception):
    """Base class for solver errors."""


class NonBiconvex(GopError):
    pass


class GradientMismatch(GopError):
    pass


class DomainError(GopError, ValueError):
    pass


class InvalidSpace(GopError, ValueError):
    pass


@dataclass(frozen=True)
class VariableSpace:
    names: tuple
    lower: np.ndarray
    upper: np.ndarray
    simplex_groups: tuple = ()

    def __init__(self, names, lower, upper, simplex_groups=()):
        lower = np.array(lower, dtype=float)
        upper = np.array(upper, dtype=float)
        groups = tuple(tuple(int(i) for i in g) for g in simplex_groups)
        object.__setattr__(self, "names", tuple(names))
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "simplex_groups", groups)
        lower.setflags(write=False)
        upper.setflags(write=False)
        self._validate()

    def _validate(self):
        n = len(self.names)
        if self.lower.shape != (n,) or self.upper.shape != (n,):
            raise InvalidSpace("bounds must have one entry per variable name")
        if not (np.all(np.isfinite(self.lower)) and np.all(np.isfinite(self.upper))):
            raise InvalidSpace("bounds must be finite")
        if np.any(self.lower >= self.upper):
            raise InvalidSpace("lower bounds must be strictly below upper bounds")
        seen = set()
        for g in self.simplex_groups:
            if not g:
                raise InvalidSpace("empty simplex group")
            for i in g:
                if i < 0 or i >= n:
                    raise InvalidSpace(f"simplex index {i} out of range")
                if i in seen:
                    raise InvalidSpace(f"simplex groups overlap at index {i}")
                seen.add(i)
            lo, hi = self.lower[list(g)], self.upper[list(g)]
            if np.any(lo < 0):
                raise InvalidSpace("simplex group members need non-negative lower bounds")
            if lo.sum() > 1.0 + 1e-12 or hi.sum() < 1.0 - 1e-12:
                raise InvalidSpace("simplex group cannot sum to one inside its box")

    @property
    def dim(self) -> int:
        return len(self.names)

    def equality_matrix(self):
        """Rows ``A`` and right-hand side ``b`` with ``A @ x == b`` for the simplex groups."""
        A = np.zeros((len(self.simplex_groups), self.dim))
        for r, g in enumerate(self.simplex_groups):
            A[r, list(g)] = 1.0
        return A, np.ones(len(self.simplex_groups))

    def effective_bounds(self):
        """Box bounds tightened by the simplex constraints.

        A member of a simplex group cannot exceed one minus the lower bounds of
        its siblings, nor fall below one minus their upper bounds.
        """
        lo, hi = self.lower.copy(), self.upper.copy()
        for g in self.simplex_groups:
            idx = list(g)
            slo, shi = lo[idx].sum(), hi[idx].sum()
            for i in idx:
                lo_i = max(lo[i], 1.0 - (shi - hi[i]))
                hi_i = min(hi[i], 1.0 - (slo - lo[i]))
                lo[i], hi[i] = lo_i, hi_i
        return lo, hi

    def fixed_mask(self, atol: float = 1e-14) -> np.ndarray:
        lo, hi = self.effective_bounds()
        return hi - lo <= atol

    def contains(self, x, atol: float = 1e-9) -> bool:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            return False
        if np.any(x < self.lower - atol) or np.any(x > self.upper + atol):
            return False
        return all(abs(x[list(g)].sum() - 1.0) <= atol for g in self.simplex_groups)

    def center(self) -> np.ndarray:
        """A point in the relative interior (box midpoint projected onto the groups)."""
        return self.project(0.5 * (self.lower + self.upper))

    def project(self, x) -> np.ndarray:
        """Euclidean projection onto the box intersected with every simplex group."""
        x = np.clip(np.asarray(x, dtype=float), self.lower, self.upper)
        for g in self.simplex_groups:
            idx = list(g)
            x[idx] = project_box_simplex(x[idx], self.lower[idx], self.upper[idx])
        return x


def project_box_simplex(z, lo, hi) -> np.ndarray:
    """Project ``z`` onto ``{lo <= x <= hi, sum(x) == 1}`` by bisection on the shift."""
    z = np.asarray(z, dtype=float)
    if z.size == 1:
        return np.ones(1)

    def excess(theta):
        return np.clip(z - theta, lo, hi).sum() - 1.0

    a = np.min(z - hi) - 1.0
    b = np.max(z - lo) + 1.0
    theta = brentq(excess, a, b, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
    x = np.clip(z - theta, lo, hi)
    # spread the residual over the free coordinates
    resid = 1.0 - x.sum()
    free = (x > lo) & (x < hi)
    if resid != 0.0 and free.any():
        x[free] += resid / free.sum()
    return x


@dataclass(frozen=True)
class MultiplierSet:
    lam: np.ndarray
    mu: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        object.__setattr__(self, "lam", np.atleast_1d(np.asarray(self.lam, dtype=float)))
        object.__setattr__(self, "mu", np.atleast_1d(np.asarray(self.mu, dtype=float)))
        if np.any(self.mu < 0):
            raise ValueError("inequality multipliers must be non-negative")


@dataclass(frozen=True)
class AffineConstraint:
    """``coeffs @ x == rhs`` on a single block ('alpha' or 'beta')."""

    block: str
    coeffs: np.ndarray
    rhs: float

    def __call__(self, x) -> float:
        return float(np.dot(self.coeffs, x) - self.rhs)


Evaluator = Callable[[np.ndarray, np.ndarray], object]


@dataclass(frozen=True)
class SmoothTerm:
    """Convex function of one block with its gradient and Hessian."""

    value: Callable
    grad: Callable
    hess: Optional[Callable] = None


@dataclass(frozen=True)
class BiconvexProblem:
    """Callback bundle for ``min f(alpha, beta)`` over ``alpha in A, beta in B``.

    ``primal_closed_form(beta)`` may return ``(alpha_star, MultiplierSet)`` when
    the alpha-block minimiser is known analytically. ``connected_alpha`` lists
    the alpha indices whose partial derivative depends on beta, when known.

    ``beta_convex_part`` is an optional :class:`SmoothTerm` ``E(beta)`` such that
    ``f(alpha, beta) - E(beta)`` is affine in beta for every alpha. When given,
    the engine keeps ``E`` as the objective of every relaxed-dual subproblem
    and turns each Lagrange bound into a linear row.

    ``alpha_region_bounds(rows)`` may return ``(lower, upper)`` boxes that hold
    the alpha-block minimiser for every beta of the polytope cut out of the
    beta space by ``rows`` (linear constraints), or ``None`` if it is empty.
    ``beta_closed_form(alpha)`` may return the beta-block minimiser.
    """

    alpha: VariableSpace
    beta: VariableSpace
    objective: Evaluator
    grad_alpha: Evaluator
    grad_beta: Evaluator
    hess_alpha: Evaluator
    hess_beta: Evaluator
    primal_closed_form: Optional[Callable] = None
    connected_alpha: Optional[Sequence[int]] = None
    beta_convex_part: Optional[SmoothTerm] = None
    alpha_region_bounds: Optional[Callable] = None
    beta_closed_form: Optional[Callable] = None
    name: str = "problem"

    @property
    def equality_constraints(self) -> list:
        out = []
        for block, space in (("alpha", self.alpha), ("beta", self.beta)):
            A, b = space.equality_matrix()
            out.extend(AffineConstraint(block, A[r], b[r]) for r in range(len(b)))
        return out

    def alpha_constraint_matrix(self):
        return self.alpha.equality_matrix()


def random_feasible_point(space: VariableSpace, seed, margin: float = 0.0) -> np.ndarray:
    """Draw a point of ``space``; deterministic in ``seed``.

    Free coordinates are uniform in the box, simplex groups start from a flat
    Dirichlet draw and are projected into the box. ``margin`` keeps the point
    that far inside every bound that allows it.
    """
    rng = np.random.default_rng(seed)
    lo, hi = space.lower.astype(float), space.upper.astype(float)
    if margin > 0:
        shrink = np.minimum(margin, 0.25 * (hi - lo))
        lo, hi = lo + shrink, hi - shrink
    x = rng.uniform(lo, hi)
    for g in space.simplex_groups:
        idx = list(g)
        w = rng.dirichlet(np.ones(len(idx)))
        glo, ghi = lo[idx], hi[idx]
        if glo.sum() > 1.0 or ghi.sum() < 1.0:
            glo, ghi = space.lower[idx], space.upper[idx]
        x[idx] = project_box_simplex(w, glo, ghi)
    return x


@dataclass
class ValidationReport:
    n_probe: int
    max_grad_error: float
    min_eig_alpha: float
    min_eig_beta: float
    slater_point: Optional[tuple]

    @property
    def slater_ok(self) -> bool:
        return self.slater_point is not None


def central_gradient(fun, x, h: float = 1e-6) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (fun(xp) - fun(xm)) / (2 * h)
    return g


def gradient_error(exact, approx) -> float:
    """``max|exact - approx| / max(max|approx|, 1)``."""
    exact, approx = np.asarray(exact, float), np.asarray(approx, float)
    return float(np.max(np.abs(exact - approx)) / max(np.max(np.abs(approx)), 1.0))


def _strictly_interior(space: VariableSpace) -> Optional[np.ndarray]:
    x = space.center()
    fixed = space.fixed_mask()
    inside = (x > space.lower) & (x < space.upper)
    return x if np.all(inside | fixed) else None


def validate_problem(problem: BiconvexProblem, n_probe: int = 100, seed: int = 0,
                     h: float = 1e-6, eig_tol: float = 1e-6,
                     grad_tol: float = 1e-3) -> ValidationReport:
    """Probe biconvexity, gradients and Slater's condition at random points."""
    ss = np.random.SeedSequence(seed)
    worst_grad, eig_a, eig_b = 0.0, np.inf, np.inf
    for child in ss.spawn(n_probe):
        sa, sb = child.spawn(2)
        a = random_feasible_point(problem.alpha, sa, margin=1e-3)
        b = random_feasible_point(problem.beta, sb, margin=1e-3)
        ga = central_gradient(lambda z: problem.objective(z, b), a, h)
        gb = central_gradient(lambda z: problem.objective(a, z), b, h)
        worst_grad = max(worst_grad,
                         gradient_error(problem.grad_alpha(a, b), ga),
                         gradient_error(problem.grad_beta(a, b), gb))
        eig_a = min(eig_a, min_eigenvalue(problem.hess_alpha(a, b)))
        eig_b = min(eig_b, min_eigenvalue(problem.hess_beta(a, b)))
    if min(eig_a, eig_b) < -eig_tol:
        raise NonBiconvex(f"partial Hessian has eigenvalue {min(eig_a, eig_b):.3g}")
    if worst_grad > grad_tol:
        raise GradientMismatch(f"gradient relative error {worst_grad:.3g}")
    wa, wb = _strictly_interior(problem.alpha), _strictly_interior(problem.beta)
    slater = (wa, wb) if wa is not None and wb is not None else None
    return ValidationReport(n_probe, worst_grad, eig_a, eig_b, slater)


def min_eigenvalue(H) -> float:
    H = np.atleast_2d(np.asarray(H, dtype=float))
    if H.size == 0:
        return np.inf
    return float(np.linalg.eigvalsh(0.5 * (H + H.T))[0])
