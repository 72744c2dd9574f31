"""Multistart verification of global optima, plus derivative and convexity checks.

The oracle runs variational EM from many random starts, polishes every end
point by exact block minimisation inside the solver's bounds, and clusters the
results. Clusters are compared after sorting the components by location, so
relabelled copies of one optimum count once.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .core import central_gradient, gradient_error, min_eigenvalue
from .gop import polish_incumbent, solve_primal
from .models import (
    BoundsConfig,
    Dataset,
    ModelKind,
    ModelVariant,
    build_problem,
    floor_simplex,
    pack_beta,
)
from .vem import InitSampler, VemConfig, _map, restart_seed, vem_run


@dataclass(frozen=True)
class OracleConfig:
    n_starts: int = 1000
    polish_tol: float = 1e-13
    seed: int = 0
    cluster_radius: float = 1e-2
    polish_rounds: int = 5000
    threads: int = 1

    def __post_init__(self):
        if self.n_starts < 1:
            raise ValueError("n_starts must be at least 1")
        if self.polish_tol <= 0 or self.cluster_radius <= 0:
            raise ValueError("polish_tol and cluster_radius must be positive")
        if self.polish_rounds < 1:
            raise ValueError("polish_rounds must be at least 1")


@dataclass
class LocalOptimum:
    elbo: float
    point: np.ndarray
    count: int = 1
    first_start: int = 0
    boundary: bool = False


@dataclass
class OracleResult:
    best_elbo: float
    best_alpha: np.ndarray
    best_beta: np.ndarray
    optima: list
    running_best: np.ndarray
    n_starts: int

    def rows(self) -> list:
        """One dict per distinct optimum, best first."""
        return [{"optimum": i, "elbo": o.elbo, "count": o.count, "first_start": o.first_start,
                 "boundary": int(o.boundary)} for i, o in enumerate(self.optima)]

    @property
    def interior_optima(self) -> list:
        return [o for o in self.optima if not o.boundary]

    def summary(self) -> dict:
        return {"best_elbo": self.best_elbo, "n_starts": self.n_starts,
                "distinct_optima": len(self.optima),
                "optima": [{"elbo": o.elbo, "count": o.count, "boundary": o.boundary}
                           for o in self.optima]}


def canonical_point(variant: ModelVariant, alpha, beta, N: int) -> np.ndarray:
    """Parameters with components ordered by location: (loc, pi[, gamma][, Gamma])."""
    K = variant.K
    alpha = np.asarray(alpha, dtype=float)
    loc = alpha[K:2 * K]
    order = np.argsort(loc, kind="stable")
    parts = [loc[order], alpha[:K][order]]
    if variant.kind is ModelKind.GAUSSIAN:
        parts.append(alpha[2 * K:3 * K][order])
    if variant.bayesian:
        parts.append([-1.0 / (2.0 * float(beta[N * K]))])
    return np.concatenate(parts)


def on_boundary(problem, alpha, beta, rtol: float = 1e-9) -> bool:
    """Whether a location, variance or the prior variance sits on its box bound.

    Weights and responsibilities are excluded: their floors are routinely
    active at genuine optima.
    """
    def pinned(x, lo, hi):
        scale = np.maximum(1.0, np.abs(x))
        return bool(np.any((np.abs(x - lo) <= rtol * scale) | (np.abs(x - hi) <= rtol * scale)))

    a_sp, b_sp = problem.alpha, problem.beta
    free_a = np.ones(a_sp.dim, dtype=bool)
    for g in a_sp.simplex_groups:
        free_a[list(g)] = False
    free_b = np.ones(b_sp.dim, dtype=bool)
    for g in b_sp.simplex_groups:
        free_b[list(g)] = False
    return (pinned(alpha[free_a], a_sp.lower[free_a], a_sp.upper[free_a])
            or pinned(beta[free_b], b_sp.lower[free_b], b_sp.upper[free_b]))


def _into_bounds(problem, beta):
    space = problem.beta
    beta = np.clip(np.asarray(beta, dtype=float), space.lower, space.upper)
    delta = float(space.lower[0])
    for g in space.simplex_groups:
        idx = list(g)
        beta[idx] = floor_simplex(beta[idx] / beta[idx].sum(), delta)
    return beta


def _one_start(args):
    variant, data, problem, sampler, config, index = args
    rng = np.random.default_rng(restart_seed(config.seed, index))
    init = sampler.sample(variant, data, rng)
    res = vem_run(VemConfig(variant, seed=config.seed), data, init)
    beta = _into_bounds(problem, pack_beta(variant, res.params, res.vparams))
    value, alpha, _ = solve_primal(problem, beta)
    alpha, beta, value = polish_incumbent(problem, alpha, beta, value, config.polish_rounds,
                                          config.polish_tol)
    return index, -value, alpha, beta


def certify_optimum(variant: ModelVariant, data: Dataset, config: Optional[OracleConfig] = None,
                    bounds: Optional[BoundsConfig] = None) -> OracleResult:
    """Best ELBO over ``config.n_starts`` polished VEM runs, with the distinct optima found.

    The search lives in the same bounded space as the global solver, so its
    best value is directly comparable with the solver's bounds.
    """
    config = config or OracleConfig()
    problem = build_problem(variant, data, bounds)
    sampler = InitSampler.for_data(data, variant.K)
    jobs = [(variant, data, problem, sampler, config, i) for i in range(config.n_starts)]
    results = sorted(_map(_one_start, jobs, config.threads), key=lambda r: r[0])

    optima: list = []
    running = np.empty(len(results))
    best = None
    for pos, (index, value, alpha, beta) in enumerate(results):
        point = canonical_point(variant, alpha, beta, data.N)
        for opt in optima:
            if np.linalg.norm(opt.point - point) <= config.cluster_radius:
                opt.count += 1
                if value > opt.elbo:
                    opt.elbo, opt.point = value, point
                    opt.boundary = on_boundary(problem, alpha, beta)
                break
        else:
            optima.append(LocalOptimum(value, point, 1, index, on_boundary(problem, alpha, beta)))
        if best is None or value > best[0]:
            best = (value, alpha, beta)
        running[pos] = best[0]
    optima.sort(key=lambda o: (-o.elbo, o.first_start))
    return OracleResult(best[0], best[1], best[2], optima, running, config.n_starts)


# ---------------------------------------------------------------------------
# derivative and curvature checks


@dataclass
class FiniteDiffReport:
    max_error: float
    worst_index: int
    errors: list = field(default_factory=list)

    def __float__(self) -> float:
        return self.max_error


def finite_diff_check(f: Callable, grad: Callable, points: Sequence, h: float = 1e-6) -> FiniteDiffReport:
    """Compare ``grad`` with central differences of ``f`` at every point.

    The error at a point is ``max|g - g_fd| / max(max|g_fd|, 1)``.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    errors = [gradient_error(grad(np.asarray(x, float)), central_gradient(f, x, h)) for x in points]
    if not errors:
        return FiniteDiffReport(0.0, -1, [])
    worst = int(np.argmax(errors))
    return FiniteDiffReport(float(errors[worst]), worst, errors)


def psd_check(hessian, tol: float = 1e-8) -> bool:
    """True iff the symmetrised matrix has smallest eigenvalue at least ``-tol``."""
    return min_eigenvalue(hessian) >= -tol


def model_derivative_report(variant: ModelVariant, data: Dataset, n_points: int = 100,
                            seed: int = 0, h: float = 1e-6) -> dict:
    """Gradient errors and partial-Hessian eigenvalues at random feasible points."""
    from .core import random_feasible_point

    problem = build_problem(variant, data)
    worst_a = worst_b = 0.0
    eig_a = eig_b = np.inf
    for child in np.random.SeedSequence(seed).spawn(n_points):
        sa, sb = child.spawn(2)
        a = random_feasible_point(problem.alpha, sa, margin=10 * h)
        b = random_feasible_point(problem.beta, sb, margin=10 * h)
        worst_a = max(worst_a, finite_diff_check(lambda z: problem.objective(z, b),
                                                 lambda z: problem.grad_alpha(z, b), [a], h).max_error)
        worst_b = max(worst_b, finite_diff_check(lambda z: problem.objective(a, z),
                                                 lambda z: problem.grad_beta(a, z), [b], h).max_error)
        eig_a = min(eig_a, min_eigenvalue(problem.hess_alpha(a, b)))
        eig_b = min(eig_b, min_eigenvalue(problem.hess_beta(a, b)))
    return {"grad_error_alpha": worst_a, "grad_error_beta": worst_b,
            "min_eig_alpha": eig_a, "min_eig_beta": eig_b}


__all__ = [
    "OracleConfig",
    "OracleResult",
    "LocalOptimum",
    "canonical_point",
    "on_boundary",
    "certify_optimum",
    "FiniteDiffReport",
    "finite_diff_check",
    "psd_check",
    "model_derivative_report",
]
