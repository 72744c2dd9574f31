"""Primal / relaxed-dual decomposition for biconvex programs.

Every iteration fixes ``beta``, solves the convex primal over ``alpha`` (an
upper bound plus multipliers), linearises the Lagrangian in ``alpha`` around
the primal solution and enumerates the box vertices of the variables whose
gradient depends on ``beta``. Each vertex choice defines a region of the
``beta`` box (the qualifying cuts) on which the linearisation is minimised at
that vertex; minimising its surrogate there gives a lower bound for the
region. The regions form a tree: a child inherits the cuts and surrogates of
every ancestor, so the least stored child value is a valid global lower bound.

The engine works in minimisation units (for the mixture models, the negative
ELBO).
"""
from __future__ import annotations

import enum
import itertools
import logging
import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .core import BiconvexProblem, GopError, MultiplierSet
from .kernel import (
    AffineFunction,
    ConvexFunction,
    ConvexProgram,
    LinearConstraint,
    Status,
    solve_convex,
)

log = logging.getLogger(__name__)


class InfeasibleStart(GopError, ValueError):
    pass


class PoolExhausted(GopError):
    pass


class Bound(enum.IntEnum):
    LOWER = 0
    UPPER = 1


class GopStatus(str, enum.Enum):
    CONVERGED = "converged"
    ITER_LIMIT = "iter_limit"


@dataclass(frozen=True)
class IterationLimits:
    max_iter: int = 200
    kernel_tol: float = 1e-8
    kernel_max_iter: int = 500
    threads: int = 1
    time_limit: Optional[float] = None
    polish_rounds: int = 1000
    node_bounds: bool = True

    def __post_init__(self):
        if self.max_iter < 1 or self.kernel_max_iter < 1:
            raise ValueError("iteration caps must be at least 1")
        if self.polish_rounds < 0:
            raise ValueError("polish_rounds must be non-negative")
        if self.kernel_tol <= 0:
            raise ValueError("kernel_tol must be positive")
        if self.threads < 1:
            raise ValueError("threads must be at least 1")


# ---------------------------------------------------------------------------
# linearised Lagrangian


@dataclass(frozen=True)
class BoundCombination:
    """Lower/Upper choice for every connected alpha variable, in index order."""

    connected: tuple
    assignment: tuple

    def __post_init__(self):
        if len(self.connected) != len(self.assignment):
            raise ValueError("one bound per connected variable")
        object.__setattr__(self, "assignment", tuple(Bound(b) for b in self.assignment))

    @property
    def key(self) -> tuple:
        return tuple(int(b) for b in self.assignment)

    @classmethod
    def enumerate(cls, connected) -> list:
        """All ``2**len(connected)`` combinations, lexicographic with Lower first."""
        connected = tuple(connected)
        return [cls(connected, a) for a in itertools.product((Bound.LOWER, Bound.UPPER),
                                                             repeat=len(connected))]

    def label(self) -> str:
        return "".join("LU"[b] for b in self.assignment)


@dataclass(frozen=True)
class QualifyingCut:
    """``g_j^t(beta) <= 0`` when alpha_j sits at Upper, ``>= 0`` at Lower."""

    source: tuple
    sense: str
    coeffs: np.ndarray
    const: float

    def __call__(self, beta) -> float:
        return float(self.coeffs @ beta + self.const)

    def satisfied(self, beta, atol: float = 0.0) -> bool:
        val = self(beta)
        return val <= atol if self.sense == "<=" else val >= -atol

    def as_constraint(self) -> LinearConstraint:
        return LinearConstraint(self.coeffs, self.const, self.sense)


@dataclass(frozen=True)
class LinearizedLagrange:
    """Lagrangian of iteration ``t`` linearised in alpha about ``alpha_t``.

    ``g(beta) = g_t + jac @ (beta - beta_t)`` holds exactly for the rows
    flagged in ``is_linear_in_beta``; for the others it is the linearisation
    about ``beta_t`` and is used in place of the exact gradient. ``base`` is
    the affine remainder ``L(alpha_t, beta) - E(beta)`` when the problem
    exposes its shared convex part ``E``.
    """

    t: int
    alpha_t: np.ndarray
    beta_t: np.ndarray
    multipliers: MultiplierSet
    value_t: float
    g_t: np.ndarray
    jac: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    connected: tuple
    is_linear_in_beta: np.ndarray
    problem: BiconvexProblem = field(repr=False)
    base: Optional[AffineFunction] = None

    def constant_part(self, beta) -> float:
        """``L(alpha_t, beta, lambda_t)``."""
        A, b = self.problem.alpha.equality_matrix()
        pen = float(self.multipliers.lam @ (A @ self.alpha_t - b)) if len(b) else 0.0
        return float(self.problem.objective(self.alpha_t, beta)) + pen

    def grad_coeffs(self, beta) -> np.ndarray:
        return self.g_t + self.jac @ (np.asarray(beta, float) - self.beta_t)

    def displacement(self, combo: BoundCombination) -> np.ndarray:
        """``alpha^B - alpha_t`` on the connected variables, zero elsewhere."""
        d = np.zeros_like(self.alpha_t)
        for j, b in zip(combo.connected, combo.assignment):
            d[j] = (self.upper[j] if b is Bound.UPPER else self.lower[j]) - self.alpha_t[j]
        return d

    def unconnected_offset(self) -> float:
        """Minimum of the constant gradient terms of the unconnected variables."""
        total = 0.0
        for j in range(self.alpha_t.size):
            if j in self.connected:
                continue
            g = self.g_t[j]
            total += min(g * (self.lower[j] - self.alpha_t[j]), g * (self.upper[j] - self.alpha_t[j]))
        return total

    def linear_part(self, combo: BoundCombination):
        """Coefficients and constant of ``sum_j g_j(beta) d_j`` plus the unconnected offset."""
        d = self.displacement(combo)
        coeffs = self.jac.T @ d
        const = float(self.g_t @ d - coeffs @ self.beta_t) + self.unconnected_offset()
        return coeffs, const

    def cuts(self, combo: BoundCombination) -> list:
        out = []
        for j, b in zip(combo.connected, combo.assignment):
            coeffs = self.jac[j].copy()
            const = float(self.g_t[j] - coeffs @ self.beta_t)
            out.append(QualifyingCut((self.t, j), "<=" if b is Bound.UPPER else ">=", coeffs, const))
        return out

    def region_of(self, beta, atol: float = 0.0) -> BoundCombination:
        """Region containing ``beta``; a cut within ``atol`` of zero counts as Lower."""
        g = self.grad_coeffs(beta)
        return BoundCombination(self.connected,
                                tuple(Bound.UPPER if g[j] < -atol else Bound.LOWER
                                      for j in self.connected))


def _probe_steps(space, beta):
    lo, hi = space.lower, space.upper
    h = 0.25 * (hi - lo)
    # step toward the side with room so the probe stays in the box
    return np.where(beta + h <= hi, h, -h)


def linearize(problem: BiconvexProblem, t: int, alpha_t, beta_t, multipliers: MultiplierSet,
              value_t: float, seed: int = 0, lin_tol: float = 1e-9,
              alpha_bounds=None) -> LinearizedLagrange:
    """Build the linearised Lagrangian after the primal solve of iteration ``t``.

    The beta-Jacobian of the alpha gradient is taken by forward differences
    with quarter-box steps, which is exact for affine dependence; a
    superposition probe flags the rows that are not affine.
    """
    alpha_t = np.asarray(alpha_t, float)
    beta_t = np.asarray(beta_t, float)
    A, _ = problem.alpha.equality_matrix()
    lam = multipliers.lam if len(multipliers.lam) == A.shape[0] else np.zeros(A.shape[0])

    def g(beta):
        return np.asarray(problem.grad_alpha(alpha_t, beta), float) + A.T @ lam

    g_t = g(beta_t)
    fixed_beta = problem.beta.fixed_mask()
    steps = _probe_steps(problem.beta, beta_t)
    jac = np.zeros((alpha_t.size, beta_t.size))
    for i in np.flatnonzero(~fixed_beta):
        e = beta_t.copy()
        e[i] += steps[i]
        jac[:, i] = (g(e) - g_t) / steps[i]

    rng = np.random.default_rng(seed)
    linear = np.ones(alpha_t.size, dtype=bool)
    scale = max(1.0, float(np.max(np.abs(g_t))), float(np.max(np.abs(jac), initial=0.0)))
    for _ in range(2):
        d = rng.uniform(-1.0, 1.0, beta_t.size) * np.abs(steps)
        d[fixed_beta] = 0.0
        probe = np.clip(beta_t + d, problem.beta.lower, problem.beta.upper)
        err = np.abs(g(probe) - (g_t + jac @ (probe - beta_t)))
        linear &= err <= lin_tol * scale * max(1.0, float(np.max(np.abs(probe - beta_t))))

    lo, hi = problem.alpha.effective_bounds()
    if alpha_bounds is not None:
        lo = np.minimum(np.maximum(lo, alpha_bounds[0]), alpha_t)
        hi = np.maximum(np.minimum(hi, alpha_bounds[1]), alpha_t)
    movable = hi - lo > 0
    varies = np.max(np.abs(jac), axis=1, initial=0.0) > 1e-12 * scale
    connected = tuple(int(j) for j in np.flatnonzero(varies & movable))
    if problem.connected_alpha is not None:
        extra = set(connected) - set(int(j) for j in problem.connected_alpha)
        if extra:
            raise GopError(f"alpha variables {sorted(extra)} depend on beta but are not declared")

    base = None
    part = problem.beta_convex_part
    if part is not None:
        gb = np.asarray(problem.grad_beta(alpha_t, beta_t), float) - np.asarray(part.grad(beta_t), float)
        gb[fixed_beta] = 0.0
        pen = float(lam @ (A @ alpha_t - problem.alpha.equality_matrix()[1])) if len(lam) else 0.0
        const = value_t + pen - float(part.value(beta_t)) - float(gb @ beta_t)
        base = AffineFunction(gb, const)

    lin = LinearizedLagrange(t, alpha_t, beta_t, multipliers, value_t, g_t, jac,
                             lo, hi, connected, linear, problem, base)
    if base is not None:
        # the declared split must reproduce the Lagrangian away from beta_t
        exact = lin.constant_part(probe)
        split = float(part.value(probe)) + base.value(probe)
        if abs(exact - split) > 1e-8 * max(1.0, abs(exact)):
            lin = replace(lin, base=None)
    return lin


def connected_variables(lin: LinearizedLagrange) -> tuple:
    return lin.connected


class Surrogate(ConvexFunction):
    """Callable surrogate ``beta -> L(alpha^B, beta)`` linearised about ``alpha_t``."""

    def __call__(self, beta) -> float:
        return float(self.value(np.asarray(beta, float)))


def build_cuts(lin: LinearizedLagrange, combo: BoundCombination):
    """Surrogate lower-bounding function and qualifying cuts of one combination."""
    if combo.connected != lin.connected:
        raise ValueError("bound combination does not match the connected variables")
    coeffs, const = lin.linear_part(combo)
    problem = lin.problem

    def value(beta):
        return lin.constant_part(beta) + float(coeffs @ beta) + const

    def grad(beta):
        return np.asarray(problem.grad_beta(lin.alpha_t, beta), float) + coeffs

    def hess(beta):
        return np.asarray(problem.hess_beta(lin.alpha_t, beta), float)

    return Surrogate(value, grad, hess), lin.cuts(combo)


def _split_term(lin: LinearizedLagrange, combo: BoundCombination) -> AffineFunction:
    """Affine part of the surrogate once the shared convex part is removed."""
    coeffs, const = lin.linear_part(combo)
    return AffineFunction(lin.base.coeffs + coeffs, lin.base.const + const)


# ---------------------------------------------------------------------------
# pool and state


@dataclass(frozen=True)
class PoolEntry:
    value: float
    beta: np.ndarray
    region: tuple  # ((t, combo key), ...) from the root down to this node


class SolutionPool:
    """Relaxed-dual solutions keyed by ``(T, combo key)``; ``None`` marks an empty region."""

    def __init__(self):
        self.entries: dict = {}
        self.consumed: set = set()

    def store(self, key, entry: Optional[PoolEntry]):
        if key in self.entries:
            raise KeyError(f"pool slot {key} already filled")
        self.entries[key] = entry

    def live(self) -> list:
        return [k for k, e in self.entries.items() if e is not None and k not in self.consumed]

    def argmin(self):
        """Least value; ties go to the earliest iteration, then the lexicographic combination."""
        keys = self.live()
        if not keys:
            raise PoolExhausted("no live relaxed-dual solutions left")
        return min(keys, key=lambda k: (self.entries[k].value, k))

    def consume(self, key):
        if key not in self.entries or self.entries[key] is None or key in self.consumed:
            raise KeyError(f"pool slot {key} is not live")
        self.consumed.add(key)


@dataclass
class TraceRecord:
    iter: int
    elapsed_s: float
    ubd: float
    lbd: float
    pool_live: int
    subproblems_solved: int
    beta: np.ndarray = field(default=None, repr=False)


@dataclass
class GopState:
    T: int = 0
    ubd: float = np.inf
    lbd: float = -np.inf
    beta_current: Optional[np.ndarray] = None
    region: tuple = ()
    history: list = field(default_factory=list)
    pool: SolutionPool = field(default_factory=SolutionPool)
    incumbent: Optional[tuple] = None
    trace: list = field(default_factory=list)
    null_count: int = 0
    warning_count: int = 0
    subproblems_total: int = 0


@dataclass
class GopResult:
    status: GopStatus
    alpha: np.ndarray
    beta: np.ndarray
    ubd: float
    lbd: float
    iterations: int
    trace: list
    null_count: int
    warning_count: int
    subproblems_total: int
    elapsed_s: float

    @property
    def converged(self) -> bool:
        return self.status is GopStatus.CONVERGED

    @property
    def gap(self) -> float:
        return self.ubd - self.lbd


# ---------------------------------------------------------------------------
# steps


def solve_primal(problem: BiconvexProblem, beta_t, tol: float = 1e-10):
    """Upper bound at fixed beta: ``(value, alpha_t, multipliers)``."""
    beta_t = np.asarray(beta_t, float)
    if problem.primal_closed_form is not None:
        alpha, mult = problem.primal_closed_form(beta_t)
        alpha = np.asarray(alpha, float)
        return float(problem.objective(alpha, beta_t)), alpha, mult
    program = ConvexProgram(
        problem.alpha,
        ConvexFunction(lambda a: problem.objective(a, beta_t),
                       lambda a: problem.grad_alpha(a, beta_t),
                       lambda a: problem.hess_alpha(a, beta_t)),
    )
    sol = solve_convex(program, tol=tol)
    if not sol.optimal:
        raise GopError(f"primal problem not solved: {sol.status.value}")
    n_groups = len(problem.alpha.simplex_groups)
    return float(problem.objective(sol.x_star, beta_t)), sol.x_star, MultiplierSet(sol.multipliers.lam[:n_groups])


def _beta_step(problem: BiconvexProblem, alpha):
    if problem.beta_closed_form is not None:
        return np.asarray(problem.beta_closed_form(alpha), float)
    program = ConvexProgram(
        problem.beta,
        ConvexFunction(lambda b: problem.objective(alpha, b),
                       lambda b: problem.grad_beta(alpha, b),
                       lambda b: problem.hess_beta(alpha, b)),
    )
    sol = solve_convex(program)
    return sol.x_star if sol.optimal else None


def polish_incumbent(problem: BiconvexProblem, alpha, beta, value: float, rounds: int = 1000,
                     rtol: float = 1e-13):
    """Alternate exact block minimisations from a feasible point.

    Every accepted step lowers the objective, so the result is still a
    feasible point and its value a valid upper bound.
    """
    alpha, beta = np.asarray(alpha, float).copy(), np.asarray(beta, float).copy()
    for _ in range(rounds):
        nb = _beta_step(problem, alpha)
        if nb is None:
            break
        nv, na, _ = solve_primal(problem, nb)
        if not nv < value:
            break
        gain = value - nv
        alpha, beta, value = na, nb, nv
        if gain <= rtol * max(1.0, abs(value)):
            break
    return alpha, beta, float(value)


def node_alpha_bounds(problem: BiconvexProblem, state: "GopState"):
    """Alpha box valid over the region of the node being expanded, if the problem can tell."""
    if problem.alpha_region_bounds is None:
        return None
    by_t = {lin.t: lin for lin in state.history}
    rows = [c.as_constraint() for t, key in state.region
            for c in by_t[t].cuts(BoundCombination(by_t[t].connected, key))]
    return problem.alpha_region_bounds(rows)


def select_previous_lagrange(history, beta_T, prefer=None, atol: float = 1e-9) -> list:
    """Past Lagrangians that bound the subproblems grown from ``beta_T``.

    Without ``prefer`` every past iteration contributes the region holding
    ``beta_T``, a cut within ``atol`` of zero resolving to Lower. ``prefer``
    is the path ``{t: combo key}`` of the node that produced ``beta_T``; then
    exactly those iterations contribute, with those combinations. A child has
    to cover its whole parent region, and adding the region of an iteration
    off the path would cut part of it away.
    """
    beta_T = np.asarray(beta_T, float)
    if prefer is None:
        return [(lin.t, lin.region_of(beta_T, atol)) for lin in history]
    return [(lin.t, BoundCombination(lin.connected, prefer[lin.t]))
            for lin in history if lin.t in prefer]


RETRY_FACTOR = 10


def certified_value(sol, tol: float) -> Optional[float]:
    """Lower bound on a subproblem's optimum, or None when the kernel gives none.

    Optimal solves give their value. A solve stopped early still passed
    through a centred point whose value minus its duality gap bounds the
    optimum from below; that bound is used once the gap is below ``tol``
    relative to the value.
    """
    if sol.status is Status.OPTIMAL:
        return sol.objective_value
    if sol.status is Status.ITER_LIMIT and sol.lower_bound is not None:
        if sol.gap <= tol * max(1.0, abs(sol.objective_value)):
            return sol.lower_bound
    return None


def _subproblem(problem, history_combos, lin_T, combo, x0, limits: IterationLimits):
    terms, rows = [], []
    shared = problem.beta_convex_part is not None
    for lin, c in history_combos + [(lin_T, combo)]:
        if shared:
            terms.append(_split_term(lin, c))
        else:
            terms.append(build_cuts(lin, c)[0])
        rows.extend(cut.as_constraint() for cut in lin.cuts(c))
    objective = None
    if shared:
        part = problem.beta_convex_part
        objective = ConvexFunction(part.value, part.grad, part.hess)
    program = ConvexProgram(problem.beta, objective, rows, terms)
    return solve_convex(program, x0=x0, tol=limits.kernel_tol, max_iter=limits.kernel_max_iter)


def solve_relaxed_dual_fan(state: GopState, lin_T: LinearizedLagrange, problem: BiconvexProblem,
                           limits: IterationLimits = IterationLimits()) -> int:
    """Solve one subproblem per bound combination of ``lin_T`` and store the results.

    Returns the number of subproblems solved.
    """
    by_t = {lin.t: lin for lin in state.history}
    prefer = dict(state.region)
    past = [lin for lin in state.history if lin.t < lin_T.t]
    chosen = select_previous_lagrange(past, state.beta_current, prefer)
    history_combos = [(by_t[t], c) for t, c in chosen]
    region = tuple((t, c.key) for t, c in chosen)
    combos = BoundCombination.enumerate(lin_T.connected)

    def job(combo):
        sol = _subproblem(problem, history_combos, lin_T, combo, state.beta_current, limits)
        if sol.status is Status.ITER_LIMIT and certified_value(sol, limits.kernel_tol) is None:
            retry = replace(limits, kernel_max_iter=RETRY_FACTOR * limits.kernel_max_iter)
            sol = _subproblem(problem, history_combos, lin_T, combo, state.beta_current, retry)
        return sol

    if limits.threads > 1 and len(combos) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=limits.threads) as ex:
            sols = list(ex.map(job, combos))
    else:
        sols = [job(c) for c in combos]

    for combo, sol in zip(combos, sols):
        key = (lin_T.t, combo.key)
        value = certified_value(sol, limits.kernel_tol)
        if value is not None:
            state.pool.store(key, PoolEntry(value, sol.x_star, region + ((lin_T.t, combo.key),)))
        else:
            if sol.status is not Status.INFEASIBLE:
                state.warning_count += 1
                log.warning("relaxed dual %s at iteration %d stopped: %s",
                            combo.label(), lin_T.t, sol.status.value)
            state.pool.store(key, None)
            state.null_count += 1
    state.subproblems_total += len(combos)
    return len(combos)


def update_bounds(state: GopState):
    """Take the least live pool entry: new lower bound and next beta."""
    key = state.pool.argmin()
    entry = state.pool.entries[key]
    state.pool.consume(key)
    # the least live value cannot fall; guard against kernel round-off
    state.lbd = max(state.lbd, entry.value)
    state.beta_current = entry.beta.copy()
    state.region = entry.region
    return state.lbd, state.beta_current


def gop_solve(problem: BiconvexProblem, beta1, epsilon: float = 0.01,
              limits: IterationLimits = IterationLimits(), seed: int = 0,
              callback=None) -> GopResult:
    """Run the decomposition from ``beta1`` until ``ubd - lbd <= epsilon``."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    beta1 = np.asarray(beta1, dtype=float)
    if not problem.beta.contains(beta1, atol=1e-9):
        raise InfeasibleStart("starting beta violates its bounds or simplex constraints")
    start = time.perf_counter()
    state = GopState(beta_current=problem.beta.project(beta1))
    status = GopStatus.ITER_LIMIT
    for T in range(1, limits.max_iter + 1):
        state.T = T
        p, alpha_t, mult = solve_primal(problem, state.beta_current)
        if p < state.ubd:
            a_best, b_best, p_best = polish_incumbent(problem, alpha_t, state.beta_current, p,
                                                      limits.polish_rounds)
            state.ubd = p_best
            state.incumbent = (a_best, b_best)
        ab = node_alpha_bounds(problem, state) if limits.node_bounds else None
        lin = linearize(problem, T, alpha_t, state.beta_current, mult, p, seed=seed + T,
                        alpha_bounds=ab)
        state.history.append(lin)
        solved = solve_relaxed_dual_fan(state, lin, problem, limits)
        try:
            update_bounds(state)
        except PoolExhausted:
            if state.lbd >= state.ubd - epsilon:
                status = GopStatus.CONVERGED
                break
            raise
        rec = TraceRecord(T, time.perf_counter() - start, state.ubd, state.lbd,
                          len(state.pool.live()), solved, state.beta_current.copy())
        state.trace.append(rec)
        if callback is not None:
            callback(rec)
        if state.lbd >= state.ubd - epsilon:
            status = GopStatus.CONVERGED
            break
        if limits.time_limit is not None and rec.elapsed_s > limits.time_limit:
            break
    alpha, beta = state.incumbent
    return GopResult(status, alpha, beta, state.ubd, state.lbd, state.T, state.trace,
                     state.null_count, state.warning_count, state.subproblems_total,
                     time.perf_counter() - start)
