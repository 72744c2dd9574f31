"""Small dense convex solvers over a box intersected with simplex groups.

``solve_convex`` is a primal log-barrier method with equality-constrained
Newton centring. A strictly interior start comes from a phase-one LP that
maximises the slack of every linear row at once. ``solve_lp`` hands affine
programs to HiGHS so that it returns vertex solutions.

Multiplier layout in :class:`KernelSolution`: ``lam`` holds one entry per
simplex group; ``mu`` is ``[box lower (n), box upper (n), linear rows (m),
epigraph rows (r)]``. Rows given with ``sense='>='`` are negated internally, so
their multipliers are still non-negative.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy.optimize import linprog, nnls

from .core import MultiplierSet, VariableSpace


# normalised slack below which a feasible set counts as having no interior
PHASE_ONE_MARGIN = 1e-7
EPS = np.finfo(float).eps


class Status(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    ITER_LIMIT = "iter_limit"
    UNBOUNDED = "unbounded"


@dataclass(frozen=True)
class ConvexFunction:
    """Smooth convex scalar function; ``hess=None`` means a zero Hessian."""

    value: Callable
    grad: Callable
    hess: Optional[Callable] = None


@dataclass(frozen=True)
class AffineFunction:
    coeffs: np.ndarray
    const: float = 0.0

    def value(self, x):
        return float(np.dot(self.coeffs, x) + self.const)

    def grad(self, x):
        return np.asarray(self.coeffs, dtype=float)

    hess = None


@dataclass(frozen=True)
class LinearConstraint:
    """``coeffs @ x + offset <= 0`` (sense '<=') or ``>= 0`` (sense '>=')."""

    coeffs: np.ndarray
    offset: float = 0.0
    sense: str = "<="

    def __post_init__(self):
        if self.sense not in ("<=", ">="):
            raise ValueError("sense must be '<=' or '>='")
        if not np.all(np.isfinite(self.coeffs)) or not np.isfinite(self.offset):
            raise ValueError("linear constraint coefficients must be finite")


Term = Union[ConvexFunction, AffineFunction]


@dataclass(frozen=True)
class ConvexProgram:
    """``min objective(x) [+ v]`` over ``space``, the linear rows and, when
    ``epigraph_terms`` is non-empty, ``v >= c_r(x)`` for every term."""

    space: VariableSpace
    objective: Optional[Term] = None
    linear_inequalities: Sequence[LinearConstraint] = ()
    epigraph_terms: Sequence[Term] = ()

    @property
    def epigraph(self) -> bool:
        return len(self.epigraph_terms) > 0


@dataclass
class KernelSolution:
    x_star: np.ndarray
    objective_value: float
    multipliers: MultiplierSet
    status: Status
    kkt_residual: float
    v: Optional[float] = None
    iterations: int = 0
    history: list = field(default_factory=list)
    # barrier duality-gap bound m/t at the last centred point, and the objective
    # there minus that gap: a lower bound on the optimum; None when never centred
    gap: Optional[float] = None
    lower_bound: Optional[float] = None

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL


def project_simplex(v) -> np.ndarray:
    """Euclidean projection onto ``{x >= 0, sum(x) = 1}`` (sort and threshold)."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ind = np.arange(1, v.size + 1)
    rho = ind[u - css / ind > 0][-1]
    x = np.maximum(v - css[rho - 1] / rho, 0.0)
    # exact renormalisation of the support
    support = x > 0
    x[support] += (1.0 - x.sum()) / support.sum()
    return x


# ---------------------------------------------------------------------------
# problem reduction


class _Reduced:
    """Fixed coordinates removed; everything else as dense arrays.

    Internal variable vector is ``z = [x_free, (v)]``.
    """

    def __init__(self, program: ConvexProgram):
        space = program.space
        self.program = program
        self.n = space.dim
        fixed = space.fixed_mask()
        lo_eff, _ = space.effective_bounds()
        self.free = np.flatnonzero(~fixed)
        self.x_fixed = np.where(fixed, lo_eff, 0.0)
        self.nf = self.free.size
        self.epi = program.epigraph
        self.nz = self.nf + (1 if self.epi else 0)

        A, b = space.equality_matrix()
        b = b - A[:, fixed] @ self.x_fixed[fixed]
        A = A[:, self.free]
        keep = np.any(A != 0, axis=1)
        self.A = np.hstack([A[keep], np.zeros((keep.sum(), self.nz - self.nf))])
        self.b = b[keep]
        self.group_rows = np.flatnonzero(keep)
        self.n_groups = len(space.simplex_groups)

        rows, rhs = [], []
        for c in program.linear_inequalities:
            a = np.asarray(c.coeffs, dtype=float)
            off = float(c.offset)
            if c.sense == ">=":
                a, off = -a, -off
            rows.append(a)
            rhs.append(-off)
        G = np.array(rows).reshape(len(rows), self.n)
        h = np.array(rhs, dtype=float)
        h = h - G[:, fixed] @ self.x_fixed[fixed]
        self.G_lin = G[:, self.free]
        self.h_lin = h
        self.m_lin = len(rows)

        self.affine_terms, self.smooth_terms = [], []
        for r, term in enumerate(program.epigraph_terms):
            (self.affine_terms if isinstance(term, AffineFunction) else self.smooth_terms).append(r)
        # affine epigraph rows: a.x + c - v <= 0
        Ge = np.zeros((len(self.affine_terms), self.nz))
        he = np.zeros(len(self.affine_terms))
        for i, r in enumerate(self.affine_terms):
            term = program.epigraph_terms[r]
            a = np.asarray(term.coeffs, dtype=float)
            Ge[i, : self.nf] = a[self.free]
            Ge[i, -1] = -1.0
            he[i] = -(term.const + a[fixed] @ self.x_fixed[fixed])
        lo, hi = space.lower[self.free], space.upper[self.free]
        eye = np.eye(self.nf, self.nz)
        Glin = np.hstack([self.G_lin, np.zeros((self.m_lin, self.nz - self.nf))])
        self.G = np.vstack([-eye, eye, Glin, Ge])
        self.h = np.concatenate([-lo, hi, self.h_lin, he])

    def expand(self, z) -> np.ndarray:
        x = self.x_fixed.copy()
        x[self.free] = z[: self.nf]
        return x

    # objective part f0(z) = objective(x) [+ v]
    def f0(self, z):
        x = self.expand(z)
        obj = self.program.objective
        val = obj.value(x) if obj is not None else 0.0
        return val + (z[-1] if self.epi else 0.0)

    def f0_derivs(self, z):
        x = self.expand(z)
        g = np.zeros(self.nz)
        H = np.zeros((self.nz, self.nz))
        obj = self.program.objective
        if obj is not None:
            g[: self.nf] = np.asarray(obj.grad(x))[self.free]
            if obj.hess is not None:
                H[: self.nf, : self.nf] = np.asarray(obj.hess(x))[np.ix_(self.free, self.free)]
        if self.epi:
            g[-1] = 1.0
        return g, H

    # smooth epigraph rows: c_r(x) - v <= 0
    def smooth_values(self, z):
        x = self.expand(z)
        return np.array([self.program.epigraph_terms[r].value(x) - z[-1] for r in self.smooth_terms])

    def smooth_derivs(self, z):
        x = self.expand(z)
        grads, hessians = [], []
        for r in self.smooth_terms:
            term = self.program.epigraph_terms[r]
            g = np.zeros(self.nz)
            g[: self.nf] = np.asarray(term.grad(x))[self.free]
            g[-1] = -1.0
            grads.append(g)
            H = np.zeros((self.nz, self.nz))
            if term.hess is not None:
                H[: self.nf, : self.nf] = np.asarray(term.hess(x))[np.ix_(self.free, self.free)]
            hessians.append(H)
        return grads, hessians


# ---------------------------------------------------------------------------
# phase one


def _phase_one(red: _Reduced, x0, margin_tol: float):
    """Strictly interior point of the linear rows, or ``None`` when the interior is empty."""
    space = red.program.space
    nf = red.nf
    lo, hi = space.lower[red.free], space.upper[red.free]
    z0 = space.project(x0)[red.free] if x0 is not None else space.center()[red.free]
    if red.m_lin == 0:
        inside = np.all(z0 > lo) and np.all(z0 < hi)
        return z0 if inside else space.center()[red.free]
    G = red.G_lin
    norms = np.maximum(np.abs(G).max(axis=1), 1e-300)
    Gn, hn = G / norms[:, None], red.h_lin / norms
    if np.all(Gn @ z0 < hn - margin_tol) and np.all(z0 > lo) and np.all(z0 < hi):
        return z0
    width = hi - lo
    # variables [z, s]; maximise s
    c = np.zeros(nf + 1)
    c[-1] = -1.0
    A_ub = np.vstack([
        np.hstack([Gn, np.ones((red.m_lin, 1))]),
        np.hstack([-np.eye(nf), width[:, None]]),
        np.hstack([np.eye(nf), width[:, None]]),
    ])
    b_ub = np.concatenate([hn, -lo, hi])
    A_eq = np.hstack([red.A[:, :nf], np.zeros((red.A.shape[0], 1))]) if red.A.size else None
    b_eq = red.b if red.A.size else None
    bounds = [(l, u) for l, u in zip(lo, hi)] + [(None, 1.0)]
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds, method="highs")
    if res.status != 0 or -res.fun <= margin_tol:
        return None
    return res.x[:nf]


# ---------------------------------------------------------------------------
# barrier method


def _kkt_solve(H, g, A):
    """Newton step and equality multipliers from the KKT system.

    Barrier Hessians near the end of a solve mix curvatures many orders of
    magnitude apart, so the system is equilibrated by the Hessian diagonal
    and refined once before use.
    """
    n = H.shape[0]
    p = A.shape[0]
    d = 1.0 / np.sqrt(np.maximum(np.abs(np.diag(H)), np.finfo(float).tiny))
    K = np.zeros((n + p, n + p))
    K[:n, :n] = H * d[:, None] * d[None, :]
    K[:n, n:] = (A * d[None, :]).T
    K[n:, :n] = A * d[None, :]
    rhs = np.concatenate([-g * d, np.zeros(p)])
    try:
        sol = np.linalg.solve(K, rhs)
        sol += np.linalg.solve(K, rhs - K @ sol)
    except np.linalg.LinAlgError:
        sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    return sol[:n] * d, sol[n:]


def _barrier_parts(red: _Reduced, z):
    """Values of all inequality rows (linear then smooth); all must be < 0."""
    lin = red.G @ z - red.h
    smooth = red.smooth_values(z) if red.smooth_terms else np.zeros(0)
    return lin, smooth


def _strictly_feasible(red: _Reduced, z) -> bool:
    lin = red.G @ z - red.h
    if not np.all(lin < 0):
        return False
    if red.smooth_terms:
        try:
            with np.errstate(all="ignore"):
                s = red.smooth_values(z)
        except (ValueError, FloatingPointError):
            return False
        return bool(np.all(np.isfinite(s)) and np.all(s < 0))
    return True


def _psi(red, z, t):
    lin, smooth = _barrier_parts(red, z)
    return t * red.f0(z) - np.sum(np.log(-lin)) - np.sum(np.log(-smooth))


def solve_convex(program: ConvexProgram, x0=None, tol: float = 1e-8,
                 max_iter: int = 500, mu: float = 20.0) -> KernelSolution:
    """Minimise a smooth convex program; see the module docstring for layout."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    red = _Reduced(program)
    z_x = _phase_one(red, x0, PHASE_ONE_MARGIN)
    if z_x is None:
        return _failed(red, Status.INFEASIBLE)
    z = z_x
    if red.epi:
        x = red.expand(np.append(z_x, 0.0))
        top = max(program.epigraph_terms[r].value(x) for r in range(len(program.epigraph_terms)))
        z = np.append(z_x, top + 1.0)
    if not _strictly_feasible(red, z):
        # slack below the LP solver's own feasibility tolerance
        return _failed(red, Status.INFEASIBLE)
    m = red.G.shape[0] + len(red.smooth_terms)
    t = max(1.0, m / max(1.0, abs(red.f0(z)))) if m else 1.0
    history = []
    total = 0
    status = Status.ITER_LIMIT
    w = np.zeros(red.A.shape[0])
    centred_gap = centred_bound = None
    while total < max_iter:
        z, w, steps, ok = _centre(red, z, t, max_iter - total)
        total += steps
        if not ok:
            break
        history.append(red.f0(z))
        centred_gap = m / t
        centred_bound = history[-1] - centred_gap
        if m / t <= tol:
            status = Status.OPTIMAL
            break
        t *= mu
    sol = _finish(red, z, t, w, status, total, history)
    sol.gap, sol.lower_bound = centred_gap, centred_bound
    if sol.status is Status.OPTIMAL and sol.kkt_residual > max(tol, 1e-6):
        sol.status = Status.ITER_LIMIT
    return sol


def _barrier_derivs(red: _Reduced, z, t, hessian: bool = True):
    """Gradient and Hessian of psi, plus the summed magnitudes of the gradient's parts."""
    g0, H0 = red.f0_derivs(z)
    lin = red.G @ z - red.h
    d = 1.0 / -lin
    g = t * g0 + red.G.T @ d
    mag = t * np.abs(g0) + np.abs(red.G.T) @ d
    H = t * H0 + (red.G.T * d ** 2) @ red.G if hessian else None
    if red.smooth_terms:
        s = red.smooth_values(z)
        grads, hessians = red.smooth_derivs(z)
        for sv, gr, hs in zip(s, grads, hessians):
            g += gr / -sv
            mag += np.abs(gr / sv)
            if hessian:
                H += np.outer(gr, gr) / sv ** 2 + hs / -sv
    return g, H, mag


def _centre(red: _Reduced, z, t, budget):
    """Equality-constrained Newton on ``t f0 - sum log(-F)``."""
    w = np.zeros(red.A.shape[0])
    m = max(1, red.G.shape[0] + len(red.smooth_terms))
    prev = np.inf
    for k in range(1, budget + 1):
        g, H, mag = _barrier_derivs(red, z, t)
        dz, w = _kkt_solve(H, g, red.A)
        dec = float(-g @ dz)
        psi0 = _psi(red, z, t)
        # rounding in the gradient limits how well the decrement is known
        noise = 64.0 * EPS * float(mag @ np.abs(dz))
        if dec / 2.0 <= max(1e-10, noise):
            return z, w / t, k, True
        # Newton shrinks the decrement quadratically near the centre; a small
        # decrement that stops shrinking has hit the rounding floor. Its error
        # dec/(2t) in objective units is then far below the barrier gap m/t.
        if dec / 2.0 <= 1e-4 * m and dec >= 0.5 * prev:
            return z, w / t, k, True
        prev = dec
        # below this decrease Armijo compares rounding noise; psi is convex along
        # dz, so a non-positive slope at the trial point certifies a decrease
        noisy = dec <= 1e-10 * max(1.0, abs(psi0))
        step = 1.0
        while True:
            zn = z + step * dz
            if _strictly_feasible(red, zn):
                if noisy:
                    slope = float(_barrier_derivs(red, zn, t, hessian=False)[0] @ dz)
                    if slope <= 0.0:
                        break
                elif _psi(red, zn, t) <= psi0 - 0.25 * step * dec:
                    break
            step *= 0.5
            if step < 1e-14:
                # numerically converged for this t
                return z, w / t, k, dec / 2.0 <= 1e-9 * max(1.0, abs(psi0))
        z = zn
    return z, w / t, budget, False


def _finish(red: _Reduced, z, t, w, status, iterations, history):
    lin = red.G @ z - red.h
    mu_lin = 1.0 / (t * -lin)
    mu_smooth = np.zeros(len(red.smooth_terms))
    if red.smooth_terms:
        mu_smooth = 1.0 / (t * -red.smooth_values(z))
    n, nf = red.n, red.nf
    lower = np.zeros(n)
    upper = np.zeros(n)
    lower[red.free] = mu_lin[:nf]
    upper[red.free] = mu_lin[nf:2 * nf]
    rest = mu_lin[2 * nf:]
    mu_cuts = rest[: red.m_lin]
    mu_epi = np.zeros(len(red.program.epigraph_terms))
    mu_epi[red.affine_terms] = rest[red.m_lin:]
    mu_epi[red.smooth_terms] = mu_smooth
    lam = np.zeros(red.n_groups)
    # Newton returns multipliers of t*f0 + barrier; the sign convention is +A^T lam
    lam[red.group_rows] = w
    mult = MultiplierSet(lam=lam, mu=np.concatenate([lower, upper, mu_cuts, mu_epi]))
    x = red.expand(z)
    sol = KernelSolution(
        x_star=x,
        objective_value=float(red.f0(z)),
        multipliers=mult,
        status=status,
        kkt_residual=0.0,
        v=float(z[-1]) if red.epi else None,
        iterations=iterations,
        history=history,
    )
    sol.kkt_residual = kkt_residual(red.program, sol)
    if sol.kkt_residual > 0.0 and len(mult.mu):
        polished = _polish_multipliers(red.program, sol)
        barrier = sol.multipliers
        sol.multipliers = polished
        res = kkt_residual(red.program, sol)
        if res < sol.kkt_residual:
            sol.kkt_residual = res
        else:
            sol.multipliers = barrier
    return sol


def _failed(red: _Reduced, status):
    n_mu = 2 * red.n + red.m_lin + len(red.program.epigraph_terms)
    return KernelSolution(
        x_star=np.full(red.n, np.nan),
        objective_value=np.inf,
        multipliers=MultiplierSet(lam=np.zeros(red.n_groups), mu=np.zeros(n_mu)),
        status=status,
        kkt_residual=np.inf,
        v=None,
    )


def _kkt_parts(program: ConvexProgram, x, v):
    """Stationarity system and row values at ``(x, v)``.

    Returns ``(g, J, slack)``: the objective gradient ``g`` restricted to the
    checked coordinates, the matrix ``J`` whose columns are the constraint
    gradients in multiplier layout order (``lam`` first, then ``mu``), and the
    value of every inequality row (feasible when ``<= 0``).
    """
    space = program.space
    n = space.dim
    free = ~space.fixed_mask()
    A, _ = space.equality_matrix()
    m = len(program.linear_inequalities)
    r = len(program.epigraph_terms)
    cols = [A.T, -np.eye(n), np.eye(n)]
    slack = [space.lower - x, x - space.upper]
    lin = np.zeros((n, m))
    lin_val = np.zeros(m)
    for i, c in enumerate(program.linear_inequalities):
        a = np.asarray(c.coeffs, float)
        val = a @ x + c.offset
        if c.sense == ">=":
            a, val = -a, -val
        lin[:, i], lin_val[i] = a, val
    cols.append(lin)
    slack.append(lin_val)
    epi = np.zeros((n, r))
    epi_val = np.zeros(r)
    for i, term in enumerate(program.epigraph_terms):
        epi[:, i] = np.asarray(term.grad(x), float)
        epi_val[i] = term.value(x) - v
    cols.append(epi)
    slack.append(epi_val)
    J = np.hstack(cols)[free]
    g = np.zeros(n)
    if program.objective is not None:
        g += np.asarray(program.objective.grad(x), float)
    g = g[free]
    if program.epigraph:
        v_row = np.concatenate([np.zeros(A.shape[0] + 2 * n + m), -np.ones(r)])
        J = np.vstack([J, v_row])
        g = np.append(g, 1.0)
    return g, J, np.concatenate(slack)


def kkt_residual(program: ConvexProgram, sol: KernelSolution) -> float:
    """Max of stationarity, primal infeasibility and complementarity.

    Stationarity is measured on the coordinates not pinned by the simplex and
    box bounds (and on ``v`` in epigraph mode), relative to the largest term
    entering it (never less than one), so rows with large coefficients do not
    demand more digits than double precision carries.
    """
    x = sol.x_star
    g, J, slack = _kkt_parts(program, x, sol.v)
    lam, mu = sol.multipliers.lam, sol.multipliers.mu
    weights = np.concatenate([lam, mu])
    terms = np.abs(J) * np.abs(weights)[None, :]
    scale = max(1.0, np.max(np.abs(g), initial=0.0), np.max(terms, initial=0.0))
    stat = (g + J @ weights) / scale
    A, b = program.space.equality_matrix()
    viol = np.max(np.abs(A @ x - b)) if len(b) else 0.0
    viol = max(viol, np.max(slack, initial=0.0))
    comp = np.max(np.abs(mu * slack), initial=0.0)
    return float(max(np.max(np.abs(stat), initial=0.0), viol, comp))


def _polish_multipliers(program: ConvexProgram, sol: KernelSolution) -> MultiplierSet:
    """Least-squares multipliers on the nearly active rows.

    At large barrier weights the rows' slacks carry few significant digits, so
    ``1 / (t * slack)`` can miss stationarity by far more than the gap. Solving
    the stationarity system directly over the rows the barrier marked as
    active recovers multipliers accurate to roundoff.
    """
    g, J, slack = _kkt_parts(program, sol.x_star, sol.v)
    p = len(sol.multipliers.lam)
    mu = sol.multipliers.mu
    active = np.flatnonzero(mu > 1e-6 * max(1.0, np.max(mu, initial=0.0)))
    # lam is free: split into positive and negative parts for the NNLS
    M = np.hstack([J[:, :p], -J[:, :p], J[:, p + active]])
    coef, _ = nnls(M, -g, maxiter=50 * M.shape[1] + 50)
    lam = coef[:p] - coef[p:2 * p]
    new_mu = np.zeros_like(mu)
    new_mu[active] = coef[2 * p:]
    return MultiplierSet(lam=lam, mu=new_mu)


# ---------------------------------------------------------------------------
# linear programs


def solve_lp(program: ConvexProgram, tol: float = 1e-8) -> KernelSolution:
    """Vertex solution of an affine program via HiGHS (dual simplex)."""
    space = program.space
    n = space.dim
    obj = program.objective
    for term in program.epigraph_terms:
        if not isinstance(term, AffineFunction):
            raise ValueError("solve_lp needs affine epigraph terms")
    if obj is not None and not isinstance(obj, AffineFunction):
        if obj.hess is not None:
            raise ValueError("solve_lp needs an affine objective")
    epi = program.epigraph
    nz = n + (1 if epi else 0)
    c = np.zeros(nz)
    const = 0.0
    if obj is not None:
        c[:n] = obj.grad(space.center())
        const = obj.value(np.zeros(n)) if isinstance(obj, AffineFunction) else 0.0
    rows, rhs = [], []
    for con in program.linear_inequalities:
        a = np.zeros(nz)
        a[:n] = con.coeffs
        off = con.offset
        if con.sense == ">=":
            a, off = -a, -off
        rows.append(a)
        rhs.append(-off)
    for term in program.epigraph_terms:
        a = np.zeros(nz)
        a[:n] = term.coeffs
        a[-1] = -1.0
        rows.append(a)
        rhs.append(-term.const)
    if epi:
        c[-1] = 1.0
    A, b = space.equality_matrix()
    A_eq = np.hstack([A, np.zeros((A.shape[0], nz - n))]) if len(b) else None
    bounds = list(zip(space.lower, space.upper)) + ([(None, None)] if epi else [])
    res = linprog(c, A_ub=np.array(rows) if rows else None, b_ub=np.array(rhs) if rows else None,
                  A_eq=A_eq, b_eq=b if len(b) else None, bounds=bounds, method="highs-ds")
    m = len(program.linear_inequalities)
    n_mu = 2 * n + m + len(program.epigraph_terms)
    if res.status == 2:
        return KernelSolution(np.full(n, np.nan), np.inf,
                              MultiplierSet(np.zeros(len(b)), np.zeros(n_mu)), Status.INFEASIBLE, np.inf)
    if res.status == 3:
        return KernelSolution(np.full(n, np.nan), -np.inf,
                              MultiplierSet(np.zeros(len(b)), np.zeros(n_mu)), Status.UNBOUNDED, np.inf)
    if res.status != 0:
        return KernelSolution(np.full(n, np.nan), np.nan,
                              MultiplierSet(np.zeros(len(b)), np.zeros(n_mu)), Status.ITER_LIMIT, np.inf)
    z = res.x
    # HiGHS marginals are d(obj)/d(rhs): non-positive for <= rows
    mu_rows = -res.ineqlin.marginals if rows else np.zeros(0)
    mu_lo = res.lower.marginals[:n]
    mu_hi = -res.upper.marginals[:n]
    lam = -res.eqlin.marginals if len(b) else np.zeros(0)
    mult = MultiplierSet(lam=lam, mu=np.concatenate([np.maximum(mu_lo, 0), np.maximum(mu_hi, 0),
                                                     np.maximum(mu_rows, 0)]))
    sol = KernelSolution(
        x_star=z[:n],
        objective_value=float(res.fun + const),
        multipliers=mult,
        status=Status.OPTIMAL,
        kkt_residual=0.0,
        v=float(z[-1]) if epi else None,
    )
    sol.kkt_residual = kkt_residual(program, sol)
    if sol.kkt_residual > max(tol, 1e-7):
        sol.status = Status.ITER_LIMIT
    return sol
