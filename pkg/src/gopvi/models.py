"""Gaussian mixture variational models as biconvex programs.

Three variants share one data layout:

* ``gmm``   - plain mixture with unit variance; alpha = (pi, mu), beta = tau
* ``pm``    - Bayesian mixture, point-mass q(m); alpha = (pi, nu), beta = (tau, eta)
* ``gauss`` - Bayesian mixture, Gaussian q(m);   alpha = (pi, nu, gamma), beta = (tau, eta)

``tau`` is flattened row-major (observation i, cluster k) and ``eta`` is the
natural parameter of the prior variance, ``eta = -1 / (2 * Gamma)``.

The objective handed to the engine is the negative ELBO. Constants follow the
variant's convention: ``proportional`` drops the ``log(2*pi)`` normalisers of
the likelihood and the prior, ``full`` keeps them.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.optimize import linprog
from scipy.special import logsumexp

from .core import BiconvexProblem, DomainError, MultiplierSet, SmoothTerm, VariableSpace

LOG_2PI = math.log(2 * math.pi)
MINIMAL_DATA = (-10.0, -10.0, 5.0, 25.0)


class ModelKind(str, enum.Enum):
    GMM = "gmm"
    POINT_MASS = "pm"
    GAUSSIAN = "gauss"


class Convention(str, enum.Enum):
    PROPORTIONAL = "proportional"
    FULL = "full"


@dataclass(frozen=True)
class ModelVariant:
    kind: ModelKind
    K: int = 2
    convention: Convention = Convention.PROPORTIONAL

    def __post_init__(self):
        object.__setattr__(self, "kind", ModelKind(self.kind))
        object.__setattr__(self, "convention", Convention(self.convention))
        if self.K < 1:
            raise ValueError("K must be at least 1")

    @property
    def bayesian(self) -> bool:
        return self.kind is not ModelKind.GMM


@dataclass(frozen=True)
class Dataset:
    y: np.ndarray

    def __post_init__(self):
        y = np.atleast_1d(np.asarray(self.y, dtype=float))
        if y.ndim != 1 or y.size < 1:
            raise ValueError("dataset needs at least one observation")
        if not np.all(np.isfinite(y)):
            raise ValueError("observations must be finite")
        y.setflags(write=False)
        object.__setattr__(self, "y", y)

    @property
    def N(self) -> int:
        return self.y.size

    @property
    def spread(self) -> float:
        r = float(self.y.max() - self.y.min())
        return r if r > 0 else 1.0

    @classmethod
    def load(cls, path) -> "Dataset":
        """One number per line; blank lines and ``#`` comments are skipped."""
        values = []
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            try:
                values.append(float(text))
            except ValueError:
                raise ValueError(f"{path}:{lineno}: not a number: {text!r}") from None
        return cls(np.array(values))


def minimal_dataset() -> Dataset:
    return Dataset(np.array(MINIMAL_DATA))


@dataclass(frozen=True)
class ModelParams:
    pi: np.ndarray
    eta_m: Optional[float] = None
    mu: Optional[np.ndarray] = None

    @property
    def Gamma(self) -> float:
        return -1.0 / (2.0 * self.eta_m)


@dataclass(frozen=True)
class VariationalParams:
    tau: np.ndarray
    nu: Optional[np.ndarray] = None
    gamma: Optional[np.ndarray] = None


@dataclass(frozen=True)
class BoundsConfig:
    """Box bounds for every block; ``None`` means the data-driven default."""

    prob_floor: float = 1e-6
    location: Optional[tuple] = None
    gamma: Optional[tuple] = None
    eta: tuple = (-50.0, -1.0 / (2.0 * 1e4))

    def location_bounds(self, data: Dataset):
        if self.location is not None:
            return self.location
        pad = 0.1 * data.spread
        return float(data.y.min() - pad), float(data.y.max() + pad)

    def gamma_bounds(self, data: Dataset):
        if self.gamma is not None:
            return self.gamma
        return self.prob_floor, data.spread ** 2


# ---------------------------------------------------------------------------
# vector layouts


def alpha_size(variant: ModelVariant) -> int:
    return (3 if variant.kind is ModelKind.GAUSSIAN else 2) * variant.K


def beta_size(variant: ModelVariant, N: int) -> int:
    return N * variant.K + (1 if variant.bayesian else 0)


def pack_alpha(variant: ModelVariant, params: ModelParams, vparams: VariationalParams):
    if variant.kind is ModelKind.GMM:
        return np.concatenate([params.pi, params.mu])
    parts = [params.pi, vparams.nu]
    if variant.kind is ModelKind.GAUSSIAN:
        parts.append(vparams.gamma)
    return np.concatenate(parts).astype(float)


def pack_beta(variant: ModelVariant, params: ModelParams, vparams: VariationalParams):
    tau = np.asarray(vparams.tau, dtype=float).ravel()
    if variant.bayesian:
        return np.append(tau, params.eta_m)
    return tau.copy()


def unpack(variant: ModelVariant, alpha, beta, N: int):
    """Inverse of the pack functions: ``(ModelParams, VariationalParams)``."""
    K = variant.K
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    tau = beta[: N * K].reshape(N, K)
    pi = alpha[:K]
    if variant.kind is ModelKind.GMM:
        return ModelParams(pi=pi, mu=alpha[K:2 * K]), VariationalParams(tau=tau)
    eta = float(beta[N * K])
    gamma = alpha[2 * K:3 * K] if variant.kind is ModelKind.GAUSSIAN else None
    return ModelParams(pi=pi, eta_m=eta), VariationalParams(tau=tau, nu=alpha[K:2 * K], gamma=gamma)


def _split(variant, alpha, beta, N):
    K = variant.K
    tau = beta[: N * K].reshape(N, K)
    eta = beta[N * K] if variant.bayesian else 0.0
    pi = alpha[:K]
    loc = alpha[K:2 * K]
    gamma = alpha[2 * K:3 * K] if variant.kind is ModelKind.GAUSSIAN else None
    return pi, loc, gamma, tau, eta


def _constant(variant: ModelVariant, N: int) -> float:
    if variant.convention is Convention.PROPORTIONAL:
        return 0.0
    n_terms = N + (variant.K if variant.bayesian else 0)
    return -0.5 * n_terms * LOG_2PI


# ---------------------------------------------------------------------------
# negative ELBO on packed vectors


def neg_elbo_vec(variant: ModelVariant, y, alpha, beta) -> float:
    y = np.asarray(y, dtype=float)
    pi, loc, gamma, tau, eta = _split(variant, alpha, beta, y.size)
    if np.any(tau <= 0) or np.any(pi <= 0):
        raise DomainError("tau and pi must be strictly positive")
    resid = (y[:, None] - loc[None, :]) ** 2
    val = 0.5 * np.sum(tau * resid) - np.sum(tau * np.log(pi)) + np.sum(tau * np.log(tau))
    if variant.bayesian:
        if eta >= 0:
            raise DomainError("eta_m must be negative")
        val += -0.5 * variant.K * math.log(-2.0 * eta) - eta * np.sum(loc ** 2)
    if gamma is not None:
        if np.any(gamma <= 0):
            raise DomainError("gamma must be strictly positive")
        val += (0.5 * np.sum(tau.sum(axis=0) * gamma) - eta * np.sum(gamma)
                - 0.5 * np.sum(np.log(2 * math.pi * math.e * gamma)))
    return float(val - _constant(variant, y.size))


def grad_alpha_vec(variant: ModelVariant, y, alpha, beta) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    pi, loc, gamma, tau, eta = _split(variant, alpha, beta, y.size)
    n_k = tau.sum(axis=0)
    g_pi = -n_k / pi
    g_loc = n_k * loc - tau.T @ y - 2.0 * eta * loc
    parts = [g_pi, g_loc]
    if gamma is not None:
        parts.append(0.5 * n_k - eta - 0.5 / gamma)
    return np.concatenate(parts)


def grad_beta_vec(variant: ModelVariant, y, alpha, beta) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    pi, loc, gamma, tau, eta = _split(variant, alpha, beta, y.size)
    g_tau = 0.5 * (y[:, None] - loc[None, :]) ** 2 - np.log(pi)[None, :] + np.log(tau) + 1.0
    if gamma is not None:
        g_tau = g_tau + 0.5 * gamma[None, :]
    g = g_tau.ravel()
    if variant.bayesian:
        g_eta = -0.5 * variant.K / eta - np.sum(loc ** 2)
        if gamma is not None:
            g_eta -= np.sum(gamma)
        g = np.append(g, g_eta)
    return g


def hess_alpha_vec(variant: ModelVariant, y, alpha, beta) -> np.ndarray:
    pi, loc, gamma, tau, eta = _split(variant, alpha, beta, len(y))
    n_k = tau.sum(axis=0)
    diag = [n_k / pi ** 2, n_k - 2.0 * eta]
    if gamma is not None:
        diag.append(0.5 / gamma ** 2)
    return np.diag(np.concatenate(diag))


def hess_beta_vec(variant: ModelVariant, y, alpha, beta) -> np.ndarray:
    pi, loc, gamma, tau, eta = _split(variant, alpha, beta, len(y))
    diag = (1.0 / tau).ravel()
    if variant.bayesian:
        diag = np.append(diag, 0.5 * variant.K / eta ** 2)
    return np.diag(diag)


# ---------------------------------------------------------------------------
# parameter-object API


def _check(variant: ModelVariant, params: ModelParams, vparams: VariationalParams):
    if variant.kind is ModelKind.GAUSSIAN and vparams.gamma is None:
        raise ValueError("the Gaussian variant needs gamma")
    if variant.kind is not ModelKind.GAUSSIAN and vparams.gamma is not None:
        raise ValueError("gamma is only used by the Gaussian variant")
    if variant.kind is ModelKind.GMM and params.mu is None:
        raise ValueError("the plain mixture needs mu")
    if variant.bayesian and (params.eta_m is None or vparams.nu is None):
        raise ValueError("Bayesian variants need eta_m and nu")


def elbo(variant: ModelVariant, params: ModelParams, vparams: VariationalParams,
         data: Dataset) -> float:
    """Evidence lower bound under the variant's constant convention."""
    _check(variant, params, vparams)
    a = pack_alpha(variant, params, vparams)
    b = pack_beta(variant, params, vparams)
    return -neg_elbo_vec(variant, data.y, a, b)


def elbo_gradients(variant: ModelVariant, params: ModelParams, vparams: VariationalParams,
                   data: Dataset):
    """Gradients of the negative ELBO over the alpha and beta blocks."""
    _check(variant, params, vparams)
    a = pack_alpha(variant, params, vparams)
    b = pack_beta(variant, params, vparams)
    return grad_alpha_vec(variant, data.y, a, b), grad_beta_vec(variant, data.y, a, b)


def primal_closed_form(variant: ModelVariant, beta, data: Dataset):
    """Minimiser of the negative ELBO over alpha at fixed beta.

    Mixture weights are the column means of ``tau``; locations are the
    (shrunken, for Bayesian variants) weighted means, and the Gaussian
    variances are ``1 / (n_k - 2 eta)``. The locations and variances separate
    per coordinate, so clipping them to their boxes keeps them optimal.
    The multiplier of the weight simplex is ``N``.
    """
    return _closed_form(variant, np.asarray(beta, dtype=float), data.y, None)


def _closed_form(variant, beta, y, bounds):
    K, N = variant.K, y.size
    tau = beta[: N * K].reshape(N, K)
    eta = beta[N * K] if variant.bayesian else 0.0
    n_k = tau.sum(axis=0)
    pi = n_k / N
    loc = (tau.T @ y) / (n_k - 2.0 * eta)
    parts = [pi, loc]
    if variant.kind is ModelKind.GAUSSIAN:
        parts.append(1.0 / (n_k - 2.0 * eta))
    alpha = np.concatenate(parts)
    if bounds is not None:
        alpha[K:] = np.clip(alpha[K:], bounds.lower[K:], bounds.upper[K:])
    return alpha, MultiplierSet(lam=[float(n_k.sum())])


def _entropy_part(variant: ModelVariant, N: int) -> SmoothTerm:
    """``sum tau log tau - K/2 log(-2 eta)``: the part of the negative ELBO that
    is not affine in beta once alpha is fixed."""
    K = variant.K
    nk = N * K

    def value(b):
        tau = b[:nk]
        val = float(np.sum(tau * np.log(tau)))
        if variant.bayesian:
            val -= 0.5 * K * math.log(-2.0 * b[nk])
        return val

    def grad(b):
        g = np.log(b[:nk]) + 1.0
        if variant.bayesian:
            g = np.append(g, -0.5 * K / b[nk])
        return g

    def hess(b):
        d = 1.0 / b[:nk]
        if variant.bayesian:
            d = np.append(d, 0.5 * K / b[nk] ** 2)
        return np.diag(d)

    return SmoothTerm(value, grad, hess)


# ---------------------------------------------------------------------------
# closed forms used by the engine


def floor_simplex(w, delta: float) -> np.ndarray:
    """Minimiser of ``sum x log x - x . log w`` over ``{sum x = 1, x >= delta}``.

    Entries of ``w`` (a probability vector) that would fall below ``delta``
    are pinned there and the rest keep their proportions.
    """
    w = np.asarray(w, dtype=float)
    x = w.copy()
    pinned = np.zeros(w.size, dtype=bool)
    while True:
        low = (x < delta) & ~pinned
        if not low.any():
            return x
        pinned |= low
        free = ~pinned
        x[pinned] = delta
        x[free] = w[free] * (1.0 - delta * pinned.sum()) / w[free].sum()


def _beta_closed_form(variant, alpha, y, beta_space):
    K, N = variant.K, y.size
    pi, loc = alpha[:K], alpha[K:2 * K]
    logits = np.log(pi)[None, :] - 0.5 * (y[:, None] - loc[None, :]) ** 2
    second = np.sum(loc ** 2)
    if variant.kind is ModelKind.GAUSSIAN:
        gamma = alpha[2 * K:3 * K]
        logits = logits - 0.5 * gamma[None, :]
        second += np.sum(gamma)
    tau = np.exp(logits - logsumexp(logits, axis=1, keepdims=True))
    delta = float(beta_space.lower[0])
    tau = np.array([floor_simplex(row, delta) for row in tau])
    if not variant.bayesian:
        return tau.ravel()
    eta = -K / (2.0 * second) if second > 0 else beta_space.upper[-1]
    # one-dimensional convex objective: clipping is exact
    eta = float(np.clip(eta, beta_space.lower[-1], beta_space.upper[-1]))
    return np.append(tau.ravel(), eta)


def _polytope(space: VariableSpace, rows):
    A_eq, b_eq = space.equality_matrix()
    A_ub = np.zeros((len(rows), space.dim))
    b_ub = np.zeros(len(rows))
    for i, c in enumerate(rows):
        sign = -1.0 if c.sense == ">=" else 1.0
        A_ub[i] = sign * np.asarray(c.coeffs, dtype=float)
        b_ub[i] = -sign * float(c.offset)
    return A_ub, b_ub, A_eq, b_eq


def fractional_range(space: VariableSpace, rows, num, num0, den, den0):
    """Least and greatest ``(num . x + num0) / (den . x + den0)`` over a polytope.

    The polytope is ``space`` cut by ``rows`` (objects with ``coeffs``,
    ``offset`` and ``sense``); the denominator must be positive on it. Uses
    the Charnes-Cooper substitution ``x = z / s``, ``s = 1 / denominator``,
    which turns both extremes into linear programs. Returns ``None`` when the
    polytope is empty.
    """
    A_ub, b_ub, A_eq, b_eq = _polytope(space, rows)
    n = space.dim
    lo, hi = space.lower, space.upper
    ub = np.vstack([
        np.hstack([A_ub, -b_ub[:, None]]),
        np.hstack([np.eye(n), -hi[:, None]]),
        np.hstack([-np.eye(n), lo[:, None]]),
    ])
    eq = np.vstack([np.hstack([A_eq, -b_eq[:, None]]), np.append(den, den0)[None, :]])
    rhs = np.zeros(eq.shape[0])
    rhs[-1] = 1.0
    c = np.append(num, num0)
    bounds = [(None, None)] * n + [(0.0, None)]
    out = []
    for sign in (1.0, -1.0):
        res = linprog(sign * c, A_ub=ub, b_ub=np.zeros(ub.shape[0]), A_eq=eq, b_eq=rhs,
                      bounds=bounds, method="highs")
        if res.status != 0:
            return None
        out.append(sign * res.fun)
    return out[0], out[1]


def _alpha_ranges(variant, y, alpha_space, beta_space, rows):
    """Box holding the closed-form alpha for every beta in the polytope.

    Weights are linear in ``tau``, locations and variances are ratios with a
    positive denominator, and clipping to the alpha box is monotone, so each
    coordinate's range comes from two small linear programs.
    """
    K, N = variant.K, y.size
    nb = beta_space.dim
    lo, hi = alpha_space.effective_bounds()
    new_lo, new_hi = lo.copy(), hi.copy()
    zero = np.zeros(nb)
    pad = 1e-9
    for k in range(K):
        sel = np.zeros(nb)
        sel[k:N * K:K] = 1.0
        den = sel.copy()
        if variant.bayesian:
            den[N * K] = -2.0
        targets = [(k, sel / N, 0.0, zero, 1.0), (K + k, _weighted(sel, y, N, K, nb), 0.0, den, 0.0)]
        if variant.kind is ModelKind.GAUSSIAN:
            targets.append((2 * K + k, zero, 1.0, den, 0.0))
        for j, num, num0, d, d0 in targets:
            r = fractional_range(beta_space, rows, num, num0, d, d0)
            if r is None:
                return None
            a, b = r
            scale = pad * max(1.0, abs(a), abs(b))
            new_lo[j] = np.clip(a - scale, lo[j], hi[j])
            new_hi[j] = np.clip(b + scale, lo[j], hi[j])
    return new_lo, new_hi


def _weighted(sel, y, N, K, nb):
    out = np.zeros(nb)
    out[: N * K] = sel[: N * K] * np.repeat(y, K)
    return out


def build_problem(variant: ModelVariant, data: Dataset,
                  bounds: Optional[BoundsConfig] = None) -> BiconvexProblem:
    bounds = bounds or BoundsConfig()
    K, N, y = variant.K, data.N, data.y
    lo_loc, hi_loc = bounds.location_bounds(data)
    loc_name = "mu" if variant.kind is ModelKind.GMM else "nu"
    names = [f"pi[{k}]" for k in range(K)] + [f"{loc_name}[{k}]" for k in range(K)]
    lower = [bounds.prob_floor] * K + [lo_loc] * K
    upper = [1.0] * K + [hi_loc] * K
    if variant.kind is ModelKind.GAUSSIAN:
        glo, ghi = bounds.gamma_bounds(data)
        names += [f"gamma[{k}]" for k in range(K)]
        lower += [glo] * K
        upper += [ghi] * K
    alpha_space = VariableSpace(names, lower, upper, [range(K)])

    bnames = [f"tau[{i},{k}]" for i in range(N) for k in range(K)]
    blower = [bounds.prob_floor] * (N * K)
    bupper = [1.0] * (N * K)
    if variant.bayesian:
        bnames.append("eta_m")
        blower.append(bounds.eta[0])
        bupper.append(bounds.eta[1])
    groups = [range(i * K, (i + 1) * K) for i in range(N)]
    beta_space = VariableSpace(bnames, blower, bupper, groups)

    return BiconvexProblem(
        alpha=alpha_space,
        beta=beta_space,
        objective=lambda a, b: neg_elbo_vec(variant, y, a, b),
        grad_alpha=lambda a, b: grad_alpha_vec(variant, y, a, b),
        grad_beta=lambda a, b: grad_beta_vec(variant, y, a, b),
        hess_alpha=lambda a, b: hess_alpha_vec(variant, y, a, b),
        hess_beta=lambda a, b: hess_beta_vec(variant, y, a, b),
        primal_closed_form=lambda b: _closed_form(variant, np.asarray(b, float), y, alpha_space),
        # every weight, location and variance gradient involves tau
        connected_alpha=tuple(range(alpha_space.dim)),
        beta_convex_part=_entropy_part(variant, N),
        alpha_region_bounds=lambda rows: _alpha_ranges(variant, y, alpha_space, beta_space, rows),
        beta_closed_form=lambda a: _beta_closed_form(variant, np.asarray(a, float), y, beta_space),
        name=variant.kind.value,
    )


def with_convention(variant: ModelVariant, convention) -> ModelVariant:
    return replace(variant, convention=Convention(convention))


# ---------------------------------------------------------------------------
# exact marginal likelihood of the Bayesian mixture


def analytic_loglik(gamma_value: float, data: Dataset) -> float:
    """Marginal log-likelihood of the Bayesian mixture; the weights drop out."""
    if gamma_value <= -1.0:
        raise DomainError("prior variance must exceed -1")
    s = gamma_value + 1.0
    N = data.N
    return float(-0.5 * N * LOG_2PI - 0.5 * N * math.log(s) - np.sum(data.y ** 2) / (2.0 * s))


def mle_gamma(data: Dataset) -> float:
    return float(np.mean(data.y ** 2) - 1.0)
