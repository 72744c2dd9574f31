"""Variational EM (coordinate ascent) baselines and the random-restart study."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from .models import (
    Dataset,
    ModelKind,
    ModelParams,
    ModelVariant,
    VariationalParams,
    elbo,
    elbo_gradients,
)


class VemStatus(str, enum.Enum):
    CONVERGED = "converged"
    MAX_ITERATIONS = "max_iterations"
    DIVERGED = "diverged"


@dataclass(frozen=True)
class VemConfig:
    variant: ModelVariant
    tol: float = 1e-8
    max_outer: int = 10_000
    max_inner: int = 100
    inner_tol: float = 1e-10
    param_tol: float = 1e-10
    e_order: str = "nu_first"
    seed: int = 0

    def __post_init__(self):
        if min(self.tol, self.inner_tol, self.param_tol) <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_outer < 1 or self.max_inner < 1:
            raise ValueError("iteration caps must be at least 1")
        if self.e_order not in ("nu_first", "tau_first"):
            raise ValueError("e_order must be 'nu_first' or 'tau_first'")


@dataclass
class VemResult:
    params: ModelParams
    vparams: VariationalParams
    elbo: float
    iterations: int
    trace: list
    status: VemStatus

    @property
    def converged(self) -> bool:
        return self.status is VemStatus.CONVERGED


def _responsibilities(log_pi, y, loc, gamma=None):
    logits = log_pi[None, :] - 0.5 * (y[:, None] - loc[None, :]) ** 2
    if gamma is not None:
        logits = logits - 0.5 * gamma[None, :]
    return np.exp(logits - logsumexp(logits, axis=1, keepdims=True))


def m_step(variant: ModelVariant, params: ModelParams, vparams: VariationalParams,
           data: Dataset) -> ModelParams:
    tau = vparams.tau
    pi = tau.mean(axis=0)
    if variant.kind is ModelKind.GMM:
        mu = (tau.T @ data.y) / tau.sum(axis=0)
        return ModelParams(pi=pi, mu=mu)
    second = np.sum(vparams.nu ** 2)
    if vparams.gamma is not None:
        second += np.sum(vparams.gamma)
    # locations collapsing onto zero send the prior variance to zero
    eta = -variant.K / (2.0 * second) if second > 0 else -np.inf
    return ModelParams(pi=pi, eta_m=eta)


def e_step(variant: ModelVariant, params: ModelParams, vparams: VariationalParams,
           data: Dataset, max_inner: int = 100, inner_tol: float = 1e-10,
           order: str = "nu_first"):
    """Inner coordinate ascent over the variational parameters.

    ``order`` picks whether a sweep refreshes the locations (and variances)
    from the current responsibilities before recomputing the responsibilities,
    or the other way round. Returns the new parameters and the sweep count.
    """
    y, log_pi = data.y, np.log(params.pi)
    if variant.kind is ModelKind.GMM:
        return VariationalParams(tau=_responsibilities(log_pi, y, params.mu)), 1
    tau, nu, gamma = vparams.tau, vparams.nu, vparams.gamma
    eta = params.eta_m

    def locations(t):
        n_k = t.sum(axis=0)
        g = None if gamma is None else 1.0 / (n_k - 2.0 * eta)
        return (t.T @ y) / (n_k - 2.0 * eta), g

    for sweep in range(1, max_inner + 1):
        if order == "nu_first":
            nu_new, gamma_new = locations(tau)
            tau_new = _responsibilities(log_pi, y, nu_new, gamma_new)
        else:
            tau_new = _responsibilities(log_pi, y, nu, gamma)
            nu_new, gamma_new = locations(tau_new)
        change = max(np.max(np.abs(tau_new - tau)), np.max(np.abs(nu_new - nu)))
        if gamma is not None:
            change = max(change, np.max(np.abs(gamma_new - gamma)))
        tau, nu, gamma = tau_new, nu_new, gamma_new
        if change <= inner_tol:
            break
    return VariationalParams(tau=tau, nu=nu, gamma=gamma), sweep


def vem_run(config: VemConfig, data: Dataset, init) -> VemResult:
    """Alternate M- and E-steps to a fixed point.

    Stops once a full sweep changes the ELBO by at most ``config.tol`` and no
    parameter by more than ``config.param_tol``. The point-mass ELBO is
    unbounded as the prior variance goes to zero; a run heading there stops
    with status ``diverged`` at its last finite iterate.
    """
    variant = config.variant
    params, vparams = init
    current = elbo(variant, params, vparams, data)
    trace = [current]
    status = VemStatus.MAX_ITERATIONS
    it = 0
    prev = _flat(params, vparams)
    for it in range(1, config.max_outer + 1):
        new_params = m_step(variant, params, vparams, data)
        if new_params.eta_m is not None and not np.isfinite(new_params.eta_m):
            status = VemStatus.DIVERGED
            break
        params = new_params
        vparams, _ = e_step(variant, params, vparams, data, config.max_inner,
                            config.inner_tol, config.e_order)
        new = elbo(variant, params, vparams, data)
        if not np.isfinite(new):
            status = VemStatus.DIVERGED
            break
        trace.append(new)
        flat = _flat(params, vparams)
        done = abs(new - current) <= config.tol and np.max(np.abs(flat - prev)) <= config.param_tol
        current, prev = new, flat
        if done:
            status = VemStatus.CONVERGED
            break
    return VemResult(params, vparams, current, it, trace, status)


def _flat(params: ModelParams, vparams: VariationalParams) -> np.ndarray:
    parts = [params.pi, np.ravel(vparams.tau)]
    for extra in (params.mu, vparams.nu, vparams.gamma):
        if extra is not None:
            parts.append(extra)
    if params.eta_m is not None:
        parts.append([params.eta_m])
    return np.concatenate(parts)


def elbo_kkt_residual(variant: ModelVariant, params: ModelParams, vparams: VariationalParams,
                      data: Dataset) -> float:
    """Largest stationarity violation of the ELBO Lagrangian.

    Each simplex (the weights and every ``tau`` row) gets the least-squares
    multiplier, i.e. its gradient is centred before taking the maximum.
    """
    ga, gb = elbo_gradients(variant, params, vparams, data)
    K, N = variant.K, data.N
    ga = ga.copy()
    ga[:K] -= ga[:K].mean()
    g_tau = gb[: N * K].reshape(N, K)
    g_tau = g_tau - g_tau.mean(axis=1, keepdims=True)
    parts = [ga, g_tau.ravel(), gb[N * K:]]
    return float(max(np.max(np.abs(p)) for p in parts if p.size))


# ---------------------------------------------------------------------------
# random restarts


@dataclass(frozen=True)
class InitSampler:
    """Random initial points: Dirichlet weights and responsibilities, Gamma prior
    variance with shape equal to the data range (unit scale), uniform locations."""

    dirichlet_alpha: np.ndarray
    gamma_shape: float
    nu_range: tuple

    def __post_init__(self):
        if np.any(np.asarray(self.dirichlet_alpha) <= 0) or self.gamma_shape <= 0:
            raise ValueError("sampler parameters must be positive")
        if not self.nu_range[0] < self.nu_range[1]:
            raise ValueError("empty location range")

    @classmethod
    def for_data(cls, data: Dataset, K: int) -> "InitSampler":
        lo, hi = float(data.y.min()), float(data.y.max())
        if hi <= lo:
            lo, hi = lo - 0.5, hi + 0.5
        return cls(np.ones(K), float(data.spread), (lo, hi))

    def sample(self, variant: ModelVariant, data: Dataset, rng: np.random.Generator,
               gamma_bounds=(1e-6, None)):
        K, N = variant.K, data.N
        alpha = np.asarray(self.dirichlet_alpha, dtype=float)
        pi = rng.dirichlet(alpha)
        tau = rng.dirichlet(alpha, size=N)
        Gamma = rng.gamma(self.gamma_shape, 1.0)
        loc = rng.uniform(self.nu_range[0], self.nu_range[1], size=K)
        if variant.kind is ModelKind.GMM:
            return ModelParams(pi=pi, mu=loc), VariationalParams(tau=tau)
        gamma = None
        if variant.kind is ModelKind.GAUSSIAN:
            hi = gamma_bounds[1] if gamma_bounds[1] is not None else data.spread ** 2
            gamma = np.clip(rng.gamma(self.gamma_shape, 1.0, size=K), gamma_bounds[0], hi)
        return (ModelParams(pi=pi, eta_m=-1.0 / (2.0 * Gamma)),
                VariationalParams(tau=tau, nu=loc, gamma=gamma))


def restart_seed(seed: int, index: int) -> int:
    """Integer seed owned by one restart; independent of scheduling."""
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


@dataclass
class RestartReport:
    rows: list = field(default_factory=list)
    reference: float = float("nan")
    threshold: float = 1.0

    @property
    def counts(self) -> dict:
        out = {"Global": 0, "Local": 0}
        for row in self.rows:
            out[row["class"]] += 1
        return out

    def near(self, value: float, radius: float = 1.0) -> int:
        return sum(abs(r["final_elbo"] - value) <= radius for r in self.rows)


def classify(value: float, reference: float, threshold: float = 1.0) -> str:
    if not np.isfinite(value):
        return "Local"
    return "Local" if abs(value - reference) > threshold else "Global"


def _one_restart(args):
    config, data, sampler, base_seed, index = args
    s = restart_seed(base_seed, index)
    init = sampler.sample(config.variant, data, np.random.default_rng(s))
    res = vem_run(config, data, init)
    return index, s, res


def restart_experiment(config: VemConfig, data: Dataset, n_restarts: int,
                       sampler: Optional[InitSampler] = None,
                       reference: Optional[float] = None, threshold: float = 1.0,
                       threads: int = 1) -> RestartReport:
    """Run VEM from ``n_restarts`` random starts and classify the end points.

    ``reference`` is the certified optimum; when omitted the multistart
    oracle is consulted.
    """
    if n_restarts < 1:
        raise ValueError("n_restarts must be at least 1")
    sampler = sampler or InitSampler.for_data(data, config.variant.K)
    if reference is None:
        from .oracle import OracleConfig, certify_optimum

        reference = certify_optimum(config.variant, data, OracleConfig(seed=config.seed)).best_elbo
    jobs = [(config, data, sampler, config.seed, r) for r in range(n_restarts)]
    results = _map(_one_restart, jobs, threads)
    report = RestartReport(reference=reference, threshold=threshold)
    for index, s, res in sorted(results, key=lambda t: t[0]):
        report.rows.append({
            "restart": index,
            "seed": s,
            "final_elbo": res.elbo,
            "iters": res.iterations,
            "class": "Local" if res.status is VemStatus.DIVERGED else classify(res.elbo, reference, threshold),
        })
    return report


def _map(fn, jobs, threads: int):
    if threads <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, jobs))
