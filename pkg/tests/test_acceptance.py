"""Acceptance criteria at their stated tolerances, one reported line each.

Each test records ``PASS``/``FAIL`` with its measured numbers; the lines are
printed as the test runs and again in the terminal summary.
"""
import numpy as np
import pytest
from scipy.optimize import brentq

from gopvi import cli
from gopvi.core import random_feasible_point
from gopvi.gop import IterationLimits, gop_solve
from gopvi.kernel import ConvexFunction, ConvexProgram, solve_convex
from gopvi.models import ModelVariant, analytic_loglik, build_problem, mle_gamma
from gopvi.oracle import OracleConfig, certify_optimum, model_derivative_report
from gopvi.vem import InitSampler, VemConfig, elbo_kkt_residual, restart_experiment, vem_run

N_STARTS = 100
EPS = 0.01
# no cap is part of the criterion; some Gaussian starts need several hundred iterations
LIMITS = IterationLimits(max_iter=1000)


@pytest.fixture
def report(acceptance_lines, capsys):
    def record(number: int, ok: bool, detail: str):
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        acceptance_lines.append(line)
        with capsys.disabled():
            print("\n" + line)
        assert ok, line

    return record


def stationary_gamma(data, h=1e-3):
    """Maximiser of the marginal likelihood as the root of its central-difference slope.

    Comparing function values cannot place a smooth maximum closer than about the
    square root of machine precision, so the slope is solved for instead.
    """
    slope = lambda g: (analytic_loglik(g + h, data) - analytic_loglik(g - h, data)) / (2 * h)
    return brentq(slope, 1.0, 1e4, xtol=1e-12)


def _runs(problem):
    return [gop_solve(problem, random_feasible_point(problem.beta, s), EPS, LIMITS)
            for s in range(N_STARTS)]


@pytest.fixture(scope="module")
def oracles(data):
    return {kind: certify_optimum(ModelVariant(kind), data, OracleConfig(n_starts=1000))
            for kind in ("pm", "gauss")}


@pytest.fixture(scope="module")
def pm_runs(problems):
    return _runs(problems["pm"])


@pytest.fixture(scope="module")
def gauss_runs(problems):
    return _runs(problems["gauss"])


def _global_check(runs, target, oracle):
    elbo = np.array([-r.ubd for r in runs])
    converged = sum(r.converged for r in runs)
    near_target = int(np.sum(np.abs(elbo - target) <= 0.5))
    near_oracle = int(np.sum(np.abs(elbo - oracle) <= 1e-3))
    ok = converged == near_target == near_oracle == len(runs)
    detail = (f"converged {converged}/{len(runs)}, within 0.5 of {target} {near_target}, "
              f"within 1e-3 of oracle {oracle:.4f} {near_oracle}, "
              f"elbo range [{elbo.min():.4f}, {elbo.max():.4f}], "
              f"max iterations {max(r.iterations for r in runs)}")
    return ok, detail, float(np.median(elbo))


def test_criterion_01_point_mass_global(pm_runs, oracles, report):
    ok, detail, _ = _global_check(pm_runs, -84.04, oracles["pm"].best_elbo)
    report(1, ok, detail)


def test_criterion_02_gaussian_global(gauss_runs, pm_runs, oracles, report):
    ok, detail, value = _global_check(gauss_runs, -82.75, oracles["gauss"].best_elbo)
    pm_best = max(-r.ubd for r in pm_runs)
    above = value > pm_best
    report(2, ok and above, f"{detail}, above point-mass optimum {pm_best:.4f}: {above}")


def test_criterion_03_vem_restarts(data, oracles, report):
    res = restart_experiment(VemConfig(ModelVariant("pm")), data, 100,
                             reference=oracles["pm"].best_elbo)
    counts = res.counts
    ok = counts["Local"] >= 50 and counts["Global"] >= 5
    report(3, ok, f"Local {counts['Local']}, Global {counts['Global']} (need >=50 and >=5)")


def test_criterion_04_bound_monotonicity(pm_runs, gauss_runs, problems, report):
    bad = []
    for kind, runs in (("pm", pm_runs), ("gauss", gauss_runs)):
        pr = problems[kind]
        for s, run in enumerate(runs):
            ubd = np.array([r.ubd for r in run.trace])
            lbd = np.array([r.lbd for r in run.trace])
            # minimisation units: ELBO lbd is -ubd here and the incumbent must not fall below it
            incumbent = pr.objective(run.alpha, run.beta)
            if not (np.all(np.diff(ubd) <= 0) and np.all(np.diff(lbd) >= 0)
                    and np.all(lbd <= ubd + 2e-8) and incumbent <= run.ubd + 1e-9):
                bad.append(f"{kind}:{s}")
    n = len(pm_runs) + len(gauss_runs)
    report(4, not bad, f"{n - len(bad)}/{n} traces monotone and sandwiched {bad[:5]}")


def test_criterion_05_closed_form_matches_kernel(problems, report):
    worst = 0.0
    for kind in ("gmm", "pm", "gauss"):
        p = problems[kind]
        for s in range(20):
            b = random_feasible_point(p.beta, 500 + s)
            a_cf, _ = p.primal_closed_form(b)
            program = ConvexProgram(p.alpha, ConvexFunction(
                lambda a: p.objective(a, b), lambda a: p.grad_alpha(a, b), lambda a: p.hess_alpha(a, b)))
            sol = solve_convex(program, tol=1e-12)
            worst = max(worst, float(np.max(np.abs(sol.x_star - a_cf))))
    report(5, worst <= 1e-6, f"max |closed form - kernel| {worst:.2e} over 60 points")


def test_criterion_06_derivatives(data, report):
    parts, ok = [], True
    for kind in ("gmm", "pm", "gauss"):
        r = model_derivative_report(ModelVariant(kind), data, n_points=100)
        grad = max(r["grad_error_alpha"], r["grad_error_beta"])
        eig = min(r["min_eig_alpha"], r["min_eig_beta"])
        ok &= grad <= 1e-4 and eig >= -1e-8
        parts.append(f"{kind} grad {grad:.1e} eigmin {eig:.1e}")
    report(6, ok, ", ".join(parts))


def test_criterion_07_analytic_oracle(data, report):
    best = stationary_gamma(data)
    gamma_ok = abs(mle_gamma(data) - 211.5) <= 1e-6 and abs(best - mle_gamma(data)) <= 1e-6
    p = build_problem(ModelVariant("pm", convention="full"), data)
    violations = 0
    for s in range(1000):
        a = random_feasible_point(p.alpha, 2 * s)
        b = random_feasible_point(p.beta, 2 * s + 1)
        violations += -p.objective(a, b) > analytic_loglik(-1 / (2 * b[-1]), data)
    report(7, gamma_ok and violations == 0,
           f"mle_gamma {mle_gamma(data)}, 1-d maximiser {best:.9f}, ELBO above loglik at "
           f"{violations}/1000 points")


def test_criterion_08_vem_monotone_kkt(data, report):
    parts, ok = [], True
    for kind in ("gmm", "pm", "gauss"):
        variant = ModelVariant(kind)
        sampler = InitSampler.for_data(data, 2)
        drop = kkt = 0.0
        for seed in range(50):
            res = vem_run(VemConfig(variant), data, sampler.sample(variant, data, np.random.default_rng(seed)))
            drop = max(drop, float(-np.min(np.diff(res.trace), initial=0.0)))
            if res.converged:
                kkt = max(kkt, elbo_kkt_residual(variant, res.params, res.vparams, data))
        ok &= drop <= 1e-10 and kkt <= 1e-6
        parts.append(f"{kind} max drop {drop:.1e} max KKT {kkt:.1e}")
    report(8, ok, ", ".join(parts))


def test_criterion_09_fan_size(pm_runs, problems, report):
    dim = problems["pm"].beta.dim
    most = max(r.subproblems_solved for run in pm_runs for r in run.trace)
    report(9, dim == 9 and most <= 16, f"beta dimension {dim}, most subproblems per iteration {most}")


CLI_CASES = [
    (["solve", "--no-timing"], "--trace"),
    (["compare", "--max-iter", "5", "--no-timing"], "--out"),
    (["restarts", "--n", "100", "--reference", "-84.0319"], "--out"),
    (["oracle", "--model", "gauss", "--n-starts", "200"], "--out"),
    (["vem", "--model", "gauss", "--seed", "4"], "--trace"),
]


def test_criterion_10_thread_determinism(tmp_path, report):
    differing = []
    for i, (argv, flag) in enumerate(CLI_CASES):
        outputs = []
        for threads in (1, 2, 4):
            path = tmp_path / f"{i}-{threads}.csv"
            cli.main(argv + [flag, str(path), "--threads", str(threads),
                             "--summary", str(tmp_path / f"{i}-{threads}.json")])
            outputs.append(path.read_bytes())
        if len(set(outputs)) != 1:
            differing.append(argv[0])
    report(10, not differing,
           f"{len(CLI_CASES) - len(differing)}/{len(CLI_CASES)} commands byte-identical for "
           f"threads 1, 2, 4 {differing}")
