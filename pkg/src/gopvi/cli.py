"""Command-line front end: global solves, VEM runs, restart studies, oracle and comparisons.

Every command writes CSV (comma separated, ``repr`` floats, no locale
formatting) and prints a JSON summary to stdout or ``--summary``.

Exit codes: 0 success, 2 bad input, 3 iteration limit or no convergence,
4 internal solver error, 5 failed assertion.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import time
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .core import GopError, random_feasible_point
from .gop import GopStatus, IterationLimits, gop_solve
from .models import (
    Convention,
    Dataset,
    ModelKind,
    ModelVariant,
    build_problem,
    minimal_dataset,
    unpack,
)
from .oracle import OracleConfig, certify_optimum
from .vem import InitSampler, VemConfig, VemStatus, restart_experiment, vem_run

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_ITER_LIMIT = 3
EXIT_INTERNAL = 4
EXIT_ASSERTION = 5

TRACE_HEADER = ["iter", "elapsed_s", "ubd", "lbd", "pool_live", "subproblems_solved"]
RESTART_HEADER = ["restart", "seed", "final_elbo", "iters", "class"]
ORACLE_HEADER = ["optimum", "elbo", "count", "first_start", "boundary"]
COMPARE_HEADER = ["variant", "eps", "elbo", "iterations", "seconds"]
VEM_HEADER = ["iter", "elbo"]
TIMING_EPS = (1.0, 0.1, 0.01)


class InputError(Exception):
    """Invalid flags, config or data; maps to exit code 2."""


# ---------------------------------------------------------------------------
# settings: defaults < config file < explicit flags

COMMON = {
    "model": "pm",
    "data": None,
    "k": 2,
    "seed": 0,
    "threads": None,
    "convention": "proportional",
    "summary": None,
    "no_timing": False,
}

DEFAULTS = {
    "solve": {**COMMON, "eps": 0.01, "trace": None, "max_iter": 200},
    "vem": {**COMMON, "trace": None, "init_at_optimum": False, "e_order": "nu_first",
            "max_outer": 10_000, "tol": 1e-8, "oracle_starts": 1000},
    "restarts": {**COMMON, "n": 100, "out": None, "threshold": 1.0, "reference": None,
                 "e_order": "nu_first", "oracle_starts": 1000},
    "oracle": {**COMMON, "n_starts": 1000, "out": None, "cluster_radius": 1e-2},
    "compare": {**COMMON, "eps": 0.01, "out": None, "timing": False, "max_iter": 200},
}


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="flat JSON object of settings; flags override it")
    p.add_argument("--model", choices=[m.value for m in ModelKind])
    p.add_argument("--data", help="text file, one observation per line (default: the minimal dataset)")
    p.add_argument("--k", type=int, help="number of clusters")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int, help="worker threads (default: all cores)")
    p.add_argument("--convention", choices=[c.value for c in Convention])
    p.add_argument("--summary", help="write the JSON summary here instead of stdout")
    p.add_argument("--no-timing", dest="no_timing", action="store_const", const=True,
                   help="write 0 for every wall-clock column")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gopvi", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"gopvi {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="global solve of one model")
    _add_common(p)
    p.add_argument("--eps", type=float, help="convergence tolerance on ubd - lbd")
    p.add_argument("--trace", help="trace CSV path")
    p.add_argument("--max-iter", dest="max_iter", type=int)

    p = sub.add_parser("vem", help="one variational EM run")
    _add_common(p)
    p.add_argument("--trace", help="ELBO-per-iteration CSV path")
    p.add_argument("--init-at-optimum", dest="init_at_optimum", action="store_const", const=True)
    p.add_argument("--e-order", dest="e_order", choices=["nu_first", "tau_first"])
    p.add_argument("--max-outer", dest="max_outer", type=int)
    p.add_argument("--tol", type=float)
    p.add_argument("--oracle-starts", dest="oracle_starts", type=int)

    p = sub.add_parser("restarts", help="random-restart VEM study")
    _add_common(p)
    p.add_argument("--n", type=int, help="number of restarts")
    p.add_argument("--out", help="per-restart CSV path")
    p.add_argument("--threshold", type=float)
    p.add_argument("--reference", type=float, help="optimal ELBO (default: consult the oracle)")
    p.add_argument("--e-order", dest="e_order", choices=["nu_first", "tau_first"])
    p.add_argument("--oracle-starts", dest="oracle_starts", type=int)

    p = sub.add_parser("oracle", help="multistart certification of the optimum")
    _add_common(p)
    p.add_argument("--n-starts", dest="n_starts", type=int)
    p.add_argument("--out", help="distinct-optima CSV path")
    p.add_argument("--cluster-radius", dest="cluster_radius", type=float)

    p = sub.add_parser("compare", help="point-mass versus Gaussian global optima")
    _add_common(p)
    p.add_argument("--eps", type=float)
    p.add_argument("--out", help="table CSV path")
    p.add_argument("--timing", action="store_const", const=True,
                   help="also solve at eps 1.0, 0.1 and 0.01")
    p.add_argument("--max-iter", dest="max_iter", type=int)
    return parser


def resolve_settings(args: argparse.Namespace) -> dict:
    defaults = DEFAULTS[args.command]
    settings = dict(defaults)
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text())
        except (OSError, ValueError) as exc:
            raise InputError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise InputError("config file must hold a JSON object")
        unknown = sorted(set(loaded) - set(defaults))
        if unknown:
            raise InputError(f"unknown config keys: {', '.join(unknown)}")
        settings.update(loaded)
    for key in defaults:
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    _validate(args.command, settings)
    return settings


def _validate(command: str, s: dict):
    def positive(key, label):
        if key in s and s[key] is not None and not (isinstance(s[key], (int, float)) and s[key] > 0):
            raise InputError(f"{label} must be positive")

    if s["model"] not in [m.value for m in ModelKind]:
        raise InputError(f"unknown model {s['model']!r}")
    if s["convention"] not in [c.value for c in Convention]:
        raise InputError(f"unknown convention {s['convention']!r}")
    positive("eps", "epsilon")
    positive("k", "k")
    positive("n", "n")
    positive("n_starts", "n_starts")
    positive("max_iter", "max_iter")
    positive("max_outer", "max_outer")
    positive("oracle_starts", "oracle_starts")
    positive("tol", "tol")
    positive("threshold", "threshold")
    positive("cluster_radius", "cluster_radius")
    if s["threads"] is not None and not (isinstance(s["threads"], int) and s["threads"] >= 1):
        raise InputError("threads must be at least 1")
    for key in ("k", "seed", "n", "n_starts", "max_iter", "max_outer", "oracle_starts"):
        if key in s and not isinstance(s[key], int):
            raise InputError(f"{key} must be an integer")
    if s["seed"] < 0:
        raise InputError("seed must be non-negative")
    if s.get("e_order") not in (None, "nu_first", "tau_first"):
        raise InputError("e_order must be nu_first or tau_first")


def _threads(s: dict) -> int:
    return s["threads"] or os.cpu_count() or 1


def _dataset(s: dict) -> Dataset:
    if s["data"] is None:
        return minimal_dataset()
    try:
        return Dataset.load(s["data"])
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot load data {s['data']}: {exc}") from exc


def _variant(s: dict, kind: Optional[str] = None) -> ModelVariant:
    return ModelVariant(kind or s["model"], s["k"], s["convention"])


# ---------------------------------------------------------------------------
# output


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path: Optional[str], header: list, rows: list):
    """Write rows (dicts keyed by header) to ``path``; nothing when ``path`` is None."""
    if path is None:
        return
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(row[h]) for h in header])
    Path(path).write_text(buf.getvalue())


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    return x


def emit_summary(s: dict, summary: dict):
    text = json.dumps(_jsonable(summary), indent=2, sort_keys=True) + "\n"
    if s["summary"]:
        Path(s["summary"]).write_text(text)
    else:
        sys.stdout.write(text)


def _params_dict(variant: ModelVariant, alpha, beta, N: int) -> dict:
    params, vparams = unpack(variant, alpha, beta, N)
    out = {"pi": params.pi, "tau": vparams.tau}
    if params.mu is not None:
        out["mu"] = params.mu
    if params.eta_m is not None:
        out["eta_m"] = params.eta_m
        out["Gamma"] = params.Gamma
    if vparams.nu is not None:
        out["nu"] = vparams.nu
    if vparams.gamma is not None:
        out["gamma"] = vparams.gamma
    return out


def trace_rows(result, no_timing: bool) -> list:
    """Trace in ELBO units: ``ubd`` bounds the optimal ELBO from above, ``lbd`` is the incumbent."""
    return [{"iter": r.iter, "elapsed_s": 0.0 if no_timing else r.elapsed_s,
             "ubd": -r.lbd, "lbd": -r.ubd, "pool_live": r.pool_live,
             "subproblems_solved": r.subproblems_solved} for r in result.trace]


# ---------------------------------------------------------------------------
# commands


def _gop(variant: ModelVariant, data: Dataset, s: dict, eps: float):
    problem = build_problem(variant, data)
    beta1 = random_feasible_point(problem.beta, s["seed"])
    limits = IterationLimits(max_iter=s["max_iter"], threads=_threads(s))
    return gop_solve(problem, beta1, eps, limits, seed=s["seed"])


def cmd_solve(s: dict) -> int:
    data, variant = _dataset(s), _variant(s)
    result = _gop(variant, data, s, s["eps"])
    write_csv(s["trace"], TRACE_HEADER, trace_rows(result, s["no_timing"]))
    emit_summary(s, {
        "command": "solve", "model": variant.kind.value, "k": variant.K,
        "convention": variant.convention.value, "eps": s["eps"], "seed": s["seed"],
        "status": result.status.value, "iterations": result.iterations,
        "elbo": -result.ubd, "elbo_upper_bound": -result.lbd, "gap": result.gap,
        "subproblems": result.subproblems_total, "null_subproblems": result.null_count,
        "kernel_warnings": result.warning_count,
        "elapsed_s": 0.0 if s["no_timing"] else result.elapsed_s,
        "incumbent": _params_dict(variant, result.alpha, result.beta, data.N),
    })
    return EXIT_OK if result.status is GopStatus.CONVERGED else EXIT_ITER_LIMIT


def _optimum_start(variant: ModelVariant, data: Dataset, s: dict):
    """A VEM fixed point in the basin of the certified optimum."""
    cfg = OracleConfig(n_starts=s["oracle_starts"], seed=s["seed"], threads=_threads(s))
    best = certify_optimum(variant, data, cfg)
    params, vparams = unpack(variant, best.best_alpha, best.best_beta, data.N)
    vcfg = VemConfig(variant, tol=s["tol"], max_outer=s["max_outer"], e_order=s["e_order"])
    settled = vem_run(vcfg, data, (params, vparams))
    return (settled.params, settled.vparams), best.best_elbo


def cmd_vem(s: dict) -> int:
    data, variant = _dataset(s), _variant(s)
    config = VemConfig(variant, tol=s["tol"], max_outer=s["max_outer"], e_order=s["e_order"],
                       seed=s["seed"])
    reference = None
    if s["init_at_optimum"]:
        init, reference = _optimum_start(variant, data, s)
    else:
        init = InitSampler.for_data(data, variant.K).sample(
            variant, data, np.random.default_rng(s["seed"]))
    result = vem_run(config, data, init)
    write_csv(s["trace"], VEM_HEADER, [{"iter": i, "elbo": e} for i, e in enumerate(result.trace)])
    from .vem import elbo_kkt_residual

    kkt = (elbo_kkt_residual(variant, result.params, result.vparams, data)
           if result.status is not VemStatus.DIVERGED else float("nan"))
    summary = {
        "command": "vem", "model": variant.kind.value, "k": variant.K, "seed": s["seed"],
        "convention": variant.convention.value, "e_order": s["e_order"],
        "status": result.status.value, "iterations": result.iterations, "elbo": result.elbo,
        "kkt_residual": kkt,
    }
    if reference is not None:
        summary["oracle_elbo"] = reference
    emit_summary(s, summary)
    return EXIT_OK if result.converged else EXIT_ITER_LIMIT


def cmd_restarts(s: dict) -> int:
    data, variant = _dataset(s), _variant(s)
    config = VemConfig(variant, e_order=s["e_order"], seed=s["seed"])
    reference = s["reference"]
    if reference is None:
        cfg = OracleConfig(n_starts=s["oracle_starts"], seed=s["seed"], threads=_threads(s))
        reference = certify_optimum(variant, data, cfg).best_elbo
    report = restart_experiment(config, data, s["n"], reference=reference,
                                threshold=s["threshold"], threads=_threads(s))
    write_csv(s["out"], RESTART_HEADER, report.rows)
    emit_summary(s, {
        "command": "restarts", "model": variant.kind.value, "k": variant.K, "seed": s["seed"],
        "n": s["n"], "reference": reference, "threshold": s["threshold"],
        "e_order": s["e_order"], "counts": report.counts,
    })
    return EXIT_OK


def cmd_oracle(s: dict) -> int:
    data, variant = _dataset(s), _variant(s)
    cfg = OracleConfig(n_starts=s["n_starts"], seed=s["seed"], cluster_radius=s["cluster_radius"],
                       threads=_threads(s))
    result = certify_optimum(variant, data, cfg)
    write_csv(s["out"], ORACLE_HEADER, result.rows())
    emit_summary(s, {"command": "oracle", "model": variant.kind.value, "k": variant.K,
                     "seed": s["seed"], **result.summary(),
                     "optimum": _params_dict(variant, result.best_alpha, result.best_beta, data.N)})
    return EXIT_OK


def cmd_compare(s: dict) -> int:
    data = _dataset(s)
    eps_values = TIMING_EPS if s["timing"] else (s["eps"],)
    rows, status = [], EXIT_OK
    best = {}
    for kind in (ModelKind.POINT_MASS, ModelKind.GAUSSIAN):
        variant = _variant(s, kind.value)
        for eps in eps_values:
            start = time.perf_counter()
            result = _gop(variant, data, s, eps)
            seconds = time.perf_counter() - start
            if result.status is not GopStatus.CONVERGED:
                status = EXIT_ITER_LIMIT
            rows.append({"variant": kind.value, "eps": eps, "elbo": -result.ubd,
                         "iterations": result.iterations,
                         "seconds": 0.0 if s["no_timing"] else seconds})
            best[kind] = max(best.get(kind, -math.inf), -result.ubd)
    write_csv(s["out"], COMPARE_HEADER, rows)
    ordered = best[ModelKind.GAUSSIAN] >= best[ModelKind.POINT_MASS]
    emit_summary(s, {"command": "compare", "k": s["k"], "seed": s["seed"],
                     "convention": s["convention"], "rows": rows,
                     "gaussian_at_least_point_mass": ordered})
    if not ordered:
        sys.stderr.write("assertion failed: Gaussian optimum below point-mass optimum\n")
        return EXIT_ASSERTION
    return status


COMMANDS = {"solve": cmd_solve, "vem": cmd_vem, "restarts": cmd_restarts,
            "oracle": cmd_oracle, "compare": cmd_compare}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        settings = resolve_settings(args)
        return COMMANDS[args.command](settings)
    except InputError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_INPUT
    except (GopError, ArithmeticError, np.linalg.LinAlgError) as exc:
        sys.stderr.write(f"internal error: {exc}\n")
        return EXIT_INTERNAL


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
