"""Command-line entry point.

Exit codes: 0 success (including partial replication failures, which are
counted in the summary), 2 usage or configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .balance import SolverOptions
from .comparator import WzConfig, estimate_wz, plug_in_ape
from .data import ColumnError, read_csv
from .estimator import EstimationConfig, decompose_estimate, estimate_ape
from .pilot import PilotOptions, cross_validate, fit_to_lambda
from .simulate import DgpSpec, StudyConfig, emit_boxplot_table, run_study, sample_dgp, stream, tau_oracle

log = logging.getLogger("amlape")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3


class NumericalFailure(RuntimeError):
    pass


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        obj = float(obj)
        return obj if math.isfinite(obj) else None
    return obj


def _write_json(payload: dict, path: str | None):
    text = json.dumps(_clean(payload), sort_keys=True, indent=2) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _solver(cfg):
    return SolverOptions(max_iter=cfg.max_iter, abs_tol=cfg.tol, method=cfg.solver_method,
                         smoothing_fallback=cfg.smoothing_fallback, diagnostics_path=cfg.diagnostics)


def _envelope(cfg, **body):
    # Output locations are left out so identical runs give identical bytes.
    echo = {k: v for k, v in cfg.to_dict().items() if k not in ("output", "diagnostics")}
    return {"schema_version": cfgmod.SCHEMA_VERSION, "command": cfg.command, "config": echo, **body}


def cmd_estimate(cfg) -> int:
    try:
        data = read_csv(cfg.input, cfg.response)
        focal = data.column_index(cfg.focal)
    except (ColumnError, KeyError) as exc:
        raise cfgmod.ConfigError([str(exc).strip("'\"")]) from None
    except ValueError as exc:
        raise cfgmod.ConfigError([str(exc)]) from None
    lam = cfg.lam
    try:
        if lam is None and cfg.estimator != "aml":
            lam = cross_validate(data, cfg.link, cfg.cv_folds, cfg.seed, patience=cfg.cv_patience).lam
        out = {"focal_column": data.feature_names[focal], "focal_index": focal, "n": data.n, "p": data.p}
        for est in cfg.estimators():
            if est == "aml":
                ec = EstimationConfig(folds=cfg.folds, alpha=cfg.alpha, seed=cfg.seed, lam=lam,
                                      cv_folds=cfg.cv_folds, cv_patience=cfg.cv_patience, solver=_solver(cfg))
                out["aml"] = estimate_ape(data, cfg.link, focal, ec).to_dict()
            elif est == "wz":
                out["wz"] = estimate_wz(data, cfg.link, focal, WzConfig(lam=lam, seed=cfg.seed)).to_dict()
            elif est == "plugin":
                fit = fit_to_lambda(data, cfg.link, lam, PilotOptions())
                out["plugin"] = {"tau_hat": plug_in_ape(fit.theta_hat, data, cfg.link, focal), "lambda": lam,
                                 "support": fit.support.tolist()}
    except (ArithmeticError, RuntimeError, np.linalg.LinAlgError) as exc:
        raise NumericalFailure(str(exc)) from exc
    _write_json(_envelope(cfg, result=out), cfg.output)
    return EXIT_OK


def cmd_simulate(cfg) -> int:
    study = StudyConfig(designs=tuple(cfg.designs), n_grid=tuple(cfg.n_grid), replications=cfg.replications,
                        estimators=tuple(cfg.estimators()), seed=cfg.seed, oracle_draws=cfg.oracle_draws,
                        folds=cfg.folds, alpha=cfg.alpha, cv_folds=cfg.cv_folds,
                        cv_patience=cfg.cv_patience if cfg.cv_patience is not None else 10,
                        workers=cfg.workers,
                        solver={"max_iter": cfg.max_iter, "abs_tol": cfg.tol, "method": cfg.solver_method,
                                "smoothing_fallback": cfg.smoothing_fallback})
    report = run_study(study)
    failed = sum(not r.ok for r in report.records)
    if report.records and failed == len(report.records):
        raise NumericalFailure("every replication failed")
    if failed:
        log.warning("%d of %d estimates failed; see n_failed in the summary", failed, len(report.records))
    long_path, summary_path = emit_boxplot_table(report, cfg.output)
    log.info("wrote %s and %s", long_path, summary_path)
    return EXIT_OK


def cmd_oracle(cfg) -> int:
    rows = []
    for design in cfg.designs:
        for n in cfg.n_grid:
            spec = DgpSpec.preset(design, n)
            tau, se = tau_oracle(spec, cfg.oracle_draws, seed=cfg.seed)
            rows.append({"design": design, "n": n, "p": spec.p, "tau": tau, "mc_se": se, "draws": cfg.oracle_draws})
    _write_json(_envelope(cfg, result=rows), cfg.output)
    return EXIT_OK


def cmd_decompose(cfg) -> int:
    rows = []
    for ci, design in enumerate(cfg.designs):
        for n in cfg.n_grid:
            spec = DgpSpec.preset(design, n)
            data = sample_dgp(spec, stream(cfg.seed, ci, n))
            ec = EstimationConfig(folds=cfg.folds, alpha=cfg.alpha, seed=cfg.seed, lam=cfg.lam,
                                  cv_folds=cfg.cv_folds, cv_patience=cfg.cv_patience, solver=_solver(cfg))
            try:
                est = estimate_ape(data, spec.link, 0, ec)
                parts = decompose_estimate(data, spec.theta, est, spec.link)
            except (ArithmeticError, RuntimeError) as exc:
                raise NumericalFailure(str(exc)) from exc
            folds = []
            for rec, dec in zip(est.per_fold, parts):
                d = vars(dec).copy()
                d["fold"] = rec.fold
                d["holder_bound"] = dec.imbalance * dec.theta_l1_error
                folds.append(d)
            rows.append({"design": design, "n": n, "tau_hat": est.tau_hat, "folds": folds})
    _write_json(_envelope(cfg, result=rows), cfg.output)
    return EXIT_OK


COMMAND_FUNCS = {"estimate": cmd_estimate, "simulate": cmd_simulate, "oracle": cmd_oracle,
                 "decompose": cmd_decompose}


def _add_common(p: argparse.ArgumentParser):
    a = p.add_argument
    a("--config", help="flat TOML file whose keys mirror these flags")
    a("--input", help="CSV with a header row")
    a("--response", help="name of the response column")
    a("--focal", help="name of the focal feature column")
    a("--link", help="logistic | probit | identity")
    a("--folds", type=int, help="cross-fitting folds (1 disables cross-fitting)")
    a("--alpha", type=float, help="confidence intervals have level 1 - alpha")
    a("--seed", type=int)
    a("--lambda", dest="lam", type=float, help="fixed pilot penalty (default: cross-validated)")
    a("--cv-folds", type=int)
    a("--cv-patience", type=int)
    a("--estimator", help="aml | wz | plugin | all")
    a("--output", help="output file (JSON, or long CSV for simulate)")
    a("--max-iter", type=int, help="balance solver iteration budget")
    a("--tol", type=float, help="balance solver tolerance")
    a("--solver-method", help="admm | smoothed")
    a("--smoothing-fallback", help="true | false")
    a("--diagnostics", help="append per-solve weight diagnostics as JSON lines")
    a("--designs", help="comma-separated designs")
    a("--n-grid", help="comma-separated sample sizes (p = 2n)")
    a("--replications", type=int)
    a("--oracle-draws", type=int)
    a("--workers", type=int, help="parallel replications (default from AMLAPE_THREADS)")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="amlape", description="Debiased average partial effects.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in cfgmod.COMMANDS:
        _add_common(sub.add_parser(name))
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    values = vars(args).copy()
    verbose = values.pop("verbose")
    del verbose
    config_path = values.pop("config")
    try:
        merged = cfgmod.load_file(config_path) if config_path else {}
        merged.update({k: v for k, v in values.items() if v is not None})
        merged["command"] = args.command
        cfg = cfgmod.build(merged)
        return COMMAND_FUNCS[cfg.command](cfg)
    except cfgmod.ConfigError as exc:
        for problem in exc.problems:
            print(f"amlape: error: {problem}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalFailure as exc:
        print(f"amlape: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
