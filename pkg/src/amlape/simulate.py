"""Simulation designs, the Monte Carlo estimand oracle, and replication studies."""

from __future__ import annotations

import csv
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import Dataset
from .links import get_link

log = logging.getLogger(__name__)

DESIGNS = ("uncorrelated", "correlated")
ESTIMATORS = ("aml", "wz", "plugin")
# 1-based covariates 11..20 drive X_1 in the correlated design
_CONFOUNDERS = slice(10, 20)
_LOADING = math.sqrt(1.0 / 30.0)
_RESID_SD = math.sqrt(2.0 / 3.0)


def preset_theta(p: int) -> np.ndarray:
    """theta_1 = -1/10 and theta_k = 20 / (5 + k)^2 for k = 2..p (1-based k)."""
    k = np.arange(1, p + 1, dtype=float)
    theta = 20.0 / (5.0 + k) ** 2
    theta[0] = -0.1
    return theta


def stream(seed: int, *key: int) -> np.random.Generator:
    """Counter-based Philox generator for the substream ``key`` of ``seed``."""
    ss = np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


@dataclass
class DgpSpec:
    design: str = "uncorrelated"
    n: int = 400
    p: int | None = None
    link: str = "logistic"
    seed: int = 0
    theta: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.design not in DESIGNS:
            raise ValueError(f"unknown design {self.design!r}")
        if self.p is None:
            self.p = 2 * self.n
        if self.theta is None:
            self.theta = preset_theta(self.p)
        self.theta = np.asarray(self.theta, dtype=float)
        if self.theta.shape != (self.p,):
            raise ValueError("theta length must equal p")
        get_link(self.link)

    @classmethod
    def preset(cls, design: str, n: int, seed: int = 0) -> DgpSpec:
        return cls(design=design, n=n, p=2 * n, seed=seed)

    def sample_X(self, m: int, rng: np.random.Generator) -> np.ndarray:
        X = rng.standard_normal((m, self.p))
        if self.design == "correlated":
            # column 0 holds the residual draw before it is replaced
            X[:, 0] = _LOADING * X[:, _CONFOUNDERS].sum(axis=1) + _RESID_SD * X[:, 0]
        return X


def sample_dgp(spec: DgpSpec, rng: np.random.Generator | None = None) -> Dataset:
    """Draw ``n`` observations. Binary links give Bernoulli responses; identity adds N(0, 1) noise."""
    rng = rng if rng is not None else stream(spec.seed)
    X = spec.sample_X(spec.n, rng)
    eta = X @ spec.theta
    link = get_link(spec.link)
    if link.is_binary:
        Y = (rng.random(spec.n) < link.mean(eta)).astype(float)
    else:
        Y = eta + rng.standard_normal(spec.n)
    return Dataset(X, Y, [f"x{k + 1}" for k in range(spec.p)])


def tau_oracle(spec: DgpSpec, mc_draws: int = 1_000_000, seed: int = 0,
               focal_index: int = 0, chunk: int = 10_000) -> tuple[float, float]:
    """Monte Carlo value of ``theta_j E[psi(X'theta)]`` and its standard error."""
    if mc_draws < 100_000:
        raise ValueError("mc_draws must be at least 1e5")
    link = get_link(spec.link)
    rng = stream(seed, 0xA9E)
    total = total_sq = 0.0
    left = mc_draws
    while left > 0:
        m = min(chunk, left)
        left -= m
        psi = link.deriv(spec.sample_X(m, rng) @ spec.theta)
        total += psi.sum()
        total_sq += psi @ psi
    mean = total / mc_draws
    var = max(total_sq / mc_draws - mean * mean, 0.0)
    th = spec.theta[focal_index]
    return float(th * mean), float(abs(th) * math.sqrt(var * mc_draws / (mc_draws - 1)) / math.sqrt(mc_draws))


# -- replication studies ----------------------------------------------------


@dataclass
class StudyConfig:
    designs: tuple[str, ...] = DESIGNS
    n_grid: tuple[int, ...] = (200, 400, 800)
    replications: int = 20
    estimators: tuple[str, ...] = ("aml", "wz")
    seed: int = 0
    oracle_draws: int = 1_000_000
    folds: int = 5
    alpha: float = 0.05
    cv_folds: int = 10
    cv_patience: int | None = 10
    workers: int | None = None
    solver: dict = field(default_factory=dict)
    pilot: dict = field(default_factory=dict)


@dataclass
class Record:
    design: str
    n: int
    estimator: str
    replication: int
    tau_hat: float
    se: float = float("nan")
    ci_low: float = float("nan")
    ci_high: float = float("nan")
    error: str = ""

    @property
    def ok(self) -> bool:
        return not self.error


RECORD_COLUMNS = ("design", "n", "estimator", "replication", "tau_hat", "se", "ci_low", "ci_high", "error")
SUMMARY_COLUMNS = ("design", "n", "estimator", "n_ok", "n_failed", "mean", "median", "iqr", "bias",
                   "variance", "rmse", "coverage", "tau_oracle", "oracle_se", "oracle_draws")


@dataclass
class SimReport:
    records: list[Record]
    oracles: dict  # (design, n) -> (tau, mc_se, draws)
    summary: list[dict] = field(default_factory=list)

    def cell(self, design: str, n: int, estimator: str) -> list[Record]:
        return [r for r in self.records if (r.design, r.n, r.estimator) == (design, n, estimator)]

    def summary_row(self, design: str, n: int, estimator: str) -> dict:
        for row in self.summary:
            if (row["design"], row["n"], row["estimator"]) == (design, n, estimator):
                return row
        raise KeyError((design, n, estimator))


def summarize(records: list[Record], oracles: dict) -> list[dict]:
    """Bias, variance (ddof 0), RMSE and CI coverage per (design, n, estimator)."""
    keys = []
    for r in records:
        k = (r.design, r.n, r.estimator)
        if k not in keys:
            keys.append(k)
    rows = []
    for design, n, est in keys:
        cell = [r for r in records if (r.design, r.n, r.estimator) == (design, n, est)]
        ok = [r for r in cell if r.ok]
        tau, mc_se, draws = oracles[(design, n)]
        t = np.array([r.tau_hat for r in ok])
        row = {"design": design, "n": n, "estimator": est, "n_ok": len(ok),
               "n_failed": len(cell) - len(ok), "tau_oracle": tau, "oracle_se": mc_se,
               "oracle_draws": draws}
        if ok:
            q1, q3 = np.percentile(t, [25, 75])
            bias = float(t.mean() - tau)
            var = float(t.var())
            lo = np.array([r.ci_low for r in ok])
            hi = np.array([r.ci_high for r in ok])
            has_ci = np.isfinite(lo) & np.isfinite(hi)
            cover = float(np.mean((lo <= tau) & (tau <= hi))) if has_ci.all() else float("nan")
            row.update(mean=float(t.mean()), median=float(np.median(t)), iqr=float(q3 - q1),
                       bias=bias, variance=var, rmse=math.sqrt(bias * bias + var), coverage=cover)
        else:
            row.update({k: float("nan") for k in ("mean", "median", "iqr", "bias", "variance",
                                                   "rmse", "coverage")})
        rows.append(row)
    return rows


def _estimation_config(cfg: StudyConfig, seed: int, lam: float):
    from .balance import SolverOptions
    from .estimator import EstimationConfig
    from .pilot import PilotOptions

    return EstimationConfig(folds=cfg.folds, alpha=cfg.alpha, seed=seed, lam=lam,
                            cv_folds=cfg.cv_folds, cv_patience=cfg.cv_patience,
                            pilot=PilotOptions(**cfg.pilot), solver=SolverOptions(**cfg.solver))


def run_replication(cfg: StudyConfig, cell: int, design: str, n: int, rep: int) -> list[Record]:
    """One dataset, every estimator. The CV pilot penalty is shared across estimators."""
    from .comparator import WzConfig, estimate_wz, plug_in_ape
    from .estimator import estimate_ape
    from .pilot import PilotOptions, cross_validate, fit_to_lambda

    spec = DgpSpec.preset(design, n)
    data = sample_dgp(spec, stream(cfg.seed, cell, rep))
    split_seed = int(stream(cfg.seed, cell, rep, 1).integers(2**31))
    out = []
    try:
        lam = cross_validate(data, spec.link, cfg.cv_folds, split_seed, PilotOptions(**cfg.pilot),
                             patience=cfg.cv_patience).lam
    except Exception as exc:  # noqa: BLE001 - a failed replication is data
        return [Record(design, n, e, rep, float("nan"), error=f"cv: {exc}") for e in cfg.estimators]
    for est in cfg.estimators:
        try:
            if est == "aml":
                r = estimate_ape(data, spec.link, 0, _estimation_config(cfg, split_seed, lam))
                out.append(Record(design, n, est, rep, r.tau_hat, r.se, r.ci_low, r.ci_high))
            elif est == "wz":
                r = estimate_wz(data, spec.link, 0, WzConfig(lam=lam, pilot=PilotOptions(**cfg.pilot)))
                out.append(Record(design, n, est, rep, r.tau_hat))
            elif est == "plugin":
                fit = fit_to_lambda(data, spec.link, lam, PilotOptions(**cfg.pilot))
                out.append(Record(design, n, est, rep, plug_in_ape(fit.theta_hat, data, spec.link, 0)))
            else:
                raise ValueError(f"unknown estimator {est!r}")
        except Exception as exc:  # noqa: BLE001
            log.warning("replication %s/%s/%s/%s failed: %s", design, n, est, rep, exc)
            out.append(Record(design, n, est, rep, float("nan"), error=str(exc) or type(exc).__name__))
    return out


def _run_task(args):
    return run_replication(*args)


def default_workers() -> int:
    return max(1, int(os.environ.get("AMLAPE_THREADS", "1")))


def run_study(cfg: StudyConfig) -> SimReport:
    """Run every (design, n) cell for ``cfg.replications`` fresh datasets.

    Results are ordered by (cell, replication, estimator) whatever the worker
    count, so reports are reproducible from ``cfg.seed`` alone.
    """
    if cfg.replications < 1:
        raise ValueError("replications must be at least 1")
    if not cfg.estimators:
        raise ValueError("no estimators requested")
    for e in cfg.estimators:
        if e not in ESTIMATORS:
            raise ValueError(f"unknown estimator {e!r}")
    cells = [(d, n) for d in cfg.designs for n in cfg.n_grid]
    tasks = [(cfg, ci, d, n, r) for ci, (d, n) in enumerate(cells) for r in range(cfg.replications)]
    workers = cfg.workers or default_workers()
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_run_task, tasks))
    else:
        results = [_run_task(t) for t in tasks]
    records = [rec for res in results for rec in res]
    oracles = {}
    for ci, (d, n) in enumerate(cells):
        tau, se = tau_oracle(DgpSpec.preset(d, n), cfg.oracle_draws, seed=cfg.seed + 7919 * ci)
        oracles[(d, n)] = (tau, se, cfg.oracle_draws)
    return SimReport(records, oracles, summarize(records, oracles))


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def emit_boxplot_table(report: SimReport, path: str | Path) -> tuple[Path, Path]:
    """Write ``<path>`` (one row per estimate) and ``<stem>_summary.csv``.

    Long-format columns: design, n, estimator, replication, tau_hat, se,
    ci_low, ci_high, error. Floats are written with ``repr`` so they round-trip.
    """
    if not report.records:
        raise ValueError("report has no records")
    path = Path(path)
    summary_path = path.with_name(path.stem + "_summary.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RECORD_COLUMNS)
        for r in report.records:
            w.writerow([_fmt(getattr(r, c)) for c in RECORD_COLUMNS])
    with open(summary_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for row in report.summary:
            w.writerow([_fmt(row[c]) for c in SUMMARY_COLUMNS])
    return path, summary_path


def read_boxplot_table(path: str | Path) -> list[Record]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [Record(r["design"], int(r["n"]), r["estimator"], int(r["replication"]),
                   float(r["tau_hat"]), float(r["se"]), float(r["ci_low"]), float(r["ci_high"]),
                   r["error"]) for r in rows]
