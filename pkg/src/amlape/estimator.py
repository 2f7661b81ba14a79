"""Augmented minimax linear estimation of average partial effects.

The estimate averages, over observations, the plug-in term
``theta_hat_j psi(x_i' theta_hat)`` plus the weighted residual
``gamma_i (y_i - Psi(x_i' theta_hat))``. With cross-fitting the pilot for fold
``k`` is fitted on the other folds, and the weights for fold ``k`` are solved
on fold ``k`` alone.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .balance import SolverOptions, WeightSolution, build_problem, imbalance, solve_weights
from .data import Dataset
from .links import Link, get_link
from .pilot import PilotOptions, cross_validate, fit_to_lambda, fold_ids

log = logging.getLogger(__name__)


class EstimationError(RuntimeError):
    pass


@dataclass
class EstimationConfig:
    folds: int = 5
    alpha: float = 0.05
    seed: int = 0
    lam: float | None = None  # None selects the pilot penalty by CV
    cv_folds: int = 10
    cv_patience: int | None = None
    pilot: PilotOptions = field(default_factory=PilotOptions)
    solver: SolverOptions = field(default_factory=SolverOptions)
    augment: bool = True
    pilot_override: np.ndarray | None = None
    strict: bool = False


@dataclass
class FoldRecord:
    fold: int
    indices: np.ndarray
    theta_hat: np.ndarray
    lam: float
    pilot_converged: bool
    weights: WeightSolution | None

    def to_dict(self) -> dict:
        support = np.flatnonzero(self.theta_hat)
        return {
            "fold": self.fold,
            "n_obs": int(self.indices.size),
            "theta_source": "override" if np.isnan(self.lam) else "pilot",
            "lambda": None if np.isnan(self.lam) else self.lam,
            "pilot_converged": self.pilot_converged,
            "support": support.tolist(),
            "theta_support_values": self.theta_hat[support].tolist(),
            "weights": None if self.weights is None else self.weights.diagnostics(),
        }


@dataclass
class ApeEstimate:
    tau_hat: float
    se: float
    ci_low: float
    ci_high: float
    alpha: float
    influence: np.ndarray
    plugin_part: float
    augmentation_part: float
    folds: int
    focal_index: int
    lam: float | None = None
    per_fold: list[FoldRecord] = field(default_factory=list, repr=False)

    @property
    def n(self) -> int:
        return self.influence.size

    def to_dict(self) -> dict:
        return {
            "tau_hat": self.tau_hat,
            "se": self.se,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "alpha": self.alpha,
            "plugin_part": self.plugin_part,
            "augmentation_part": self.augmentation_part,
            "folds": self.folds,
            "focal_index": self.focal_index,
            "lambda": self.lam,
            "n": self.n,
            "influence": self.influence.tolist(),
            "per_fold": [f.to_dict() for f in self.per_fold],
        }


def plug_in_terms(data: Dataset, theta, link: Link, focal_index: int):
    """Per-observation plug-in terms and residuals at ``theta``."""
    mu, psi, _, _ = link(data.X @ theta)
    return theta[focal_index] * psi, data.Y - mu


def influence_values(data: Dataset, theta_hat, gamma, link: str | Link, focal_index: int,
                     tau_hat: float) -> np.ndarray:
    """Sample influence values ``theta_j psi_i - tau + gamma_i (y_i - Psi_i)``."""
    link = get_link(link)
    theta_hat = np.asarray(theta_hat, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    if theta_hat.shape != (data.p,) or gamma.shape != (data.n,):
        raise ValueError("theta_hat must have length p and gamma length n")
    plug, resid = plug_in_terms(data, theta_hat, link, focal_index)
    return plug - tau_hat + gamma * resid


def confidence_interval(estimate: ApeEstimate, alpha: float = 0.05) -> tuple[float, float]:
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    half = float(stats.norm.ppf(1 - alpha / 2)) * estimate.se
    return estimate.tau_hat - half, estimate.tau_hat + half


def _pilot_lambda(data, link, config: EstimationConfig) -> float:
    if config.lam is not None:
        return float(config.lam)
    cv = cross_validate(data, link, config.cv_folds, config.seed, config.pilot,
                        patience=config.cv_patience)
    return cv.lam


def estimate_ape(data: Dataset, link: str | Link, focal_index: int,
                 config: EstimationConfig | None = None, fold_labels=None) -> ApeEstimate:
    """Cross-fitted augmented minimax linear estimate of the APE of column ``focal_index``.

    The pilot penalty, when not fixed in ``config.lam``, is chosen once by CV
    on the full sample and reused for every fold's pilot. ``folds=1`` disables
    cross-fitting. ``fold_labels`` overrides the seeded fold assignment.
    """
    config = config or EstimationConfig()
    link = get_link(link)
    if not 0 <= focal_index < data.p:
        raise IndexError(f"focal index {focal_index} out of range for p={data.p}")
    if config.pilot.intercept:
        raise ValueError("the estimator works with intercept-free pilots only")
    K = config.folds
    if K < 1:
        raise ValueError("folds must be at least 1")
    if K > 1 and data.n < 2 * K:
        raise ValueError(f"n={data.n} is too small for {K} folds")

    if fold_labels is not None:
        labels = np.asarray(fold_labels)
        if labels.shape != (data.n,):
            raise ValueError("fold_labels must have one entry per observation")
    else:
        labels = np.zeros(data.n, dtype=int) if K == 1 else fold_ids(data.n, K, config.seed)
    ids = np.unique(labels)

    override = config.pilot_override
    lam = None if override is not None else _pilot_lambda(data, link, config)

    plug = np.empty(data.n)
    aug = np.empty(data.n)
    records = []
    for k in ids:
        test = np.flatnonzero(labels == k)
        train = np.flatnonzero(labels != k) if ids.size > 1 else test
        fold = data.subset(test)
        if override is not None:
            theta_hat = np.asarray(override, dtype=float)
            converged = True
        else:
            fit = fit_to_lambda(data.subset(train), link, lam, config.pilot)
            theta_hat, converged = fit.theta_hat, fit.converged
            if not np.all(np.isfinite(theta_hat)):
                raise EstimationError(f"pilot fit for fold {k} is not finite")
            if not converged:
                msg = f"pilot fit for fold {k} did not converge (KKT {fit.kkt_violation:.3g})"
                if config.strict:
                    raise EstimationError(msg)
                log.warning(msg)
        weights = None
        if config.augment:
            try:
                problem = build_problem(fold, theta_hat, link, focal_index)
            except ArithmeticError as exc:
                raise EstimationError(f"fold {k}: {exc}") from exc
            weights = solve_weights(problem, config.solver)
            if weights.status == "infeasible-input":
                raise EstimationError(f"weight problem for fold {k} is infeasible")
            if weights.status != "optimal":
                msg = f"weight solve for fold {k} ended with status {weights.status}"
                if config.strict:
                    raise EstimationError(msg)
                log.warning(msg)
            gamma = weights.gamma
        else:
            gamma = np.zeros(test.size)
        p_i, r_i = plug_in_terms(fold, theta_hat, link, focal_index)
        plug[test] = p_i
        aug[test] = gamma * r_i
        records.append(FoldRecord(int(k), test, theta_hat, float("nan") if lam is None else lam,
                                  converged, weights))

    plugin_part = float(plug.mean())
    augmentation_part = float(aug.mean())
    contrib = plug + aug
    tau_hat = float(contrib.mean())
    influence = contrib - tau_hat
    se = float(np.sqrt(np.mean(influence**2) / data.n))
    est = ApeEstimate(tau_hat, se, 0.0, 0.0, config.alpha, influence, plugin_part,
                      augmentation_part, int(ids.size), focal_index, lam, records)
    est.ci_low, est.ci_high = confidence_interval(est, config.alpha)
    return est


@dataclass
class ErrorDecomposition:
    total: float
    linear_term: float
    noise_term: float
    remainder: float
    imbalance: float
    theta_l1_error: float


def error_decomposition(data: Dataset, theta_true, theta_hat, gamma, link: str | Link,
                        focal_index: int) -> ErrorDecomposition:
    """Split ``tau*_j - tau_hat_j`` into linearized, noise and remainder terms.

    ``tau*_j`` is the sample-average estimand at the true ``theta``. The linear
    term is ``mean_i v(x_i)' (theta - theta_hat)`` with
    ``v(x) = theta_hat_j psi'(x'theta_hat) x + psi(x'theta_hat) e_j - gamma psi(x'theta_hat) x``;
    the noise term is ``-mean_i gamma_i (y_i - Psi(x_i'theta))``; the remainder is
    what is left.
    """
    link = get_link(link)
    theta_true = np.asarray(theta_true, dtype=float)
    theta_hat = np.asarray(theta_hat, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    if theta_true.shape != (data.p,) or theta_hat.shape != (data.p,) or gamma.shape != (data.n,):
        raise ValueError("dimension mismatch in error decomposition inputs")
    j = focal_index
    X, Y = data.X, data.Y
    mu_t, psi_t, _, _ = link(X @ theta_true)
    mu_h, psi_h, psi1_h, _ = link(X @ theta_hat)
    total = float(np.mean(theta_true[j] * psi_t - theta_hat[j] * psi_h - gamma * (Y - mu_h)))
    problem = build_problem(data, theta_hat, link, j)
    # mean_i v(x_i) is exactly the balance residual c - W' gamma / n
    v_bar = problem.c - problem.W.T @ gamma / data.n
    dtheta = theta_true - theta_hat
    linear = float(v_bar @ dtheta)
    noise = float(-np.mean(gamma * (Y - mu_t)))
    return ErrorDecomposition(total, linear, noise, total - linear - noise,
                              imbalance(problem, gamma), float(np.abs(dtheta).sum()))


def decompose_estimate(data: Dataset, theta_true, estimate: ApeEstimate, link: str | Link
                       ) -> list[ErrorDecomposition]:
    """Per-fold decompositions of a cross-fitted estimate."""
    out = []
    for rec in estimate.per_fold:
        gamma = rec.weights.gamma if rec.weights is not None else np.zeros(rec.indices.size)
        out.append(error_decomposition(data.subset(rec.indices), theta_true, rec.theta_hat, gamma,
                                       link, estimate.focal_index))
    return out
