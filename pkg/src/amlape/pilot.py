"""L1-penalized quasi-maximum likelihood pilot fits.

The solver is a proximal Newton method: each outer step builds the IRLS
quadratic model of the loss and minimizes model + L1 penalty by coordinate
descent (see ``_cd.weighted_lasso_cd``), followed by a backtracking line
search on the true penalized objective. Convergence is declared on the KKT
conditions, not on iterate change.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ._cd import weighted_lasso_cd
from .data import Dataset
from .links import Link, deviance, get_link, loss_terms, score_and_weights

log = logging.getLogger(__name__)


@dataclass
class PilotOptions:
    kkt_tol: float = 1e-6
    max_iter: int = 100
    max_sweeps: int = 100_000
    intercept: bool = False
    standardize: bool = False
    n_lambdas: int = 100
    lambda_ratio: float = 1e-3
    # path fits stop once the training deviance ratio passes this value
    max_dev_ratio: float = 0.999


@dataclass
class PilotFit:
    theta_hat: np.ndarray
    lam: float
    support: np.ndarray
    objective_value: float
    converged: bool
    iterations: int
    kkt_violation: float
    intercept: float = 0.0
    deviance_ratio: float = float("nan")

    def __post_init__(self):
        self.support = np.flatnonzero(self.theta_hat)


def _penalty_factors(X, options: PilotOptions):
    """Per-coordinate penalty weights and the design actually fitted."""
    n, p = X.shape
    pf = np.ones(p)
    if options.standardize:
        sd = X.std(axis=0)
        pf = np.where(sd > 0, sd, 1.0)
    if options.intercept:
        X = np.column_stack([X, np.ones(n)])
        pf = np.append(pf, 0.0)
    return np.asfortranarray(X), pf


def kkt_violation(theta, grad, pen) -> float:
    """Largest violation of the lasso KKT conditions.

    On the support ``grad_k + pen_k sign(theta_k) = 0``; off it ``|grad_k| <= pen_k``.
    """
    on = theta != 0
    viol = np.where(on, np.abs(grad + pen * np.sign(theta)), np.maximum(np.abs(grad) - pen, 0.0))
    return float(viol.max()) if viol.size else 0.0


def _prox_newton(link, X, y, pen, theta, options: PilotOptions):
    n = X.shape[0]
    eta = X @ theta
    obj = float(np.mean(loss_terms(link, y, eta)) + pen @ np.abs(theta))
    kkt = np.inf
    it = 0
    for it in range(1, options.max_iter + 1):
        s, w = score_and_weights(link, y, eta)
        grad = -(X.T @ s) / n
        kkt = kkt_violation(theta, grad, pen)
        if kkt <= options.kkt_tol:
            return theta, obj, True, it - 1, kkt
        inner_tol = max(min(1e-8, (0.1 * kkt) ** 2), 1e-30)
        new = theta.copy()
        weighted_lasso_cd(X, np.ascontiguousarray(w), s, new, pen, inner_tol, options.max_sweeps)
        d = new - theta
        if not np.any(d):
            break
        # Armijo backtracking on the penalized objective; near the optimum the
        # decrease drops below rounding, so the full step is accepted there
        model_dec = grad @ d + pen @ (np.abs(new) - np.abs(theta))
        noise = 64 * np.finfo(float).eps * max(1.0, abs(obj))
        Xd = X @ d
        step = 1.0
        accepted = False
        for _ in range(60):
            cand = theta + step * d
            eta_c = eta + step * Xd
            obj_c = float(np.mean(loss_terms(link, y, eta_c)) + pen @ np.abs(cand))
            if obj_c <= obj + 1e-4 * step * model_dec or (step == 1.0 and obj_c <= obj + noise):
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        theta, eta, obj = cand, eta_c, obj_c
    s, _ = score_and_weights(link, y, eta)
    kkt = kkt_violation(theta, -(X.T @ s) / n, pen)
    return theta, obj, kkt <= options.kkt_tol, it, kkt


def fit_pilot(
    data: Dataset,
    link: str | Link,
    lam: float,
    options: PilotOptions | None = None,
    theta0: np.ndarray | None = None,
) -> PilotFit:
    """Fit the L1-penalized quasi-likelihood estimator at penalty ``lam``.

    The objective is ``mean(loss_i) + lam * sum_k |theta_k|``. ``theta0`` warm
    starts the solver (length ``p``, or ``p + 1`` when an intercept is fitted).
    Non-convergence is reported through ``converged=False``, never raised.
    """
    options = options or PilotOptions()
    link = get_link(link)
    if not lam >= 0:
        raise ValueError(f"lambda must be nonnegative, got {lam}")
    if link.is_binary:
        data.check_response_range()
    X, pf = _penalty_factors(data.X, options)
    q = X.shape[1]
    theta = np.zeros(q) if theta0 is None else np.array(theta0, dtype=float)
    if theta.shape != (q,):
        raise ValueError(f"warm start has shape {theta.shape}, expected ({q},)")
    theta, obj, ok, iters, kkt = _prox_newton(link, X, data.Y, lam * pf, theta, options)
    if not ok:
        log.debug("pilot fit at lambda=%g stopped with KKT violation %.3g", lam, kkt)
    intercept = 0.0
    if options.intercept:
        intercept, theta = float(theta[-1]), theta[:-1]
    eta = data.X @ theta + intercept
    null = deviance(link, data.Y, np.zeros(data.n))
    dev_ratio = 1.0 - deviance(link, data.Y, eta) / null if null > 0 else float("nan")
    return PilotFit(
        theta_hat=theta,
        lam=float(lam),
        support=np.empty(0, dtype=int),
        objective_value=obj,
        converged=ok,
        iterations=iters,
        kkt_violation=kkt,
        intercept=intercept,
        deviance_ratio=dev_ratio,
    )


def pilot_gradient(data: Dataset, link: str | Link, theta, intercept: float = 0.0):
    """Gradient of the unpenalized mean loss with respect to ``theta``."""
    link = get_link(link)
    s, _ = score_and_weights(link, data.Y, data.X @ theta + intercept)
    return -(data.X.T @ s) / data.n


@dataclass
class LambdaGrid:
    lambdas: np.ndarray
    degenerate: bool = False

    def __len__(self):
        return len(self.lambdas)

    def __iter__(self):
        return iter(self.lambdas)

    def __getitem__(self, i):
        return self.lambdas[i]


def lambda_max(data: Dataset, link: str | Link, options: PilotOptions | None = None) -> float:
    """Smallest penalty at which the all-zero (penalized part) fit is optimal."""
    options = options or PilotOptions()
    link = get_link(link)
    if options.intercept:
        # at lambda_max the intercept is the unpenalized null fit
        null = fit_pilot(Dataset(np.zeros((data.n, 1)), data.Y), link, 0.0,
                         PilotOptions(intercept=True, kkt_tol=1e-12))
        grad = pilot_gradient(data, link, np.zeros(data.p), null.intercept)
    else:
        grad = pilot_gradient(data, link, np.zeros(data.p))
    if options.standardize:
        sd = data.X.std(axis=0)
        grad = grad / np.where(sd > 0, sd, 1.0)
    return float(np.max(np.abs(grad)))


def lambda_path(
    data: Dataset,
    link: str | Link,
    n_lambdas: int | None = None,
    options: PilotOptions | None = None,
) -> LambdaGrid:
    """Geometric grid from ``lambda_max`` down to ``lambda_max * lambda_ratio``.

    When the gradient at the origin vanishes the grid is all zeros and flagged
    ``degenerate``.
    """
    options = options or PilotOptions()
    n_lambdas = options.n_lambdas if n_lambdas is None else n_lambdas
    if n_lambdas < 1:
        raise ValueError("n_lambdas must be at least 1")
    lmax = lambda_max(data, link, options)
    if lmax <= 0 or not np.isfinite(lmax):
        return LambdaGrid(np.zeros(n_lambdas), degenerate=True)
    if n_lambdas == 1:
        return LambdaGrid(np.array([lmax]))
    grid = lmax * np.geomspace(1.0, options.lambda_ratio, n_lambdas)
    grid[0] = lmax
    return LambdaGrid(grid)


def fit_path(
    data: Dataset,
    link: str | Link,
    lambdas,
    options: PilotOptions | None = None,
) -> list[PilotFit]:
    """Warm-started fits along a decreasing penalty sequence.

    The path stops early (returning fewer fits) once the training deviance
    ratio exceeds ``options.max_dev_ratio`` or a fit fails to converge, since
    further fits are near-saturated and slow.
    """
    options = options or PilotOptions()
    link = get_link(link)
    fits = []
    warm = None
    for lam in lambdas:
        fit = fit_pilot(data, link, float(lam), options, theta0=warm)
        fits.append(fit)
        warm = np.append(fit.theta_hat, fit.intercept) if options.intercept else fit.theta_hat
        if not fit.converged or fit.deviance_ratio > options.max_dev_ratio:
            break
    return fits


def fold_ids(n: int, folds: int, seed: int) -> np.ndarray:
    """Balanced random fold labels in ``0..folds-1``."""
    if folds < 2:
        raise ValueError("need at least 2 folds")
    if folds > n:
        raise ValueError(f"folds={folds} exceeds n={n}")
    rng = np.random.Generator(np.random.Philox(seed))
    labels = np.arange(n) % folds
    return labels[rng.permutation(n)]


@dataclass
class CvResult:
    lam: float
    lambdas: np.ndarray
    cv_deviance: np.ndarray
    degenerate: bool = False
    fold_deviance: np.ndarray = field(default=None, repr=False)


def cross_validate(
    data: Dataset,
    link: str | Link,
    folds: int = 10,
    seed: int = 0,
    options: PilotOptions | None = None,
    lambdas=None,
    patience: int | None = None,
) -> CvResult:
    """K-fold cross-validated held-out deviance along the penalty grid.

    The grid comes from the full sample. Fold paths advance in lockstep; a
    lambda that some fold's path never reached is dropped from the comparison.
    With ``patience`` set, the scan stops after that many consecutive grid
    points without a new CV minimum. Ties go to the larger lambda.
    """
    options = options or PilotOptions()
    link = get_link(link)
    if folds > data.n:
        raise ValueError(f"folds={folds} exceeds n={data.n}")
    if lambdas is None:
        grid = lambda_path(data, link, options=options)
        lambdas, degenerate = grid.lambdas, grid.degenerate
    else:
        lambdas, degenerate = np.asarray(lambdas, dtype=float), False
    if degenerate:
        return CvResult(0.0, lambdas, np.full(len(lambdas), np.nan), True)
    ids = fold_ids(data.n, folds, seed)
    splits = [(data.subset(ids != k), (data.X[ids == k], data.Y[ids == k])) for k in range(folds)]
    warm = [None] * folds
    alive = [True] * folds
    # summed held-out deviance, so unequal fold sizes weigh per observation
    per_fold = np.full((folds, len(lambdas)), np.nan)
    best, best_m = np.inf, -1
    for m, lam in enumerate(lambdas):
        for k, (train, held) in enumerate(splits):
            if not alive[k]:
                continue
            fit = fit_pilot(train, link, float(lam), options, theta0=warm[k])
            warm[k] = np.append(fit.theta_hat, fit.intercept) if options.intercept else fit.theta_hat
            X_out, y_out = held
            per_fold[k, m] = deviance(link, y_out, X_out @ fit.theta_hat + fit.intercept) * y_out.size
            if not fit.converged or fit.deviance_ratio > options.max_dev_ratio:
                alive[k] = False
        cv_m = per_fold[:, m].sum() / data.n
        if np.isfinite(cv_m) and cv_m < best:
            best, best_m = cv_m, m
        if not any(alive) or (patience is not None and m - best_m >= patience):
            break
    cv = per_fold.sum(axis=0) / data.n
    valid = np.isfinite(cv)
    pick = np.flatnonzero(valid)[np.argmin(cv[valid])]  # first minimum = largest lambda
    return CvResult(float(lambdas[pick]), lambdas, cv, False, per_fold)


def select_lambda_cv(
    data: Dataset,
    link: str | Link,
    folds: int = 10,
    seed: int = 0,
    options: PilotOptions | None = None,
    patience: int | None = None,
) -> float:
    """Penalty level minimizing cross-validated deviance."""
    if folds < 2:
        raise ValueError("need at least 2 folds")
    return cross_validate(data, link, folds, seed, options, patience=patience).lam


def fit_to_lambda(
    data: Dataset,
    link: str | Link,
    lam: float,
    options: PilotOptions | None = None,
) -> PilotFit:
    """Fit at ``lam`` after warm-starting through the grid points above it."""
    options = options or PilotOptions()
    grid = lambda_path(data, link, options=options)
    lams = [] if grid.degenerate else [g for g in grid.lambdas if g > lam]
    warm = None
    for g in lams:
        fit = fit_pilot(data, link, float(g), options, theta0=warm)
        warm = np.append(fit.theta_hat, fit.intercept) if options.intercept else fit.theta_hat
    return fit_pilot(data, link, lam, options, theta0=warm)
