"""Plug-in comparator: select a signal set, debias on it, then plug in.

The pilot is the CV-tuned L1 fit. The signal set is its support plus a
pre-determined index set (the focal column by default). Coordinates in the set
get one Newton step on the unpenalized quasi-likelihood restricted to the set,
which is the debiased-lasso correction with the inverse restricted Hessian as
the decorrelation matrix. Everything off the set is zero. The estimate is the
plug-in ``mean_i theta_j psi(x_i' theta)`` at the corrected vector.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .links import Link, get_link, score_and_weights
from .pilot import PilotOptions, cross_validate, fit_to_lambda

log = logging.getLogger(__name__)


class ComparatorError(RuntimeError):
    pass


@dataclass
class WzConfig:
    lam: float | None = None
    cv_folds: int = 10
    cv_patience: int | None = None
    seed: int = 0
    predetermined: tuple[int, ...] = ()
    pilot: PilotOptions = field(default_factory=PilotOptions)
    max_halvings: int = 10
    cond_limit: float = 1e12


@dataclass
class WzFit:
    theta_tilde: np.ndarray
    signal_set: np.ndarray
    correction_diagnostics: dict
    tau_hat: float
    theta_hat: np.ndarray = field(repr=False, default=None)
    lam: float = float("nan")

    def to_dict(self) -> dict:
        A = self.signal_set
        return {
            "tau_hat": self.tau_hat,
            "lambda": self.lam,
            "signal_set": A.tolist(),
            "theta_tilde_signal_set": self.theta_tilde[A].tolist(),
            "correction_diagnostics": self.correction_diagnostics,
        }


def plug_in_ape(theta, data: Dataset, link: str | Link, focal_index: int) -> float:
    """``mean_i theta_j psi(x_i' theta)``."""
    link = get_link(link)
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (data.p,):
        raise ValueError(f"theta has shape {theta.shape}, expected ({data.p},)")
    if not 0 <= focal_index < data.p:
        raise IndexError(f"focal index {focal_index} out of range")
    return float(theta[focal_index] * np.mean(link.deriv(data.X @ theta)))


def _restricted_score(link, XA, y, theta_A):
    s, w = score_and_weights(link, y, XA @ theta_A)
    return XA.T @ s / y.size, w


def estimate_wz(data: Dataset, link: str | Link, focal_index: int,
                config: WzConfig | None = None) -> WzFit:
    config = config or WzConfig()
    link = get_link(link)
    if not 0 <= focal_index < data.p:
        raise IndexError(f"focal index {focal_index} out of range")
    if config.pilot.intercept:
        raise ValueError("the comparator works with intercept-free pilots only")
    lam = config.lam
    if lam is None:
        lam = cross_validate(data, link, config.cv_folds, config.seed, config.pilot,
                             patience=config.cv_patience).lam
    pilot = fit_to_lambda(data, link, lam, config.pilot)
    theta_hat = pilot.theta_hat
    A = np.union1d(np.union1d(pilot.support, [focal_index]),
                   np.asarray(config.predetermined, dtype=int)).astype(int)
    if A.size > data.n:
        raise ComparatorError(f"signal set has {A.size} members but n={data.n}")

    XA = data.X[:, A]
    start = theta_hat[A]
    score, w = _restricted_score(link, XA, data.Y, start)
    H = (XA * w[:, None]).T @ XA / data.n
    ridge = 0.0
    if np.linalg.cond(H) > config.cond_limit:
        ridge = 1e-8 * max(np.trace(H) / A.size, 1e-300)
        log.info("restricted Hessian is near singular; adding ridge %.3g", ridge)
        H = H + ridge * np.eye(A.size)
    step = np.linalg.solve(H, score)
    norm0 = float(np.linalg.norm(score))
    halvings = 0
    t = 1.0
    new = start + step
    norm_new = float(np.linalg.norm(_restricted_score(link, XA, data.Y, new)[0]))
    while norm_new > norm0 and halvings < config.max_halvings:
        t *= 0.5
        halvings += 1
        new = start + t * step
        norm_new = float(np.linalg.norm(_restricted_score(link, XA, data.Y, new)[0]))
    if norm_new > norm0:
        new, norm_new, t = start, norm0, 0.0

    theta_tilde = np.zeros(data.p)
    theta_tilde[A] = new
    diagnostics = {
        "correction": dict(zip(A.tolist(), (new - start).tolist())),
        "score_norm_before": norm0,
        "score_norm_after": norm_new,
        "step_fraction": t,
        "halvings": halvings,
        "ridge": ridge,
        "pilot_converged": pilot.converged,
    }
    tau = plug_in_ape(theta_tilde, data, link, focal_index)
    return WzFit(theta_tilde, A, diagnostics, tau, theta_hat, float(lam))
