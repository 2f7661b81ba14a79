"""Link functions for single-index models.

Each link bundles the mean function and its first three derivatives,
``(Psi, psi, psi', psi'')``. All evaluators are vectorized over numpy arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import special

LINK_NAMES = ("logistic", "probit", "identity")

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


def _logistic(z):
    # expit branches on sign(z) internally, so it never overflows; using
    # expit(-z) for 1 - Psi keeps psi accurate (and exactly even) in both tails
    mu = special.expit(z)
    psi = mu * special.expit(-z)
    psi1 = -psi * np.tanh(0.5 * z)
    psi2 = psi * (1.0 - 6.0 * psi)
    return mu, psi, psi1, psi2


def _probit(z):
    mu = special.ndtr(z)
    phi = np.exp(-0.5 * z * z - _LOG_SQRT_2PI)
    return mu, phi, -z * phi, (z * z - 1.0) * phi


def _identity(z):
    z = np.asarray(z, dtype=float)
    return z.copy(), np.ones_like(z), np.zeros_like(z), np.zeros_like(z)


_EVALUATORS: dict[str, Callable] = {
    "logistic": _logistic,
    "probit": _probit,
    "identity": _identity,
}


@dataclass(frozen=True)
class Link:
    """A differentiable link ``Psi`` with derivatives ``psi``, ``psi'``, ``psi''``."""

    kind: str

    def __post_init__(self):
        if self.kind not in _EVALUATORS:
            raise ValueError(f"unknown link {self.kind!r}; expected one of {LINK_NAMES}")

    def __call__(self, z):
        """Return ``(Psi, psi, psi', psi'')`` evaluated elementwise at ``z``."""
        z = np.asarray(z, dtype=float)
        return _EVALUATORS[self.kind](z)

    def mean(self, z):
        return self(z)[0]

    def deriv(self, z):
        return self(z)[1]

    @property
    def is_binary(self) -> bool:
        return self.kind != "identity"


def get_link(link: str | Link) -> Link:
    if isinstance(link, Link):
        return link
    return Link(str(link).lower())


def eval_link(link: str | Link, z: float) -> tuple[float, float, float, float]:
    """Scalar evaluation with a finiteness check on the argument."""
    z = float(z)
    if not math.isfinite(z):
        raise ValueError(f"link argument must be finite, got {z}")
    return tuple(float(v) for v in get_link(link)(z))


# -- quasi-likelihood pieces used by the pilot and comparator fits ----------


def loss_terms(link: Link, y, eta):
    """Per-observation negative quasi-log-likelihood at linear predictor ``eta``.

    Bernoulli quasi-likelihood for logistic/probit (valid for ``y`` in [0, 1]),
    half squared error for identity.
    """
    if link.kind == "logistic":
        return np.logaddexp(0.0, eta) - y * eta
    if link.kind == "probit":
        return -y * special.log_ndtr(eta) - (1.0 - y) * special.log_ndtr(-eta)
    r = y - eta
    return 0.5 * r * r


def score_and_weights(link: Link, y, eta):
    """Per-observation score ``-d loss / d eta`` and Fisher working weights.

    For the canonical logistic link the Fisher weight equals the observed
    curvature; for probit it is the expected information ``phi^2 / (Phi (1-Phi))``.
    """
    if link.kind == "logistic":
        mu = special.expit(eta)
        return y - mu, mu * (1.0 - mu)
    if link.kind == "probit":
        log_phi = -0.5 * eta * eta - _LOG_SQRT_2PI
        mills_lo = np.exp(log_phi - special.log_ndtr(eta))  # phi / Phi
        mills_hi = np.exp(log_phi - special.log_ndtr(-eta))  # phi / (1 - Phi)
        return y * mills_lo - (1.0 - y) * mills_hi, mills_lo * mills_hi
    return y - eta, np.ones_like(eta)


def deviance(link: Link, y, eta) -> float:
    """Mean held-out deviance, used for cross-validation."""
    y = np.asarray(y, dtype=float)
    if link.kind == "identity":
        return float(np.mean((y - eta) ** 2))
    # saturated log-likelihood is zero for binary y; general y in [0,1] needs the entropy term
    with np.errstate(divide="ignore", invalid="ignore"):
        sat = np.where((y > 0) & (y < 1), y * np.log(y) + (1 - y) * np.log1p(-y), 0.0)
    return float(2.0 * np.mean(loss_terms(link, y, eta) + sat))
