"""Minimax linear balancing weights.

For a pilot ``theta_hat`` and focal coordinate ``j`` the weights solve

    min_gamma  I(gamma)^2 + ||gamma||_2^2 / n^2,
    I(gamma) = || c - W' gamma / n ||_inf,

where row ``i`` of ``W`` is ``psi(x_i' theta_hat) x_i`` and
``c = mean_i[theta_hat_j psi'(x_i' theta_hat) x_i + psi(x_i' theta_hat) e_j]``.

Internally we substitute ``gamma = n * beta`` so the problem reads
``min ||c - W' beta||_inf^2 + ||beta||^2``. It is solved by ADMM on the split
``u = c - W' beta`` (the prox of ``||u||_inf^2`` is exact, by sorting) and then
polished on the detected active set. Every solution carries a duality-gap
certificate from the Fenchel dual

    max_mu  mu'c - ||mu||_1^2 / 4 - ||W mu||^2 / 4,   beta = W mu / 2.
"""

from __future__ import annotations

import json
import logging
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import optimize

from .data import Dataset
from .links import Link, get_link

log = logging.getLogger(__name__)


class NumericError(ArithmeticError):
    pass


class CertificateError(AssertionError):
    """An optimality certificate check failed."""


@dataclass
class SolverOptions:
    max_iter: int = 20_000
    abs_tol: float = 1e-7
    rho: float = 1.0
    relaxation: float = 1.6
    polish: bool = True
    method: str = "admm"  # "admm" | "smoothed"
    smoothing_fallback: bool = True
    certify: bool = False
    diagnostics_path: str | None = None


@dataclass
class BalanceProblem:
    W: np.ndarray  # n x p, rows psi(x_i' theta) x_i
    c: np.ndarray  # p
    focal_index: int

    @property
    def n(self) -> int:
        return self.W.shape[0]

    @property
    def p(self) -> int:
        return self.W.shape[1]

    def scaled(self, s: float) -> BalanceProblem:
        return BalanceProblem(s * self.W, s * self.c, self.focal_index)


@dataclass
class WeightSolution:
    gamma: np.ndarray
    imbalance: float
    gamma_l2: float
    objective: float
    status: str  # "optimal" | "max_iter" | "infeasible-input"
    kkt_residual: float
    iterations: int = 0
    polished: bool = False
    dual: np.ndarray | None = field(default=None, repr=False)

    def diagnostics(self) -> dict:
        return {
            "imbalance": self.imbalance,
            "gamma_l2": self.gamma_l2,
            "objective": self.objective,
            "kkt_residual": self.kkt_residual,
            "status": self.status,
            "iterations": self.iterations,
        }


def build_problem(data: Dataset, theta_hat, link: str | Link, focal_index: int) -> BalanceProblem:
    """Assemble ``W`` and the target moment vector ``c`` at the pilot ``theta_hat``.

    ``focal_index`` is 0-based.
    """
    link = get_link(link)
    theta_hat = np.asarray(theta_hat, dtype=float)
    if not 0 <= focal_index < data.p:
        raise IndexError(f"focal index {focal_index} out of range for p={data.p}")
    if theta_hat.shape != (data.p,) or not np.all(np.isfinite(theta_hat)):
        raise ValueError("theta_hat must be a finite p-vector")
    _, psi, psi1, _ = link(data.X @ theta_hat)
    bad = ~(np.isfinite(psi) & np.isfinite(psi1))
    if bad.any():
        raise NumericError(f"non-finite link evaluation at row {int(np.flatnonzero(bad)[0])}")
    W = psi[:, None] * data.X
    c = theta_hat[focal_index] * (data.X.T @ psi1) / data.n
    c[focal_index] += psi.mean()
    return BalanceProblem(W, c, focal_index)


def imbalance(problem: BalanceProblem, gamma) -> float:
    gamma = np.asarray(gamma, dtype=float)
    if gamma.shape != (problem.n,):
        raise ValueError(f"gamma has shape {gamma.shape}, expected ({problem.n},)")
    return float(np.max(np.abs(problem.c - problem.W.T @ gamma / problem.n)))


def objective(problem: BalanceProblem, gamma) -> float:
    gamma = np.asarray(gamma, dtype=float)
    return imbalance(problem, gamma) ** 2 + float(gamma @ gamma) / problem.n**2


# -- solver internals (scaled variables beta = gamma / n) -------------------


def _prox_sq_linf(v, rho):
    """argmin_u ||u||_inf^2 + (rho/2) ||u - v||^2."""
    a = np.sort(np.abs(v))[::-1]
    csum = np.cumsum(a)
    m = np.arange(1, a.size + 1)
    tau = rho * csum / (2.0 + rho * m)
    # largest m whose level still sits below the m-th magnitude
    ok = tau <= a
    level = tau[np.flatnonzero(ok)[-1]] if ok.any() else 0.0
    return np.clip(v, -level, level)


def _dual_value(Wt, c, mu):
    Wmu = Wt.T @ mu
    l1 = np.abs(mu).sum()
    return float(mu @ c - 0.25 * l1 * l1 - 0.25 * Wmu @ Wmu)


def _primal_value(Wt, c, beta):
    return float(np.max(np.abs(c - Wt @ beta)) ** 2 + beta @ beta)


def _gap(Wt, c, beta, mu):
    return max(_primal_value(Wt, c, beta) - _dual_value(Wt, c, mu), 0.0)


def _polish(Wt, c, beta, tol):
    """Solve the equality-constrained QP on the active set read off ``beta``.

    Unknowns are the signed multipliers ``mu_S`` and the level ``t``:
    ``s_k (c_k - W_k' W_S' mu_S / 2) = t`` on S and ``sum_k s_k mu_k = 2 t``.
    """
    r = c - Wt @ beta
    t = np.max(np.abs(r))
    if t == 0:
        return None
    best = None
    for slack in (1e-9, 1e-7, 1e-5, 1e-3):
        S = np.flatnonzero(np.abs(r) >= t - slack * max(t, 1e-12))
        s = np.sign(r[S])
        WS = Wt[S]  # |S| x n
        m = S.size
        K = np.zeros((m + 1, m + 1))
        K[:m, :m] = 0.5 * (s[:, None] * (WS @ WS.T))
        K[:m, m] = 1.0
        K[m, :m] = s
        K[m, m] = -2.0
        rhs = np.append(s * c[S], 0.0)
        sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
        mu_S, t_new = sol[:m], sol[m]
        if np.any(s * mu_S < -1e-12) or t_new < 0:
            continue
        mu = np.zeros_like(c)
        mu[S] = mu_S
        beta_p = 0.5 * (Wt.T @ mu)
        gap = _gap(Wt, c, beta_p, mu)
        if best is None or gap < best[2]:
            best = (beta_p, mu, gap)
        if gap <= tol:
            break
    return best


def _admm(Wt, c, options: SolverOptions, beta0=None):
    p, n = Wt.shape
    evals, Q = np.linalg.eigh(Wt.T @ Wt)
    evals = np.maximum(evals, 0.0)
    rho = options.rho
    alpha = options.relaxation
    beta = np.zeros(n) if beta0 is None else beta0.copy()
    Wb = Wt @ beta
    u = c - Wb
    y = np.zeros(p)  # scaled dual, mu = rho * y
    it = 0
    for it in range(1, options.max_iter + 1):
        rhs = rho * (Wt.T @ (c - u - y))
        beta = Q @ ((Q.T @ rhs) / (2.0 + rho * evals))
        Wb = Wt @ beta
        Wb_relaxed = alpha * Wb + (1 - alpha) * (c - u)
        u_old = u
        u = _prox_sq_linf(c - Wb_relaxed - y, rho)
        y += Wb_relaxed + u - c
        r_norm = np.max(np.abs(Wb + u - c))
        s_norm = rho * np.max(np.abs(Wt.T @ (u - u_old)))
        if r_norm <= options.abs_tol and s_norm <= options.abs_tol:
            break
        if it % 25 == 0:
            if r_norm > 10 * s_norm:
                rho *= 2.0
                y /= 2.0
            elif s_norm > 10 * r_norm:
                rho /= 2.0
                y *= 2.0
    else:
        it = options.max_iter
    return beta, -rho * y, it


def _smoothed(Wt, c, options: SolverOptions, beta0=None):
    """Softmax-smoothed L-inf objective, L-BFGS with shrinking temperature."""
    n = Wt.shape[1]
    beta = np.zeros(n) if beta0 is None else beta0.copy()
    scale = max(np.max(np.abs(c)), 1e-12)
    total = 0
    for temp in scale * np.geomspace(1e-1, 1e-8, 8):

        def fun(b):
            r = c - Wt @ b
            z = np.concatenate([r, -r]) / temp
            zmax = z.max()
            e = np.exp(z - zmax)
            lse = zmax + np.log(e.sum())
            smooth = temp * lse
            w = e / e.sum()
            grad_r = w[: r.size] - w[r.size :]
            val = smooth * smooth + b @ b
            grad = -2.0 * smooth * (Wt.T @ grad_r) + 2.0 * b
            return val, grad

        res = optimize.minimize(fun, beta, jac=True, method="L-BFGS-B",
                                options={"maxiter": options.max_iter, "gtol": 1e-12, "ftol": 1e-15})
        beta = res.x
        total += res.nit
    # dual guess from the active set at the final temperature
    r = c - Wt @ beta
    t = np.max(np.abs(r))
    mu = np.where(np.abs(r) >= t - 1e-6 * max(t, 1e-12), np.sign(r), 0.0)
    if mu.any():
        mu *= 2 * t / np.abs(mu).sum()
    return beta, mu, total


_certify_all = False
_certified_solves = 0


@contextmanager
def certify_all(enabled: bool = True):
    """Run the optimality certificate on every solve inside the block."""
    global _certify_all
    prev, _certify_all = _certify_all, enabled
    try:
        yield
    finally:
        _certify_all = prev


def certified_solve_count() -> int:
    return _certified_solves


def solve_weights(problem: BalanceProblem, options: SolverOptions | None = None,
                  references=(), gamma0=None) -> WeightSolution:
    """Minimize ``I(gamma)^2 + ||gamma||^2 / n^2``.

    ``references`` are extra candidate weight vectors (e.g. oracle weights) that
    the optimality certificate must not beat; they are only used when
    certification is on. ``gamma0`` warm starts the iteration.
    """
    options = options or SolverOptions()
    n = problem.n
    W, c = problem.W, problem.c
    if not (np.all(np.isfinite(W)) and np.all(np.isfinite(c))):
        return WeightSolution(np.zeros(n), float("nan"), 0.0, float("nan"), "infeasible-input", float("nan"))
    if not np.any(c):
        sol = WeightSolution(np.zeros(n), 0.0, 0.0, 0.0, "optimal", 0.0, polished=True,
                             dual=np.zeros_like(c))
        _finish(problem, sol, options, references)
        return sol

    Wt = np.ascontiguousarray(W.T)
    beta0 = None if gamma0 is None else np.asarray(gamma0, dtype=float) / n
    if options.method == "smoothed":
        beta, mu, iters = _smoothed(Wt, c, options, beta0)
    elif options.method == "admm":
        beta, mu, iters = _admm(Wt, c, options, beta0)
    else:
        raise ValueError(f"unknown balance solver method {options.method!r}")
    gap = _gap(Wt, c, beta, mu)
    converged = iters < options.max_iter
    polished = False
    if options.polish:
        best = _polish(Wt, c, beta, 1e-13)
        if best is not None and best[2] <= max(gap, 1e-13) and _primal_value(Wt, c, best[0]) <= _primal_value(Wt, c, beta) + 1e-14:
            beta, mu, gap = best
            polished = True
    if not converged and gap > options.abs_tol and options.smoothing_fallback and options.method == "admm":
        log.debug("ADMM hit max_iter (gap %.3g); trying the smoothed solver", gap)
        b2, m2, it2 = _smoothed(Wt, c, options, beta)
        iters += it2
        best = _polish(Wt, c, b2, 1e-13) if options.polish else None
        for cand_beta, cand_mu in ((b2, m2), best[:2] if best else (None, None)):
            if cand_beta is None:
                continue
            g2 = _gap(Wt, c, cand_beta, cand_mu)
            if g2 < gap:
                beta, mu, gap = cand_beta, cand_mu, g2
    gamma = n * beta
    imb = float(np.max(np.abs(c - Wt @ beta)))
    l2 = float(np.linalg.norm(gamma))
    status = "optimal" if gap <= options.abs_tol else "max_iter"
    sol = WeightSolution(gamma, imb, l2, imb**2 + l2**2 / n**2, status, gap, iters, polished, mu)
    _finish(problem, sol, options, references)
    return sol


def _finish(problem, sol, options, references):
    if options.certify or _certify_all:
        certify(problem, sol, references)
    if options.diagnostics_path:
        with open(options.diagnostics_path, "a") as fh:
            fh.write(json.dumps(sol.diagnostics(), sort_keys=True) + "\n")


def certify(problem: BalanceProblem, sol: WeightSolution, references=(), n_perturb: int = 50, seed: int = 0):
    """Check weights that claim optimality against competitors; raise on a loss.

    Competitors are ``gamma = 0``, any ``references``, and ``n_perturb`` random
    perturbations with norm at most ``0.1 ||gamma_hat||``. A floating-point
    slack of 1e-12 relative is allowed.
    """
    global _certified_solves
    if sol.status != "optimal":
        return
    f_hat = objective(problem, sol.gamma)
    slack = 1e-12 * max(1.0, abs(f_hat))
    if abs(f_hat - sol.objective) > 1e-12 * max(1.0, f_hat):
        raise CertificateError("stored objective does not match recomputation")
    if f_hat > objective(problem, np.zeros(problem.n)) + slack:
        raise CertificateError("zero weights beat the solution")
    for ref in references:
        if f_hat > objective(problem, ref) + slack:
            raise CertificateError("reference weights beat the solution")
    rng = np.random.Generator(np.random.Philox(seed))
    radius = 0.1 * sol.gamma_l2
    if radius > 0:
        for _ in range(n_perturb):
            d = rng.standard_normal(problem.n)
            d *= radius * rng.random() / np.linalg.norm(d)
            if f_hat > objective(problem, sol.gamma + d) + slack:
                raise CertificateError("a random perturbation beats the solution")
    _certified_solves += 1


# -- population oracle weights ---------------------------------------------


@dataclass
class OracleWeights:
    g: np.ndarray
    g_se: np.ndarray
    gamma_star_values: np.ndarray | None
    mc_draws: int
    condition_number: float
    residual: float

    def gamma_star(self, X, theta, link) -> np.ndarray:
        link = get_link(link)
        _, psi, _, _ = link(np.asarray(X) @ theta)
        return psi * (np.asarray(X) @ self.g)


def oracle_weights(theta, link: str | Link, focal_index: int, dgp, mc_draws: int = 100_000,
                   seed: int = 0, X=None, chunk: int = 20_000) -> OracleWeights:
    """Monte Carlo Riesz-representer weights ``gamma*(x) = psi(x'theta) x'g``.

    ``g`` solves ``E[psi^2 X X'] g = E[theta_j psi'(X'theta) X + psi(X'theta) e_j]``
    with both expectations replaced by averages over ``mc_draws`` covariate
    draws from ``dgp.sample_X(m, rng)``. ``g_se`` holds delta-method Monte
    Carlo standard errors. When ``X`` is given, ``gamma_star_values`` holds
    ``gamma*`` at its rows.
    """
    if mc_draws < 10_000:
        raise ValueError("mc_draws must be at least 1e4")
    link = get_link(link)
    theta = np.asarray(theta, dtype=float)
    p = theta.size
    j = focal_index

    def draws():
        rng = np.random.Generator(np.random.Philox(seed))
        left = mc_draws
        while left > 0:
            m = min(chunk, left)
            left -= m
            Xm = dgp.sample_X(m, rng)
            _, psi, psi1, _ = link(Xm @ theta)
            yield Xm, psi, psi1

    M = np.zeros((p, p))
    b = np.zeros(p)
    for Xm, psi, psi1 in draws():
        Xw = psi[:, None] * Xm
        M += Xw.T @ Xw
        b += theta[j] * (Xm.T @ psi1)
        b[j] += psi.sum()
    M /= mc_draws
    b /= mc_draws
    cond = float(np.linalg.cond(M))
    if not np.isfinite(cond) or cond > 1e12:
        raise NumericError(f"estimated Gram matrix is singular (condition number {cond:.3g})")
    g = np.linalg.solve(M, b)
    resid = float(np.max(np.abs(M @ g - b)))

    # delta method: per-draw influence M^{-1}(b_m - psi_m^2 x_m x_m' g)
    Minv = np.linalg.inv(M)
    sq = np.zeros(p)
    for Xm, psi, psi1 in draws():
        Z = theta[j] * psi1[:, None] * Xm - (psi**2 * (Xm @ g))[:, None] * Xm
        Z[:, j] += psi
        Z -= b
        Phi = Z @ Minv
        sq += np.sum(Phi**2, axis=0)
    g_se = np.sqrt(sq / mc_draws / mc_draws)

    gsv = None
    if X is not None:
        X = np.asarray(X, dtype=float)
        _, psi, _, _ = link(X @ theta)
        gsv = psi * (X @ g)
    return OracleWeights(g, g_se, gsv, mc_draws, cond, resid)
