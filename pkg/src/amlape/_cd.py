"""Compiled coordinate-descent kernel for the weighted lasso subproblem."""

import numba as nb
import numpy as np


@nb.njit(cache=True)
def _soft(u, t):
    if u > t:
        return u - t
    if u < -t:
        return u + t
    return 0.0


@nb.njit(cache=True)
def _update(X, w, r, theta, pen, col_w, k, inv_n):
    n = X.shape[0]
    a = col_w[k]
    old = theta[k]
    if a <= 0.0:
        new = 0.0 if pen[k] > 0.0 else old
    else:
        g = 0.0
        for i in range(n):
            g += X[i, k] * r[i]
        new = _soft(a * old + g * inv_n, pen[k]) / a
    delta = new - old
    if delta != 0.0:
        theta[k] = new
        for i in range(n):
            r[i] -= w[i] * X[i, k] * delta
    return a * delta * delta


@nb.njit(cache=True)
def weighted_lasso_cd(X, w, s, theta, pen, tol, max_sweeps):
    """Minimize the proximal-Newton model in place.

    The model is ``-(1/n) s'X d + (1/2n) d'X'WX d + sum_k pen_k |theta_k|`` with
    ``d = theta - theta_start``. ``r = s - W X d`` is kept current, so each
    coordinate step costs O(n). Returns the number of sweeps performed.
    """
    n, p = X.shape
    inv_n = 1.0 / n
    r = s.copy()
    col_w = np.empty(p)
    for k in range(p):
        acc = 0.0
        for i in range(n):
            acc += w[i] * X[i, k] * X[i, k]
        col_w[k] = acc * inv_n

    sweeps = 0
    active = np.zeros(p, dtype=np.bool_)
    while sweeps < max_sweeps:
        # full sweep
        biggest = 0.0
        changed_set = False
        for k in range(p):
            was = theta[k] != 0.0
            step = _update(X, w, r, theta, pen, col_w, k, inv_n)
            if step > biggest:
                biggest = step
            now = theta[k] != 0.0
            if now and not active[k]:
                active[k] = True
                changed_set = True
            elif was and not now:
                changed_set = True
        sweeps += 1
        if biggest <= tol and not changed_set:
            break
        # sweeps over the active set until it settles
        idx = np.nonzero(active)[0]
        while sweeps < max_sweeps:
            biggest = 0.0
            for k in idx:
                step = _update(X, w, r, theta, pen, col_w, k, inv_n)
                if step > biggest:
                    biggest = step
            sweeps += 1
            if biggest <= tol:
                break
    return sweeps
