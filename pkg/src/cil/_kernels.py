"""Compiled inner loops for the L1 coordinate-descent solver.

Falls back to the same (slow) pure-Python code when numba is missing; the
algorithm and results are identical either way.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def wrap(fn):
            return fn

        return wrap


@njit(cache=True)
def _pen_obj(r, w, v, lam, n):
    quad = 0.0
    for i in range(r.shape[0]):
        quad += w[i] * r[i] * r[i]
    l1 = 0.0
    for j in range(v.shape[0]):
        l1 += abs(v[j])
    return 0.5 * quad / n + lam * l1


@njit(cache=True)
def _sweep(X, r, w, v, b0, col_scale, lam, n, wsum, active, restrict):
    J = v.shape[0]
    rows = X.shape[0]
    max_change = 0.0
    for j in range(J):
        if restrict and not active[j]:
            continue
        cs = col_scale[j]
        if cs <= 0.0:
            v[j] = 0.0
            continue
        s = 0.0
        for i in range(rows):
            s += X[i, j] * w[i] * r[i]
        zj = s / n + cs * v[j]
        if zj > lam:
            new = (zj - lam) / cs
        elif zj < -lam:
            new = (zj + lam) / cs
        else:
            new = 0.0
        if new != v[j]:
            delta = new - v[j]
            for i in range(rows):
                r[i] -= X[i, j] * delta
            if abs(delta) > max_change:
                max_change = abs(delta)
            v[j] = new
    s = 0.0
    for i in range(rows):
        s += w[i] * r[i]
    shift = s / wsum
    if shift != 0.0:
        b0 += shift
        for i in range(rows):
            r[i] -= shift
        if abs(shift) > max_change:
            max_change = abs(shift)
    return b0, max_change


@njit(cache=True)
def cd_solve(X, z, w, v, b0, lam, tol, max_sweeps):
    """Active-set cyclic coordinate descent on the weighted L1 objective.

    Minimizes 0.5/n * sum_i w_i (z_i - b0 - x_i'v)^2 + lam * |v|_1 in place
    over v; the intercept is unpenalized. Alternates full sweeps with
    sweeps over the nonzero set; convergence requires a sweep (full at the
    outer level) whose largest coefficient change is below tol. Returns
    (b0, sweeps, converged, per-sweep objectives).
    """
    n, J = X.shape
    r = np.empty(n)
    for i in range(n):
        acc = z[i] - b0
        for j in range(J):
            acc -= X[i, j] * v[j]
        r[i] = acc
    wsum = 0.0
    for i in range(n):
        wsum += w[i]
    col_scale = np.empty(J)
    for j in range(J):
        s = 0.0
        for i in range(n):
            s += X[i, j] * X[i, j] * w[i]
        col_scale[j] = s / n

    objs = np.empty(max_sweeps + 1)
    objs[0] = _pen_obj(r, w, v, lam, n)
    active = np.zeros(J, dtype=np.bool_)
    sweeps = 0
    converged = False
    while sweeps < max_sweeps:
        sweeps += 1
        b0, change = _sweep(X, r, w, v, b0, col_scale, lam, n, wsum, active, False)
        objs[sweeps] = _pen_obj(r, w, v, lam, n)
        if change < tol:
            converged = True
            break
        any_active = False
        for j in range(J):
            active[j] = v[j] != 0.0
            if active[j]:
                any_active = True
        while any_active and sweeps < max_sweeps:
            sweeps += 1
            b0, change = _sweep(X, r, w, v, b0, col_scale, lam, n, wsum, active, True)
            objs[sweeps] = _pen_obj(r, w, v, lam, n)
            if change < tol:
                break
    return b0, sweeps, converged, objs[: sweeps + 1]
