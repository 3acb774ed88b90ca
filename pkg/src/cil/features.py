"""Treatment-control association features.

Each treatment is regressed on all controls with either an L1-penalized
regression (penalty picked by BIC over a descending path, gaussian or
binomial family) or minimum-norm ridge via the pseudoinverse; the absolute
coefficients become the feature matrix driving control inclusion
probabilities.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from ._kernels import cd_solve
from .data import Dataset
from .priors import FeatureMatrix

__all__ = [
    "LassoFit",
    "LassoPathFit",
    "lasso_fit",
    "lasso_path_bic",
    "ridge_min_norm",
    "extract_features",
]

COEF_TOL = 1e-8
MAX_SWEEPS = 10_000
MAX_IRLS = 50
PATH_LEN = 100
PATH_RATIO = 1e-4
_PMIN = 1e-5


@dataclass(frozen=True)
class LassoFit:
    coef: np.ndarray
    intercept: float
    lam: float
    family: str
    converged: bool
    n_sweeps: int
    objective: float


@dataclass(frozen=True)
class LassoPathFit:
    fit: LassoFit
    lambda_star: float
    lambdas: np.ndarray
    bics: np.ndarray
    nnz: np.ndarray


def _cd_weighted(X, z, weights, v, b0, lam, n, max_sweeps, check_monotone):
    """Coordinate descent on 0.5/n * sum w*(z - b0 - Xv)^2 + lam*|v|_1.

    Thin wrapper around the compiled active-set kernel; optionally asserts
    that no sweep increased the penalized objective.
    """
    Xf = X if X.flags.f_contiguous else np.asfortranarray(X)
    w = np.ones(n) if weights is None else np.ascontiguousarray(weights, dtype=float)
    b0, sweeps, converged, objs = cd_solve(
        Xf, np.ascontiguousarray(z, dtype=float), w, v, float(b0), float(lam),
        COEF_TOL, int(max_sweeps),
    )
    if check_monotone:
        slack = 1e-10 * (1.0 + np.abs(objs[:-1]))
        if np.any(objs[1:] > objs[:-1] + slack):
            raise AssertionError("coordinate sweep increased objective")
    return v, float(b0), bool(converged), int(sweeps), float(objs[-1])


def lasso_fit(
    X: np.ndarray,
    d: np.ndarray,
    family: str = "gaussian",
    lam: float = 0.0,
    warm: tuple[np.ndarray, float] | None = None,
    check_monotone: bool = True,
    warn_unstandardized: bool = True,
) -> LassoFit:
    """L1-penalized regression of d on X with an unpenalized intercept.

    Gaussian: cyclic coordinate descent. Binomial: IRLS, one working-response
    majorization per outer iteration, coordinate descent inside. Converged
    when the largest coefficient change in a sweep drops below 1e-8.
    """
    X = np.asarray(X, dtype=float)
    d = np.asarray(d, dtype=float).reshape(-1)
    n, J = X.shape
    if d.shape[0] != n:
        raise ValueError(f"{d.shape[0]} responses for {n} rows")
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    if family not in ("gaussian", "binomial"):
        raise ValueError(f"unknown family {family!r}")
    if family == "binomial" and not np.all((d == 0.0) | (d == 1.0)):
        raise ValueError("binomial family requires a 0/1 response")
    if warn_unstandardized and J:
        mu = X.mean(axis=0)
        sd = X.std(axis=0, ddof=1) if n > 1 else np.ones(J)
        if np.any(np.abs(mu) > 1e-6) or np.any(np.abs(sd - 1.0) > 1e-3):
            warnings.warn("controls do not look standardized; L1 penalties assume comparable scales")

    if warm is not None:
        v = np.array(warm[0], dtype=float)
        b0 = float(warm[1])
    else:
        v = np.zeros(J)
        b0 = float(d.mean()) if family == "gaussian" else _logit(np.clip(d.mean(), _PMIN, 1 - _PMIN))

    if family == "gaussian":
        v, b0, converged, sweeps, obj = _cd_weighted(
            X, d, None, v, b0, lam, n, MAX_SWEEPS, check_monotone
        )
        if not converged:
            warnings.warn(f"lasso did not converge in {sweeps} sweeps (lambda={lam:g})")
        return LassoFit(v, b0, lam, family, converged, sweeps, obj)

    total_sweeps = 0
    converged = False
    for _ in range(MAX_IRLS):
        eta = b0 + X @ v
        p = np.clip(_expit(eta), _PMIN, 1.0 - _PMIN)
        w = p * (1.0 - p)
        z = eta + (d - p) / w
        v_old = v.copy()
        b0_old = b0
        budget = max(MAX_SWEEPS - total_sweeps, 1)
        v, b0, _, sweeps, _ = _cd_weighted(
            X, z, w, v, b0, lam, n, min(budget, 1000), check_monotone
        )
        total_sweeps += sweeps
        outer_change = max(float(np.max(np.abs(v - v_old))) if J else 0.0, abs(b0 - b0_old))
        if outer_change < COEF_TOL:
            converged = True
            break
        if total_sweeps >= MAX_SWEEPS:
            break
    if not converged:
        warnings.warn(f"binomial lasso did not converge (lambda={lam:g})")
    obj = _binomial_objective(X, d, v, b0, lam, n)
    return LassoFit(v, b0, lam, family, converged, total_sweeps, obj)


def _expit(x):
    return 1.0 / (1.0 + np.exp(-np.clip(x, -700, 700)))


def _logit(p):
    return float(np.log(p / (1.0 - p)))


def _binomial_objective(X, d, v, b0, lam, n):
    eta = b0 + X @ v
    # -loglik/n, numerically safe form: log(1+e^eta) - d*eta
    nll = float(np.sum(np.logaddexp(0.0, eta) - d * eta)) / n
    return nll + lam * float(np.abs(v).sum())


def lambda_max(X: np.ndarray, d: np.ndarray) -> float:
    """Smallest penalty that zeroes every coefficient (both families)."""
    X = np.asarray(X, dtype=float)
    d = np.asarray(d, dtype=float).reshape(-1)
    if X.shape[1] == 0:
        return 0.0
    return float(np.max(np.abs(X.T @ (d - d.mean())))) / X.shape[0]


def _loglik(X, d, fit: LassoFit, family: str, n: int) -> float:
    eta = fit.intercept + X @ fit.coef
    if family == "gaussian":
        rss = float(np.sum((d - eta) ** 2))
        sig2 = max(rss / n, 1e-300)
        return -0.5 * n * (np.log(2.0 * np.pi * sig2) + 1.0)
    p = np.clip(_expit(eta), 1e-12, 1.0 - 1e-12)
    return float(np.sum(d * np.log(p) + (1.0 - d) * np.log1p(-p)))


def lasso_path_bic(
    X: np.ndarray,
    d: np.ndarray,
    family: str = "gaussian",
    warn_unstandardized: bool = True,
) -> LassoPathFit:
    """Fit a 100-point descending lambda path with warm starts and pick by BIC.

    BIC = -2 loglik + k log n with k = nonzero count + intercept
    (+ variance for the gaussian family). Ties go to the larger lambda.
    """
    X = np.asfortranarray(X, dtype=float)
    d = np.asarray(d, dtype=float).reshape(-1)
    n, J = X.shape
    lam_hi = lambda_max(X, d)
    if lam_hi <= 0.0:
        fit = lasso_fit(X, d, family, 0.0, warn_unstandardized=False)
        return LassoPathFit(fit, 0.0, np.zeros(1), np.array([_bic(X, d, fit, family, n)]), np.zeros(1, int))

    lambdas = lam_hi * PATH_RATIO ** (np.arange(PATH_LEN) / (PATH_LEN - 1))
    fits = []
    warm = None
    for lam in lambdas:
        fit = lasso_fit(
            X, d, family, float(lam), warm=warm, check_monotone=False,
            warn_unstandardized=warn_unstandardized and warm is None,
        )
        warm = (fit.coef, fit.intercept)
        fits.append(fit)

    bics = np.array([_bic(X, d, f, family, n) for f in fits])
    nnz = np.array([int(np.count_nonzero(f.coef)) for f in fits])
    best = 0
    for i in range(1, PATH_LEN):
        if bics[i] < bics[best]:
            best = i
    return LassoPathFit(fits[best], float(lambdas[best]), lambdas, bics, nnz)


def _bic(X, d, fit: LassoFit, family: str, n: int) -> float:
    k = int(np.count_nonzero(fit.coef)) + 1 + (1 if family == "gaussian" else 0)
    return -2.0 * _loglik(X, d, fit, family, n) + k * np.log(n)


def ridge_min_norm(X: np.ndarray, d: np.ndarray) -> np.ndarray:
    """Minimum-norm least-squares coefficients pinv(X'X) X'd via SVD.

    Singular values below max(n, J) * eps * sigma_max are dropped. Equals
    ordinary least squares when J < n and X has full rank; for J > n it is
    the minimum-L2-norm interpolator.
    """
    X = np.asarray(X, dtype=float)
    d = np.asarray(d, dtype=float).reshape(-1)
    n, J = X.shape
    if J == 0:
        return np.zeros(0)
    U, s, Vt = np.linalg.svd(X, full_matrices=False)
    cutoff = max(n, J) * np.finfo(float).eps * (s[0] if s.size else 0.0)
    keep = s > cutoff
    inv = np.zeros_like(s)
    inv[keep] = 1.0 / s[keep]
    return Vt.T @ (inv * (U.T @ d))


def extract_features(
    data: Dataset,
    method: str = "lasso_bic",
    families=None,
    max_normalize: bool = False,
) -> FeatureMatrix:
    """Feature matrix |w| from per-treatment regressions on the controls.

    ``families`` may be None (binary treatments get "binomial", the rest
    "gaussian"), a single family name, or one name per treatment. The ridge
    method is only defined for continuous treatments.
    """
    if method not in ("lasso_bic", "ridge"):
        raise ValueError(f"unknown feature method {method!r}")
    binary = data.binary_treatments()
    if families is None:
        fams = tuple("binomial" if b else "gaussian" for b in binary)
    elif isinstance(families, str):
        fams = (families,) * data.T
    else:
        fams = tuple(families)
        if len(fams) != data.T:
            raise ValueError(f"{len(fams)} families for {data.T} treatments")

    F = np.zeros((data.J, data.T))
    for t in range(data.T):
        d_t = data.D[:, t]
        if method == "ridge":
            if binary[t]:
                raise ValueError(
                    f"ridge features are defined for continuous treatments only; "
                    f"treatment {data.treatment_names[t]!r} is binary"
                )
            w = ridge_min_norm(data.X, d_t)
        else:
            if fams[t] == "binomial" and not binary[t]:
                raise ValueError(f"treatment {data.treatment_names[t]!r} is not 0/1")
            w = lasso_path_bic(data.X, d_t, fams[t], warn_unstandardized=not data.standardized).fit.coef
        F[:, t] = np.abs(w)
    fm = FeatureMatrix(F, method, fams)
    return fm.max_normalized() if max_normalize else fm
