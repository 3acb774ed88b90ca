"""Reference estimators: oracle OLS, cross-validated outcome LASSO, and
double selection with post-selection OLS."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .data import Dataset
from .features import PATH_LEN, PATH_RATIO, lambda_max, lasso_fit, lasso_path_bic
from .rng import substream

__all__ = ["OlsFit", "DmlFit", "oracle_ols", "outcome_lasso", "dml_double_selection"]


@dataclass(frozen=True)
class OlsFit:
    alpha_hat: np.ndarray
    se: np.ndarray
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    pvalues: np.ndarray
    controls_used: np.ndarray  # boolean mask over the J controls


def _ols(W: np.ndarray, y: np.ndarray):
    n, p = W.shape
    G = W.T @ W
    if np.linalg.matrix_rank(G) < p:
        raise np.linalg.LinAlgError("design matrix is rank deficient")
    Ginv = np.linalg.inv(G)
    beta = Ginv @ (W.T @ y)
    resid = y - W @ beta
    return beta, resid, Ginv


def oracle_ols(data: Dataset, true_gamma, level: float = 0.95) -> OlsFit:
    """OLS of y on all treatments plus the truly active controls.

    Classical standard errors with t critical values; the benchmark every
    simulated method is ratioed against.
    """
    true_gamma = np.asarray(true_gamma).astype(bool)
    if true_gamma.shape[0] != data.J:
        raise ValueError(f"true_gamma covers {true_gamma.shape[0]} of {data.J} controls")
    W = np.column_stack([np.ones(data.n), data.D, data.X[:, true_gamma]])
    n, p = W.shape
    if n <= p:
        raise ValueError(f"need n > {p} rows for the oracle fit, got {n}")
    beta, resid, Ginv = _ols(W, data.y)
    sigma2 = float(resid @ resid) / (n - p)
    se_all = np.sqrt(sigma2 * np.diag(Ginv))
    tcrit = stats.t.ppf(0.5 + level / 2.0, df=n - p)
    sl = slice(1, 1 + data.T)
    alpha, se = beta[sl], se_all[sl]
    tvals = np.divide(alpha, se, out=np.zeros_like(alpha), where=se > 0)
    pvals = 2.0 * stats.t.sf(np.abs(tvals), df=n - p)
    return OlsFit(alpha, se, alpha - tcrit * se, alpha + tcrit * se, pvals, true_gamma)


@dataclass(frozen=True)
class LassoCvFit:
    alpha_hat: np.ndarray
    control_coef: np.ndarray
    lambda_star: float
    cv_mse: np.ndarray
    lambdas: np.ndarray


def outcome_lasso(data: Dataset, folds: int = 10, seed: int = 0) -> LassoCvFit:
    """LASSO of y on [D X] jointly with lambda picked by K-fold CV.

    Treatments are penalized like controls, so weak effects can be zeroed
    out; that bias is the point of this baseline. Columns are standardized
    internally for the fit and coefficients mapped back to the raw scale.
    """
    if data.n < 2 * folds:
        raise ValueError(f"need at least {2 * folds} rows for {folds}-fold CV")
    Z = np.column_stack([data.D, data.X])
    y = data.y
    n = data.n
    mu = Z.mean(axis=0)
    sd = Z.std(axis=0, ddof=1)
    sd[sd <= 1e-12] = 1.0
    Zs = (Z - mu) / sd

    lam_hi = lambda_max(Zs, y)
    if lam_hi <= 0.0:
        coef = np.zeros(Z.shape[1])
        return LassoCvFit(coef[: data.T], coef[data.T :], 0.0, np.zeros(1), np.zeros(1))
    lambdas = lam_hi * PATH_RATIO ** (np.arange(PATH_LEN) / (PATH_LEN - 1))

    rng = substream(seed, "cv-folds")
    perm = rng.permutation(n)
    fold_of = np.empty(n, dtype=int)
    for f, chunk in enumerate(np.array_split(perm, folds)):
        fold_of[chunk] = f

    mse = np.zeros((folds, PATH_LEN))
    for f in range(folds):
        test = fold_of == f
        Ztr, ytr = Zs[~test], y[~test]
        Zte, yte = Zs[test], y[test]
        warm = None
        for i, lam in enumerate(lambdas):
            fit = lasso_fit(Ztr, ytr, "gaussian", float(lam), warm=warm,
                            check_monotone=False, warn_unstandardized=False)
            warm = (fit.coef, fit.intercept)
            pred = fit.intercept + Zte @ fit.coef
            mse[f, i] = float(np.mean((yte - pred) ** 2))
    cv = mse.mean(axis=0)
    best = 0
    for i in range(1, PATH_LEN):
        if cv[i] < cv[best]:
            best = i

    warm = None
    for lam in lambdas[: best + 1]:
        fit = lasso_fit(Zs, y, "gaussian", float(lam), warm=warm,
                        check_monotone=False, warn_unstandardized=False)
        warm = (fit.coef, fit.intercept)
    coef = fit.coef / sd
    return LassoCvFit(coef[: data.T], coef[data.T :], float(lambdas[best]), cv, lambdas)


@dataclass(frozen=True)
class DmlFit:
    alpha_hat: np.ndarray
    se: np.ndarray
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    pvalues: np.ndarray
    selected: np.ndarray  # union of the selection-step supports (bool, J)
    selected_outcome: np.ndarray
    selected_treatment: np.ndarray  # (T, J)


def dml_double_selection(data: Dataset, level: float = 0.95) -> DmlFit:
    """Double selection: union the supports of BIC-penalized regressions of
    y on X and of each treatment on X, then OLS of y on all treatments plus
    the union, with HC1 sandwich standard errors."""
    X = data.X
    binary = data.binary_treatments()
    sel_y = lasso_path_bic(X, data.y, "gaussian", warn_unstandardized=False).fit.coef != 0
    sel_d = np.zeros((data.T, data.J), dtype=bool)
    for t in range(data.T):
        fam = "binomial" if binary[t] else "gaussian"
        sel_d[t] = lasso_path_bic(X, data.D[:, t], fam, warn_unstandardized=False).fit.coef != 0
    union = sel_y | sel_d.any(axis=0)

    W = np.column_stack([np.ones(data.n), data.D, X[:, union]])
    n, p = W.shape
    if p >= n:
        raise ValueError(
            f"double selection kept {int(union.sum())} controls; {p} columns "
            f"for {n} rows leaves no degrees of freedom"
        )
    beta, resid, Ginv = _ols(W, data.y)
    meat = (W * resid[:, None] ** 2).T @ W
    cov = Ginv @ meat @ Ginv * (n / (n - p))
    se_all = np.sqrt(np.diag(cov))
    sl = slice(1, 1 + data.T)
    alpha, se = beta[sl], se_all[sl]
    z = stats.norm.ppf(0.5 + level / 2.0)
    zvals = np.divide(alpha, se, out=np.zeros_like(alpha), where=se > 0)
    pvals = 2.0 * stats.norm.sf(np.abs(zvals))
    return DmlFit(
        alpha, se, alpha - z * se, alpha + z * se, pvals,
        selected=union, selected_outcome=sel_y, selected_treatment=sel_d,
    )
