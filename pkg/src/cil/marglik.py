"""Marginal likelihoods for the Gaussian outcome family under the pMOM prior.

The marginal of a model factors exactly into the Gaussian-prior marginal
(conjugate normal-inverse-gamma closed form) times a moment correction.
The correction is evaluated as a product of per-coordinate expectations
E[coef^2 / (tau*phi) | y] = (m_k^2 * a_n/b_n + S_kk) / tau, with (m, phi*S)
the conditional posterior mean/covariance of the included coefficients and
(a_n, b_n) the posterior of the dispersion. The joint moment of the product
is deliberately not computed.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np
from scipy.linalg import cho_solve, cholesky, lapack
from scipy.special import gammaln, logsumexp

from .data import Dataset, ModelIndicator, PriorSpec, ThetaVector
from .priors import FeatureMatrix, model_log_prior

__all__ = [
    "RankDeficientError",
    "MarginalResult",
    "MarginalEvaluator",
    "gaussian_marginal_loglik",
    "enumerate_posterior",
    "enumeration_inclusion_probabilities",
]

RANK_TOL = 1e-10


class RankDeficientError(ValueError):
    """Included design submatrix (with intercept) is not full column rank."""


@dataclass(frozen=True)
class MarginalResult:
    """Marginal likelihood of one model plus its within-model posterior.

    log_ml = gaussian_log_ml + correction_log exactly. ``posterior_mean``
    and ``posterior_scale`` cover the included columns in design order
    (intercept first when present); the coefficient posterior given phi is
    N(posterior_mean, phi * posterior_scale) and phi | y is
    InvGamma(*phi_posterior) (None in known-phi mode).
    """

    log_ml: float
    gaussian_log_ml: float
    correction_log: float
    posterior_mean: np.ndarray
    posterior_scale: np.ndarray
    phi_posterior: tuple[float, float] | None
    columns: tuple[int, ...]
    underdetermined: bool = False


class MarginalEvaluator:
    """Precomputed design products for fast repeated marginal evaluations.

    The full design is [intercept | D | X]; a model selects columns of the
    cached Gram matrix, so each evaluation costs O(p^3) in the number of
    included columns, independent of n.
    """

    def __init__(self, data: Dataset, spec: PriorSpec, phi: float | None = None):
        self.data = data
        self.spec = spec
        self.phi = phi
        if phi is not None and not phi > 0:
            raise ValueError("phi must be positive")
        blocks = [data.D, data.X]
        if spec.include_intercept:
            blocks.insert(0, np.ones((data.n, 1)))
        W = np.hstack(blocks)
        self._W = W
        self._G = W.T @ W
        self._u = W.T @ data.y
        self._yy = float(data.y @ data.y)
        self._icol = 1 if spec.include_intercept else 0
        # prior variance of column k is tau*phi times this scale
        scale = np.full(W.shape[1], spec.tau)
        if spec.include_intercept:
            scale[0] *= spec.intercept_scale
        self._prior_prec = 1.0 / scale

    def columns_for(self, model: ModelIndicator) -> tuple[int, ...]:
        T, J = self.data.T, self.data.J
        if (len(model.delta), len(model.gamma)) != (T, J):
            raise ValueError(f"model is {len(model.delta)}x{len(model.gamma)}, data is T={T}, J={J}")
        off = self._icol
        cols = list(range(off))
        cols += [off + t for t in range(T) if model.delta[t]]
        cols += [off + T + j for j in range(J) if model.gamma[j]]
        return tuple(cols)

    def _check_rank(self, G_sub: np.ndarray) -> None:
        p = G_sub.shape[0]
        if p == 0:
            return
        tol = RANK_TOL * float(np.max(np.diag(G_sub)))
        _, _, rank, _ = lapack.dpstrf(G_sub, tol=tol, lower=1)
        if rank < p:
            raise RankDeficientError(
                f"included design has rank {int(rank)} < {p} columns (tol {tol:.3e})"
            )

    def evaluate(self, model: ModelIndicator) -> MarginalResult:
        cols = self.columns_for(model)
        idx = np.asarray(cols, dtype=np.intp)
        p = idx.size
        n = self.data.n
        spec = self.spec

        G_sub = self._G[np.ix_(idx, idx)]
        self._check_rank(G_sub)
        u_sub = self._u[idx]
        prec = self._prior_prec[idx]

        if p:
            Vinv = G_sub + np.diag(prec)
            L = cholesky(Vinv, lower=True)
            m = cho_solve((L, True), u_sub)
            V = cho_solve((L, True), np.eye(p))
            logdet_V = -2.0 * float(np.sum(np.log(np.diag(L))))
            logdet_prior = -float(np.sum(np.log(prec)))
            S = max(self._yy - float(u_sub @ m), 0.0)
        else:
            m = np.zeros(0)
            V = np.zeros((0, 0))
            logdet_V = logdet_prior = 0.0
            S = self._yy

        if self.phi is None:
            a_n = spec.a_phi + 0.5 * n
            b_n = spec.b_phi + 0.5 * S
            gauss = (
                -0.5 * n * np.log(2.0 * np.pi)
                + 0.5 * (logdet_V - logdet_prior)
                + spec.a_phi * np.log(spec.b_phi)
                - a_n * np.log(b_n)
                + gammaln(a_n)
                - gammaln(spec.a_phi)
            )
            e_inv_phi = a_n / b_n
            phi_post = (float(a_n), float(b_n))
        else:
            phi = self.phi
            gauss = (
                -0.5 * n * np.log(2.0 * np.pi * phi)
                + 0.5 * (logdet_V - logdet_prior)
                - 0.5 * S / phi
            )
            e_inv_phi = 1.0 / phi
            phi_post = None

        # moment factor over penalized (non-intercept) included coefficients
        pen = slice(self._icol, p)
        second_moment_over_phi = m[pen] ** 2 * e_inv_phi + np.diag(V)[pen]
        correction = float(np.sum(np.log(second_moment_over_phi / spec.tau))) if p > self._icol else 0.0

        k_included = p - self._icol
        return MarginalResult(
            log_ml=float(gauss + correction),
            gaussian_log_ml=float(gauss),
            correction_log=correction,
            posterior_mean=m,
            posterior_scale=V,
            phi_posterior=phi_post,
            columns=cols,
            underdetermined=bool(n <= k_included + 1),
        )

    def log_ml(self, model: ModelIndicator) -> float:
        return self.evaluate(model).log_ml


def gaussian_marginal_loglik(
    data: Dataset, model: ModelIndicator, spec: PriorSpec, phi: float | None = None
) -> MarginalResult:
    """Marginal likelihood of one model; see MarginalEvaluator for reuse."""
    return MarginalEvaluator(data, spec, phi=phi).evaluate(model)


def enumerate_posterior(
    data: Dataset,
    theta: ThetaVector | None,
    F: FeatureMatrix | None,
    spec: PriorSpec,
    limit: int = 20,
) -> dict[ModelIndicator, float]:
    """Exact posterior over all 2^(T+J) models by exhaustive enumeration.

    Rank-deficient models get probability zero. Probabilities are
    normalized by log-sum-exp and sum to one.
    """
    T, J = data.T, data.J
    if T + J > limit:
        raise ValueError(f"T+J = {T + J} exceeds enumeration limit {limit}")
    ev = MarginalEvaluator(data, spec)
    models = []
    logs = []
    for delta in product((0, 1), repeat=T):
        for gamma in product((0, 1), repeat=J):
            model = ModelIndicator(delta, gamma)
            try:
                lml = ev.log_ml(model)
            except RankDeficientError:
                lml = -np.inf
            models.append(model)
            logs.append(lml + model_log_prior(model, theta, F, spec))
    logs = np.asarray(logs)
    probs = np.exp(logs - logsumexp(logs))
    probs /= probs.sum()
    return dict(zip(models, probs.tolist()))


def enumeration_inclusion_probabilities(
    dist: dict[ModelIndicator, float]
) -> tuple[np.ndarray, np.ndarray]:
    """Marginal treatment/control inclusion probabilities of an enumerated posterior."""
    models = list(dist)
    T, J = len(models[0].delta), len(models[0].gamma)
    s = np.zeros(T)
    q = np.zeros(J)
    for model, p in dist.items():
        s += p * np.asarray(model.delta, dtype=float)
        if J:
            q += p * np.asarray(model.gamma, dtype=float)
    return s, q
