"""Treatment-effect inference from a posterior sample set.

Point estimates and credible intervals are model averages. Within each
model, coefficients are drawn from the conjugate Gaussian posterior of the
Gaussian-prior working model and reweighted toward the non-local prior by
self-normalized importance weights prod_k coef_k^2 / (tau*phi); excluded
treatments contribute exact zeros.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, PriorSpec, ThetaVector
from .marglik import MarginalEvaluator
from .rng import substream
from .sampler import PosteriorSampleSet, inclusion_probabilities

__all__ = [
    "TreatmentInference",
    "DeviationSummary",
    "ConditionalMeanModel",
    "bma_estimate",
    "treatment_deviation",
    "estimate_conditional_treatment_mean",
    "weighted_quantile",
]

DEFAULT_LEVELS = (0.5, 0.9, 0.95)


def weighted_quantile(values: np.ndarray, weights: np.ndarray, q) -> np.ndarray:
    """Type-1 (left-continuous inverse CDF) weighted quantiles."""
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    q = np.atleast_1d(np.asarray(q, dtype=float))
    order = np.argsort(values, kind="stable")
    v = values[order]
    cw = np.cumsum(weights[order])
    cw /= cw[-1]
    idx = np.minimum(np.searchsorted(cw, q, side="left"), v.size - 1)
    return v[idx]


@dataclass
class TreatmentInference:
    """BMA treatment estimates with weighted posterior draws.

    ``draws`` is (n_draws, T) with importance weights ``weights`` (summing
    to 1); ``intervals[level]`` is a (T, 2) array of lower/upper weighted
    quantiles. ``inclusion`` holds the treatments' posterior inclusion
    probabilities.
    """

    alpha_hat: np.ndarray
    alpha_se: np.ndarray
    intervals: dict[float, np.ndarray]
    inclusion: np.ndarray
    draws: np.ndarray
    weights: np.ndarray
    spec: PriorSpec
    theta: ThetaVector | None
    seed: int
    metadata: dict = field(default_factory=dict)

    @property
    def n_draws(self) -> int:
        return self.draws.shape[0]

    @property
    def T(self) -> int:
        return self.draws.shape[1]


def bma_estimate(
    samples: PosteriorSampleSet,
    data: Dataset,
    spec: PriorSpec,
    n_draws: int = 5_000,
    seed: int = 0,
    levels=DEFAULT_LEVELS,
    evaluator: MarginalEvaluator | None = None,
) -> TreatmentInference:
    """Model-averaged posterior draws of the treatment coefficients.

    Each draw picks a model by visit weight, draws the dispersion from its
    inverse-gamma posterior and the included coefficients from the
    conditional Gaussian, then receives a non-local importance weight
    self-normalized within the model's batch of draws.
    """
    if not samples.models:
        raise ValueError("empty sample set")
    if n_draws < 100:
        raise ValueError(f"need at least 100 draws, got {n_draws}")
    ev = evaluator if evaluator is not None else MarginalEvaluator(data, spec)
    T = samples.T
    icol = 1 if spec.include_intercept else 0

    keys = sorted(samples.models)
    counts = np.array([samples.models[k][0] for k in keys], dtype=float)
    probs = counts / counts.sum()

    rng = substream(seed, "bma-draws")
    assignment = rng.choice(len(keys), size=n_draws, p=probs)
    batch_sizes = np.bincount(assignment, minlength=len(keys))

    draws = np.zeros((n_draws, T))
    weights = np.zeros(n_draws)
    pos = 0
    for i, key in enumerate(keys):
        k = int(batch_sizes[i])
        if k == 0:
            continue
        mr = ev.evaluate(key)
        p = mr.posterior_mean.shape[0]
        if mr.phi_posterior is None:
            raise ValueError("draws need the dispersion posterior (unknown-phi mode)")
        a_n, b_n = mr.phi_posterior
        phi = b_n / rng.standard_gamma(a_n, size=k)
        if p:
            L = np.linalg.cholesky(mr.posterior_scale)
            z = rng.standard_normal((k, p))
            coef = mr.posterior_mean + np.sqrt(phi)[:, None] * (z @ L.T)
        else:
            coef = np.zeros((k, 0))
        pen = coef[:, icol:]
        if pen.shape[1]:
            with np.errstate(divide="ignore"):
                logw = np.sum(
                    2.0 * np.log(np.abs(pen)) - np.log(spec.tau * phi)[:, None], axis=1
                )
            logw -= logw.max()
            w = np.exp(logw)
        else:
            w = np.ones(k)
        w_sum = w.sum()
        if w_sum <= 0:  # all draws hit a zero coefficient; fall back to uniform
            w = np.ones(k)
            w_sum = float(k)
        weights[pos : pos + k] = probs[i] * w / w_sum

        included_t = [t for t in range(T) if key.delta[t]]
        for col, t in enumerate(included_t):
            draws[pos : pos + k, t] = coef[:, icol + col]
        pos += k

    weights /= weights.sum()
    alpha_hat = weights @ draws
    alpha_se = np.sqrt(np.sum(weights[:, None] ** 2 * (draws - alpha_hat) ** 2, axis=0))
    intervals = {}
    for level in levels:
        lo, hi = (1.0 - level) / 2.0, 1.0 - (1.0 - level) / 2.0
        bounds = np.empty((T, 2))
        for t in range(T):
            bounds[t] = weighted_quantile(draws[:, t], weights, [lo, hi])
        intervals[float(level)] = bounds

    s, _ = inclusion_probabilities(samples)
    return TreatmentInference(
        alpha_hat=alpha_hat,
        alpha_se=alpha_se,
        intervals=intervals,
        inclusion=s,
        draws=draws,
        weights=weights,
        spec=spec,
        theta=samples.theta_used,
        seed=seed,
        metadata={
            "draw_method": "gaussian-within-model draws with self-normalized "
            "non-local importance weights (per-model batches)",
        },
    )


@dataclass
class DeviationSummary:
    """Distribution of the salary-style deviation factor exp|delta' alpha|."""

    median: float
    intervals: dict[float, tuple[float, float]]
    mean: float
    draws: np.ndarray | None = None


def treatment_deviation(
    inference: TreatmentInference,
    d_new: np.ndarray,
    e_d_given_x: np.ndarray,
    levels=(0.5, 0.9),
    keep_draws: bool = False,
) -> DeviationSummary:
    """Posterior distribution of exp|(d_new - E[d|x])' alpha|.

    The factor is 1 exactly when the new treatments match their conditional
    expectation or when every alpha draw is zero; it is never below 1.
    """
    d_new = np.asarray(d_new, dtype=float).reshape(-1)
    e = np.asarray(e_d_given_x, dtype=float).reshape(-1)
    if d_new.shape[0] != inference.T or e.shape[0] != inference.T:
        raise ValueError(
            f"expected length-{inference.T} treatment vectors, got {d_new.shape[0]} and {e.shape[0]}"
        )
    h = np.abs(inference.draws @ (d_new - e))
    vals = np.exp(h)
    w = inference.weights
    intervals = {}
    for level in levels:
        lo, hi = (1.0 - level) / 2.0, 1.0 - (1.0 - level) / 2.0
        qs = weighted_quantile(vals, w, [lo, hi])
        intervals[float(level)] = (float(qs[0]), float(qs[1]))
    return DeviationSummary(
        median=float(weighted_quantile(vals, w, [0.5])[0]),
        intervals=intervals,
        mean=float(w @ vals),
        draws=vals if keep_draws else None,
    )


@dataclass
class ConditionalMeanModel:
    """Fitted predictor x -> E(d | x) for one treatment."""

    kind: str
    intercept: float
    coef: np.ndarray
    separation: bool = False

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        one_row = X.ndim == 1
        if one_row:
            X = X[None, :]
        eta = self.intercept + X @ self.coef
        out = 1.0 / (1.0 + np.exp(-np.clip(eta, -700, 700))) if self.kind == "logistic" else eta
        return float(out[0]) if one_row else out

    __call__ = predict


RIDGE = 1e-6


def estimate_conditional_treatment_mean(
    data: Dataset, t: int, method: str = "auto"
) -> ConditionalMeanModel:
    """Lightly ridge-penalized regression of treatment t on the controls.

    Binary treatments get a logistic fit (Newton iterations), continuous
    ones a linear fit; ``method`` can force "logistic" or "linear". A
    logistic fit whose probabilities are pinned at 0/1 on more than 99% of
    rows is flagged as separated.
    """
    if not 0 <= t < data.T:
        raise ValueError(f"treatment index {t} out of range")
    d = data.D[:, t]
    binary = bool(np.all((d == 0.0) | (d == 1.0)))
    if method == "auto":
        method = "logistic" if binary else "linear"
    if method == "logistic" and not binary:
        raise ValueError("logistic conditional mean needs a 0/1 treatment")
    X = data.X
    n, J = X.shape
    W = np.column_stack([np.ones(n), X])
    pen = np.diag(np.r_[0.0, np.full(J, RIDGE)])

    if method == "linear":
        beta = np.linalg.solve(W.T @ W + pen, W.T @ d)
        return ConditionalMeanModel("linear", float(beta[0]), beta[1:])

    beta = np.zeros(J + 1)
    for _ in range(100):
        eta = W @ beta
        p = 1.0 / (1.0 + np.exp(-np.clip(eta, -700, 700)))
        w = np.maximum(p * (1.0 - p), 1e-10)
        grad = W.T @ (d - p) - pen @ beta
        hess = (W * w[:, None]).T @ W + pen
        step = np.linalg.solve(hess, grad)
        beta += step
        if np.max(np.abs(step)) < 1e-10:
            break
    eta = W @ beta
    p = 1.0 / (1.0 + np.exp(-np.clip(eta, -700, 700)))
    pinned = np.mean((p < 1e-8) | (p > 1.0 - 1e-8))
    separated = bool(pinned > 0.99)
    if separated:
        warnings.warn(f"treatment {data.treatment_names[t]!r} looks separable from the controls")
    return ConditionalMeanModel("logistic", float(beta[0]), beta[1:], separation=separated)
