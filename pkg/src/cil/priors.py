"""Model-space priors.

Control-inclusion probabilities driven by treatment-control association
features, the full model log-prior under the three supported prior
families, and the product-moment (pMOM) non-local coefficient prior.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import betaln, expit

from .data import ModelIndicator, PriorSpec, ThetaVector

__all__ = [
    "FeatureMatrix",
    "inclusion_probability",
    "inclusion_probability_gradient",
    "grouped_features",
    "model_log_prior",
    "pmom_log_density",
]


@dataclass(frozen=True)
class FeatureMatrix:
    """Nonnegative association features, one row per control, one column per treatment.

    Entry (j, t) is the absolute coefficient of control j in a sparse
    regression of treatment t on all controls.
    """

    F: np.ndarray
    method: str
    families: tuple[str, ...]

    def __post_init__(self):
        F = np.ascontiguousarray(self.F, dtype=float)
        if F.ndim != 2:
            raise ValueError("feature matrix must be 2-d (controls x treatments)")
        if not np.all(np.isfinite(F)):
            raise ValueError("feature entries must be finite")
        if F.size and F.min() < 0:
            raise ValueError("feature entries must be nonnegative")
        F.flags.writeable = False
        object.__setattr__(self, "F", F)

    @property
    def J(self) -> int:
        return self.F.shape[0]

    @property
    def T(self) -> int:
        return self.F.shape[1]

    def max_normalized(self) -> "FeatureMatrix":
        """Rescale each treatment column to unit maximum (zero columns untouched)."""
        F = np.array(self.F)
        for t in range(F.shape[1]):
            top = F[:, t].max() if F.shape[0] else 0.0
            if top > 0:
                F[:, t] /= top
        return FeatureMatrix(F, self.method, self.families)


def grouped_features(F: np.ndarray, group_map: np.ndarray) -> np.ndarray:
    """Aggregate the feature columns of treatments sharing a group coefficient.

    Returns a (J, G) matrix whose column g sums the feature columns of the
    treatments mapped to group g.
    """
    F = np.asarray(F, dtype=float)
    group_map = np.asarray(group_map, dtype=np.int64)
    if F.shape[1] != group_map.shape[0]:
        raise ValueError(f"{F.shape[1]} feature columns but group map covers {group_map.shape[0]}")
    G = int(group_map.max()) + 1 if group_map.size else 0
    A = np.zeros((F.shape[0], G))
    for t, g in enumerate(group_map):
        A[:, g] += F[:, t]
    return A


def _linear_predictor(theta: ThetaVector, A: np.ndarray) -> np.ndarray:
    return theta.theta0 + A @ theta.theta


def inclusion_probability(theta: ThetaVector, f: np.ndarray, rho: float) -> np.ndarray | float:
    """Prior probability that a control enters the outcome model.

    rho + (1 - 2*rho) * sigmoid(theta0 + sum_t theta_g(t) * f_t), strictly
    inside [rho, 1-rho]. ``f`` is either one control's feature row (length T,
    returns a scalar) or a (J, T) feature matrix (returns a length-J vector).
    """
    if not 0.0 < rho < 0.5:
        raise ValueError(f"rho must lie in (0, 1/2), got {rho}")
    f = np.asarray(f, dtype=float)
    if not np.all(np.isfinite(f)):
        raise ValueError("features must be finite")
    scalar = f.ndim == 1
    A = grouped_features(f[None, :] if scalar else f, theta.group_map)
    pi = rho + (1.0 - 2.0 * rho) * expit(_linear_predictor(theta, A))
    return float(pi[0]) if scalar else pi


def inclusion_probability_gradient(theta: ThetaVector, f: np.ndarray, rho: float) -> np.ndarray:
    """Gradient of the inclusion probability in (theta0, theta_1..theta_G).

    Equals (1 - 2*rho) * (1, a_1..a_G) * s * (1 - s) with s the inner
    sigmoid and a_g the group-aggregated features of the control.
    Equivalently (pi - rho)(1 - rho - pi) / (1 - 2*rho); the commonly
    quoted (1 - 2*rho) * pi * (1 - pi) is its rho -> 0 limit and is not the
    exact derivative when rho > 0.
    """
    f = np.asarray(f, dtype=float)
    A = grouped_features(f[None, :], theta.group_map)[0]
    s = expit(_linear_predictor(theta, A[None, :]))[0]
    fa = np.concatenate(([1.0], A))
    return (1.0 - 2.0 * rho) * fa * s * (1.0 - s)


def _bernoulli_logmass(bits: np.ndarray, p) -> float:
    bits = np.asarray(bits, dtype=float)
    p = np.broadcast_to(np.asarray(p, dtype=float), bits.shape)
    return float(np.sum(bits * np.log(p) + (1.0 - bits) * np.log1p(-p)))


def model_log_prior(
    model: ModelIndicator,
    theta: ThetaVector | None,
    F: FeatureMatrix | None,
    spec: PriorSpec,
) -> float:
    """Log prior mass of one model under the configured prior family.

    Treatments are independent Bernoulli(treat_incl) under every family.
    Controls follow feature-driven Bernoullis ("cil"), an exchangeable
    beta-binomial mass ("betabinomial"), or 1/2 each ("uniform", which also
    puts 1/2 on each treatment).
    """
    T, J = len(model.delta), len(model.gamma)
    if F is not None and (F.J, F.T) != (J, T):
        raise ValueError(f"feature matrix is {F.J}x{F.T}, model is J={J}, T={T}")

    if spec.model_prior == "uniform":
        return -(T + J) * np.log(2.0)

    lp = _bernoulli_logmass(np.asarray(model.delta), spec.treat_incl)
    if J == 0:
        return lp
    gamma = np.asarray(model.gamma, dtype=float)
    if spec.model_prior == "betabinomial":
        k = int(gamma.sum())
        return lp + betaln(spec.bb_a + k, spec.bb_b + J - k) - betaln(spec.bb_a, spec.bb_b)
    if theta is None or F is None:
        raise ValueError("cil prior needs theta and a feature matrix")
    pi = inclusion_probability(theta, F.F, spec.rho_for(J))
    return lp + _bernoulli_logmass(gamma, pi)


def pmom_log_density(coef: float, tau: float, phi: float) -> float:
    """Log density of the product-moment non-local prior for one coefficient.

    log[(coef^2 / (tau*phi)) * Normal(coef; 0, tau*phi)]; -inf at coef = 0,
    which is what makes the prior exclude null coefficients.
    """
    if not (tau > 0 and phi > 0):
        raise ValueError("tau and phi must be positive")
    if coef == 0.0:
        return -np.inf
    v = tau * phi
    return 2.0 * np.log(abs(coef)) - np.log(v) - 0.5 * (np.log(2.0 * np.pi * v) + coef * coef / v)
