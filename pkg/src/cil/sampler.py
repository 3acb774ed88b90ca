"""Posterior exploration over inclusion indicators.

A systematic-scan Gibbs sampler flips one coordinate of (delta, gamma) at a
time, sampling exactly from the two-point conditional formed by cached
marginal likelihoods plus the model prior. States are recorded once per
sweep after burn-in.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import betaln, logsumexp

from .data import Dataset, ModelIndicator, PriorSpec, ThetaVector
from .marglik import MarginalEvaluator, RankDeficientError
from .priors import FeatureMatrix, inclusion_probability
from .rng import substream

__all__ = [
    "SearchConfig",
    "PosteriorSampleSet",
    "sample_models",
    "inclusion_probabilities",
    "reweight_inclusion",
    "batch_log_prior",
    "merge_sample_sets",
    "save_sample_set",
    "load_sample_set",
]


@dataclass(frozen=True)
class SearchConfig:
    iterations: int = 10_000
    burn_in: int = 1_000
    seed: int = 0

    def __post_init__(self):
        if not self.iterations > self.burn_in >= 0:
            raise ValueError(
                f"need iterations > burn_in >= 0, got {self.iterations}, {self.burn_in}"
            )


@dataclass
class PosteriorSampleSet:
    """Visited models with visit counts and cached log marginal likelihoods."""

    models: dict[ModelIndicator, tuple[int, float]]
    T: int
    J: int
    theta_used: ThetaVector | None
    total_iterations: int
    burn_in: int
    rng_seed: int | None
    _arrays: tuple | None = field(default=None, repr=False, compare=False)

    def __len__(self) -> int:
        return len(self.models)

    def to_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """(Delta, Gamma, counts, log_ml) in deterministic model order."""
        if self._arrays is None:
            keys = sorted(self.models)
            M = len(keys)
            Delta = np.zeros((M, self.T))
            Gamma = np.zeros((M, self.J))
            counts = np.zeros(M)
            logml = np.zeros(M)
            for i, k in enumerate(keys):
                Delta[i] = k.delta
                Gamma[i] = k.gamma
                counts[i], logml[i] = self.models[k]
            self._arrays = (Delta, Gamma, counts, logml)
        return self._arrays


def _prior_log_odds_controls(theta, F, spec, J):
    """Per-control prior log-odds tables for the Gibbs conditionals.

    Returns (static_lo, bb_table): cil/uniform give a fixed length-J vector;
    betabinomial gives a table indexed by the inclusion count of the other
    controls.
    """
    if spec.model_prior == "uniform":
        return np.zeros(J), None
    if spec.model_prior == "betabinomial":
        k = np.arange(J + 1)
        lp = betaln(spec.bb_a + k, spec.bb_b + J - k)
        return None, lp[1:] - lp[:-1]  # entry k: log-odds given k others included
    if theta is None or F is None:
        raise ValueError("cil prior needs theta and a feature matrix")
    pi = np.atleast_1d(inclusion_probability(theta, F.F, spec.rho_for(J)))
    return np.log(pi) - np.log1p(-pi), None


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def sample_models(
    data: Dataset,
    theta: ThetaVector | None,
    F: FeatureMatrix | None,
    spec: PriorSpec,
    config: SearchConfig,
    evaluator: MarginalEvaluator | None = None,
    cache: dict | None = None,
) -> PosteriorSampleSet:
    """Systematic-scan Gibbs over (delta, gamma) at fixed theta.

    Marginal likelihoods are cached by model; a model whose likelihood
    evaluation fails the rank check gets -inf and is never proposed into.
    Pass ``evaluator``/``cache`` to share work across runs on the same data.
    """
    T, J = data.T, data.J
    if F is not None and (F.J, F.T) != (J, T):
        raise ValueError(f"feature matrix is {F.J}x{F.T}, data is J={J}, T={T}")
    ev = evaluator if evaluator is not None else MarginalEvaluator(data, spec)
    lml_cache: dict[tuple[int, int], float] = cache if cache is not None else {}

    if spec.model_prior == "uniform":
        lo_treat = 0.0
    else:
        lo_treat = math.log(spec.treat_incl) - math.log1p(-spec.treat_incl)
    lo_ctrl, bb_table = _prior_log_odds_controls(theta, F, spec, J)

    delta = [0] * T
    gamma = [0] * J

    def log_ml(dmask: int, gmask: int) -> float:
        key = (dmask, gmask)
        val = lml_cache.get(key)
        if val is None:
            model = ModelIndicator(
                tuple((dmask >> t) & 1 for t in range(T)),
                tuple((gmask >> j) & 1 for j in range(J)),
            )
            try:
                val = ev.log_ml(model)
            except RankDeficientError:
                val = -np.inf
            lml_cache[key] = val
        return val

    dmask = gmask = 0
    cur = log_ml(dmask, gmask)
    gcount = 0
    rng = substream(config.seed, "gibbs")
    visits: dict[tuple[int, int], int] = {}

    for sweep in range(config.iterations):
        u = rng.random(T + J)
        for t in range(T):
            bit = 1 << t
            cand = log_ml(dmask ^ bit, gmask)
            if delta[t]:
                lml1, lml0 = cur, cand
            else:
                lml1, lml0 = cand, cur
            p1 = _sigmoid(lml1 - lml0 + lo_treat)
            new = 1 if u[t] < p1 else 0
            if new != delta[t]:
                delta[t] = new
                dmask ^= bit
                cur = lml1 if new else lml0
        for j in range(J):
            bit = 1 << j
            cand = log_ml(dmask, gmask ^ bit)
            if gamma[j]:
                lml1, lml0 = cur, cand
            else:
                lml1, lml0 = cand, cur
            if bb_table is None:
                lo = lo_ctrl[j]
            else:
                lo = bb_table[gcount - gamma[j]]
            p1 = _sigmoid(lml1 - lml0 + lo)
            new = 1 if u[T + j] < p1 else 0
            if new != gamma[j]:
                gcount += new - gamma[j]
                gamma[j] = new
                gmask ^= bit
                cur = lml1 if new else lml0
        if sweep >= config.burn_in:
            key = (dmask, gmask)
            visits[key] = visits.get(key, 0) + 1

    models = {}
    for (dm, gm), count in visits.items():
        ind = ModelIndicator(
            tuple((dm >> t) & 1 for t in range(T)),
            tuple((gm >> j) & 1 for j in range(J)),
        )
        models[ind] = (count, lml_cache[(dm, gm)])
    return PosteriorSampleSet(
        models=models,
        T=T,
        J=J,
        theta_used=theta,
        total_iterations=config.iterations,
        burn_in=config.burn_in,
        rng_seed=config.seed,
    )


def inclusion_probabilities(samples: PosteriorSampleSet) -> tuple[np.ndarray, np.ndarray]:
    """Visit-weighted marginal inclusion frequencies (treatments, controls)."""
    if not samples.models:
        raise ValueError("empty sample set")
    Delta, Gamma, counts, _ = samples.to_arrays()
    w = counts / counts.sum()
    return w @ Delta, w @ Gamma


def batch_log_prior(
    Delta: np.ndarray,
    Gamma: np.ndarray,
    theta: ThetaVector | None,
    F: FeatureMatrix | None,
    spec: PriorSpec,
) -> np.ndarray:
    """Log prior mass for a stack of models (rows of Delta/Gamma)."""
    M, T = Delta.shape
    J = Gamma.shape[1]
    if spec.model_prior == "uniform":
        return np.full(M, -(T + J) * np.log(2.0))
    lp = Delta @ np.full(T, np.log(spec.treat_incl)) + (1 - Delta) @ np.full(
        T, np.log1p(-spec.treat_incl)
    )
    if J == 0:
        return lp
    if spec.model_prior == "betabinomial":
        k = Gamma.sum(axis=1)
        return lp + betaln(spec.bb_a + k, spec.bb_b + J - k) - betaln(spec.bb_a, spec.bb_b)
    pi = np.atleast_1d(inclusion_probability(theta, F.F, spec.rho_for(J)))
    return lp + Gamma @ np.log(pi) + (1 - Gamma) @ np.log1p(-pi)


def reweight_inclusion(
    samples: PosteriorSampleSet,
    theta_new: ThetaVector,
    F: FeatureMatrix,
    spec: PriorSpec,
) -> tuple[np.ndarray, np.ndarray]:
    """Inclusion probabilities under theta_new, restricted to the sampled models.

    Each stored model is reweighted by exp(log_ml + log prior(theta_new))
    and renormalized over the set; visit counts play no role.
    """
    if not samples.models:
        raise ValueError("empty sample set")
    Delta, Gamma, _, logml = samples.to_arrays()
    logw = logml + batch_log_prior(Delta, Gamma, theta_new, F, spec)
    w = np.exp(logw - logsumexp(logw))
    w /= w.sum()
    return w @ Delta, w @ Gamma


def merge_sample_sets(sets: list[PosteriorSampleSet]) -> PosteriorSampleSet:
    """Union of model sets with added visit counts; order-independent.

    Marginal likelihoods must agree on shared models. The merged set keeps
    theta_used only when all inputs agree on it.
    """
    if not sets:
        raise ValueError("nothing to merge")
    T, J = sets[0].T, sets[0].J
    if any((s.T, s.J) != (T, J) for s in sets):
        raise ValueError("sample sets cover different dimensions")
    models: dict[ModelIndicator, tuple[int, float]] = {}
    for s in sets:
        for key, (count, lml) in s.models.items():
            if key in models:
                old_count, old_lml = models[key]
                if not np.isclose(old_lml, lml, rtol=1e-10, atol=1e-10):
                    raise ValueError(f"conflicting log marginal likelihoods for {key}")
                models[key] = (old_count + count, old_lml)
            else:
                models[key] = (count, lml)

    thetas = [s.theta_used for s in sets]
    theta = thetas[0]
    if any(
        t is None
        or theta is None
        or not (
            t.theta0 == theta.theta0
            and np.array_equal(t.theta, theta.theta)
            and np.array_equal(t.group_map, theta.group_map)
        )
        for t in thetas
    ):
        theta = thetas[0] if len(sets) == 1 else None
    seeds = {s.rng_seed for s in sets}
    return PosteriorSampleSet(
        models=models,
        T=T,
        J=J,
        theta_used=theta,
        total_iterations=sum(s.total_iterations for s in sets),
        burn_in=sum(s.burn_in for s in sets),
        rng_seed=seeds.pop() if len(seeds) == 1 else None,
    )


def save_sample_set(samples: PosteriorSampleSet, path) -> None:
    """Write one model per line: <delta-bits> <gamma-bits> <count> <log_ml>."""
    with open(path, "w") as fh:
        fh.write("# cil sample set v1\n")
        fh.write(
            f"# T={samples.T} J={samples.J} iterations={samples.total_iterations} "
            f"burn_in={samples.burn_in} seed={samples.rng_seed}\n"
        )
        th = samples.theta_used
        if th is not None:
            fh.write(
                "# theta0=%.17g theta=%s groups=%s\n"
                % (
                    th.theta0,
                    ",".join("%.17g" % v for v in th.theta),
                    ",".join(str(int(g)) for g in th.group_map),
                )
            )
        for key in sorted(samples.models):
            count, lml = samples.models[key]
            d, g = key.to_bitstrings()
            fh.write(f"{d} {g} {count} {lml!r}\n")


def load_sample_set(path) -> PosteriorSampleSet:
    meta = {}
    theta = None
    models: dict[ModelIndicator, tuple[int, float]] = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                for tok in line[1:].split():
                    if "=" in tok:
                        k, v = tok.split("=", 1)
                        meta[k] = v
                continue
            dbits, gbits, count, lml = line.split()
            delta = tuple(int(c) for c in dbits) if dbits != "-" else ()
            gamma = tuple(int(c) for c in gbits) if gbits != "-" else ()
            models[ModelIndicator(delta, gamma)] = (int(count), float(lml))
    if "theta0" in meta:
        theta = ThetaVector(
            float(meta["theta0"]),
            np.array([float(v) for v in meta["theta"].split(",")]),
            np.array([int(v) for v in meta["groups"].split(",")]),
        )
    seed = meta.get("seed", "None")
    return PosteriorSampleSet(
        models=models,
        T=int(meta["T"]),
        J=int(meta["J"]),
        theta_used=theta,
        total_iterations=int(meta["iterations"]),
        burn_in=int(meta["burn_in"]),
        rng_seed=None if seed == "None" else int(seed),
    )
