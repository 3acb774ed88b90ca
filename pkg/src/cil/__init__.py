"""Treatment effect inference under many potential confounders.

Bayesian model averaging over treatment/control inclusion where each
control's prior inclusion probability is driven by learned treatment
association features, plus reference estimators and a simulation harness.
"""

from ._version import __version__
from .baselines import dml_double_selection, oracle_ols, outcome_lasso
from .data import (
    DataError,
    Dataset,
    ModelIndicator,
    PriorSpec,
    ThetaVector,
    standardize_controls,
    validate_dataset,
)
from .features import extract_features, lasso_fit, lasso_path_bic, ridge_min_norm
from .inference import (
    TreatmentInference,
    bma_estimate,
    estimate_conditional_treatment_mean,
    treatment_deviation,
)
from .learn import (
    ThetaFitConfig,
    ThetaFitResult,
    eb_gradient,
    eb_objective,
    ep_gradient,
    ep_objective,
    fit_theta,
    fit_theta_ep,
)
from .marglik import (
    MarginalEvaluator,
    MarginalResult,
    RankDeficientError,
    enumerate_posterior,
    enumeration_inclusion_probabilities,
    gaussian_marginal_loglik,
)
from .optimize import BfgsConfig, bfgs_maximize
from .priors import (
    FeatureMatrix,
    inclusion_probability,
    inclusion_probability_gradient,
    model_log_prior,
    pmom_log_density,
)
from .sampler import (
    PosteriorSampleSet,
    SearchConfig,
    inclusion_probabilities,
    load_sample_set,
    merge_sample_sets,
    reweight_inclusion,
    sample_models,
    save_sample_set,
)
from .simulate import (
    ExperimentReport,
    HarnessOptions,
    SimDesign,
    augment_artificial_controls,
    generate_multi_treatment,
    generate_single_treatment,
    run_experiment,
    scenario,
)
from .workflow import FitConfig, FitResult, run_fit
