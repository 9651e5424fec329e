"""Multi-fidelity Bayesian transport maps for spatial ensembles."""

from .baselines import IndependentGaussian, fit_independent_gaussian, fit_linear_map
from .errors import (
    DataValidationError,
    DegenerateKernelError,
    MFMapError,
    NumericalError,
    TrainingDivergedError,
)
from .likelihood import grad_log_marginal, location_log_marginal, total_log_marginal
from .model import HyperParams, ModelSettings
from .ordering import ConditioningSets, MaximinOrdering, build_conditioning_sets, conditional_maximin
from .predict import forward_map, log_score, predictive_component, sample_conditional, sample_joint
from .simdata import GeneratorSpec, coarsen_average, coarsen_min, gen_scenario
from .spatial import (
    Ensemble,
    MultiFidelityLocations,
    load_ensemble,
    load_locations,
    nearest_neighbors,
    standardize,
)
from .train import TrainConfig, TrainedMap, build_map, fit

__version__ = "0.1.0"

__all__ = [
    "ConditioningSets",
    "DataValidationError",
    "DegenerateKernelError",
    "Ensemble",
    "GeneratorSpec",
    "HyperParams",
    "IndependentGaussian",
    "MFMapError",
    "MaximinOrdering",
    "ModelSettings",
    "MultiFidelityLocations",
    "NumericalError",
    "TrainConfig",
    "TrainedMap",
    "TrainingDivergedError",
    "build_conditioning_sets",
    "build_map",
    "coarsen_average",
    "coarsen_min",
    "conditional_maximin",
    "fit",
    "fit_independent_gaussian",
    "fit_linear_map",
    "forward_map",
    "gen_scenario",
    "grad_log_marginal",
    "load_ensemble",
    "load_locations",
    "location_log_marginal",
    "log_score",
    "nearest_neighbors",
    "predictive_component",
    "sample_conditional",
    "sample_joint",
    "standardize",
    "total_log_marginal",
]
