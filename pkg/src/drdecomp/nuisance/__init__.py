"""Nuisance models: outcome regressions g(r, .) and the propensity p(1, .)."""

from .calibration import CalibrationBin, calibration_table
from .gbm import BoostedModel, GBMParams, Tree, fit_gbm
from .linear import (
    LinearModel,
    LogitModel,
    RidgeFallbackWarning,
    SeparationWarning,
    fit_logit,
    fit_ols,
)
from .pair import (
    ENGINES,
    MISSPECIFICATIONS,
    P_CLIP,
    CompositeOutcome,
    FunctionModel,
    NuisanceConfig,
    NuisancePair,
    fit_nuisance,
    model_from_dict,
)

__all__ = [
    "BoostedModel", "CalibrationBin", "CompositeOutcome", "ENGINES", "FunctionModel", "GBMParams", "LinearModel",
    "LogitModel", "MISSPECIFICATIONS", "NuisanceConfig", "NuisancePair", "P_CLIP", "RidgeFallbackWarning",
    "SeparationWarning", "Tree", "calibration_table", "fit_gbm", "fit_logit", "fit_nuisance", "fit_ols",
    "model_from_dict",
]
