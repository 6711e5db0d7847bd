"""One interface over the parametric and boosted nuisance engines."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from ..dataset import Sample
from ..errors import EstimationError, UnsupportedCombinationError, ValidationError
from .gbm import BoostedModel, GBMParams, fit_gbm
from .linear import LinearModel, LogitModel, fit_logit, fit_ols

ENGINES = ("parametric", "ml")
MISSPECIFICATIONS = ("none", "outcome_constant_only", "propensity_constant_only", "outcome_drop_slope")
R2_OUTCOMES = ("pooled", "composite")
P_CLIP = 1e-6


@dataclass(frozen=True)
class NuisanceConfig:
    """How to fit ``g(r, .)`` and ``p(1, .)``.

    ``misspec`` deliberately drops covariates from one of the parametric
    models (for robustness experiments). ``r2_outcome`` chooses the
    equilibrium outcome model: ``"pooled"`` regresses y on x over the whole
    sample, ``"composite"`` combines the two group regressions as
    ``p~ g(1,x) + (1 - p~) g(0,x)`` with its own logit ``p~``.
    """

    engine: str = "parametric"
    misspec: str = "none"
    r2_outcome: str = "pooled"
    gbm: GBMParams = field(default_factory=GBMParams)
    p_clip: float = P_CLIP
    logit_max_iter: int = 100
    logit_tol: float = 1e-8

    def __post_init__(self):
        if self.engine not in ENGINES:
            raise ValidationError(f"unknown engine {self.engine!r}; expected one of {ENGINES}")
        if self.misspec not in MISSPECIFICATIONS:
            raise ValidationError(f"unknown misspecification {self.misspec!r}; expected one of {MISSPECIFICATIONS}")
        if self.r2_outcome not in R2_OUTCOMES:
            raise ValidationError(f"unknown r2_outcome {self.r2_outcome!r}; expected one of {R2_OUTCOMES}")
        if self.engine == "ml" and self.misspec != "none":
            raise UnsupportedCombinationError("misspecification modes apply to the parametric engine only")
        if not 0.0 < self.p_clip < 0.5:
            raise ValidationError("p_clip must lie in (0, 0.5)")


@dataclass(frozen=True)
class CompositeOutcome:
    """``p(x) g1(x) + (1 - p(x)) g0(x)``."""

    model1: object
    model0: object
    propensity: object

    def predict(self, x) -> np.ndarray:
        p = self.propensity.predict(x)
        return p * self.model1.predict(x) + (1.0 - p) * self.model0.predict(x)

    def to_dict(self) -> dict:
        return {
            "kind": "composite",
            "model1": self.model1.to_dict(),
            "model0": self.model0.to_dict(),
            "propensity": self.propensity.to_dict(),
        }


@dataclass(frozen=True)
class FunctionModel:
    """Wrap a known function of ``x`` (e.g. a DGP truth) as a model."""

    fn: object
    name: str = "function"

    def predict(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.asarray(self.fn(x), dtype=float).reshape(-1)

    def to_dict(self) -> dict:
        return {"kind": "function", "name": self.name}


@dataclass(frozen=True)
class NuisancePair:
    outcome_models: Mapping[int, object]
    propensity_model: object
    engine: str = "parametric"
    p_clip: float = P_CLIP

    def predict_outcome(self, r: int, x) -> np.ndarray:
        if r not in self.outcome_models:
            raise ValidationError(f"no outcome model fitted for reference {r}")
        out = self.outcome_models[r].predict(x)
        if not np.all(np.isfinite(out)):
            raise EstimationError(f"non-finite outcome predictions for reference {r}")
        return out

    def predict_propensity(self, x) -> np.ndarray:
        return self.predict_propensity_counted(x)[0]

    def predict_propensity_counted(self, x) -> tuple[np.ndarray, int]:
        """Clipped propensities and the number of values the clip moved."""
        raw = self.propensity_model.predict(x)
        clipped = np.clip(raw, self.p_clip, 1.0 - self.p_clip)
        return clipped, int(np.count_nonzero(clipped != raw))

    def to_dict(self) -> dict:
        return {
            "engine": self.engine,
            "p_clip": self.p_clip,
            "outcome_models": {str(r): m.to_dict() for r, m in sorted(self.outcome_models.items())},
            "propensity_model": self.propensity_model.to_dict(),
        }


def _outcome_columns(misspec: str, k: int):
    if misspec == "outcome_constant_only":
        return ()
    if misspec == "outcome_drop_slope":
        if k < 1:
            raise ValidationError("outcome_drop_slope needs at least one covariate")
        return tuple(range(1, k))
    return None


def _fit_regressor(x, y, cfg: NuisanceConfig, names, columns, seed_offset):
    if cfg.engine == "ml":
        return fit_gbm(x, y, "squared_error", cfg.gbm.with_seed(cfg.gbm.seed + seed_offset))
    return fit_ols(x, y, feature_names=names, columns=columns)


def _fit_classifier(x, d, cfg: NuisanceConfig, names, columns, seed_offset=3):
    if cfg.engine == "ml":
        return fit_gbm(x, d, "log_loss", cfg.gbm.with_seed(cfg.gbm.seed + seed_offset))
    return fit_logit(x, d, cfg.logit_max_iter, cfg.logit_tol, feature_names=names, columns=columns)


def fit_nuisance(
    sample: Sample,
    references: Sequence[int] = (0, 1, 2),
    config: NuisanceConfig | None = None,
) -> NuisancePair:
    """Fit the outcome models for ``references`` and the propensity model.

    ``g(0, .)`` is fitted on group 0, ``g(1, .)`` on group 1, ``g(2, .)`` on
    the pooled sample (or as a composite) and ``g(3, .)`` by the pooled
    regression with a group dummy, whose coefficient is then discarded.
    """
    cfg = config or NuisanceConfig()
    sample.require_both_groups()
    refs = tuple(sorted(set(int(r) for r in references)))
    for r in refs:
        if r not in (0, 1, 2, 3):
            raise ValidationError(f"reference must be in 0..3, got {r}")
    if 3 in refs and cfg.engine != "parametric":
        raise UnsupportedCombinationError("the pooled-with-dummy reference (r=3) is parametric only")

    x, y, d = sample.x, sample.y, sample.d
    names = sample.feature_names
    ocols = _outcome_columns(cfg.misspec, sample.k)
    pcols = () if cfg.misspec == "propensity_constant_only" else None
    g1_mask, g0_mask = d == 1, d == 0

    cache: dict[int, object] = {}

    def group_model(g):
        if g not in cache:
            mask = g1_mask if g == 1 else g0_mask
            cache[g] = _fit_regressor(x[mask], y[mask], cfg, names, ocols, seed_offset=g)
        return cache[g]

    models: dict[int, object] = {}
    for r in refs:
        if r in (0, 1):
            models[r] = group_model(r)
        elif r == 2:
            if cfg.r2_outcome == "composite":
                tilde = _fit_classifier(x, d, cfg, names, None, seed_offset=4)
                models[2] = CompositeOutcome(group_model(1), group_model(0), tilde)
            else:
                models[2] = _fit_regressor(x, y, cfg, names, ocols, seed_offset=2)
        else:
            models[3] = _pooled_with_dummy(x, y, d, names, ocols)

    prop = _fit_classifier(x, d, cfg, names, pcols)
    return NuisancePair(models, prop, cfg.engine, cfg.p_clip)


def _pooled_with_dummy(x, y, d, names, columns) -> LinearModel:
    xs = x if columns is None else x[:, list(columns)]
    used = list(names) if columns is None else [names[j] for j in columns] if names else []
    aug = np.column_stack([xs, d])
    fit = fit_ols(aug, y, feature_names=[*used, "(group)"] if used else ())
    return LinearModel(fit.coef[:-1], fit.feature_names[:-1], None if columns is None else tuple(columns))


def model_from_dict(data: dict):
    """Rebuild a fitted model from its ``to_dict`` form."""
    kind = data.get("kind")
    if kind == "linear":
        return LinearModel.from_dict(data)
    if kind == "logit":
        return LogitModel.from_dict(data)
    if kind == "gbm":
        return BoostedModel.from_dict(data)
    if kind == "composite":
        return CompositeOutcome(
            model_from_dict(data["model1"]), model_from_dict(data["model0"]), model_from_dict(data["propensity"])
        )
    raise ValidationError(f"unknown model kind {kind!r}")
