"""Unexplained-part estimators for a two-group mean difference.

Every weighting estimator is written as ``sum_i a_i * (y_i - g_i)`` with a
row weight vector ``a`` (``g = 0`` for pure IPW). For reference ``r``:

* r = 0: ``a = D/n1 - w0``,  ``w0 ~ (1-D) p / (1-p)``
* r = 1: ``a = w1 - (1-D)/n0``,  ``w1 ~ D (1-p) / p``
* r = 2: ``a = D/n1 - (1-D)/n0 + v0 - v1``,  ``v1 ~ p``, ``v0 ~ 1-p``

Unnormalized weights divide by the group sizes (``w0`` and ``v1`` by n1,
``w1`` and ``v0`` by n0); normalized weights divide by their own sums, so
that each one adds up to one in the sample.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .dataset import Sample
from .errors import (
    DegenerateSampleError,
    TrimmingExhaustedError,
    UnsupportedCombinationError,
    ValidationError,
)
from .nuisance import GBMParams, NuisanceConfig, NuisancePair, fit_logit, fit_nuisance, fit_ols


class Reference(enum.IntEnum):
    DISADVANTAGED = 0
    ADVANTAGED = 1
    EQUILIBRIUM = 2
    POOLED = 3

    @classmethod
    def parse(cls, value) -> "Reference":
        if isinstance(value, cls):
            return value
        if isinstance(value, str):
            v = value.strip()
            if v.isdigit():
                value = int(v)
            else:
                try:
                    return cls[v.upper()]
                except KeyError:
                    raise ValidationError(f"unknown reference {value!r}") from None
        try:
            return cls(int(value))
        except (ValueError, TypeError):
            raise ValidationError(f"reference must be one of 0, 1, 2, 3; got {value!r}") from None

    @property
    def trims(self) -> bool:
        return self in (Reference.DISADVANTAGED, Reference.ADVANTAGED)


class Strategy(str, enum.Enum):
    REG = "Reg"
    IPWU = "IPWu"
    IPWN = "IPWn"
    AIPWU = "AIPWu"
    AIPWN = "AIPWn"

    @classmethod
    def parse(cls, value) -> "Strategy":
        if isinstance(value, cls):
            return value
        for s in cls:
            if s.value.lower() == str(value).strip().lower():
                return s
        raise ValidationError(f"unknown strategy {value!r}; expected one of {[s.value for s in cls]}")

    @property
    def uses_outcome(self) -> bool:
        return self in (Strategy.REG, Strategy.AIPWU, Strategy.AIPWN)

    @property
    def uses_propensity(self) -> bool:
        return self is not Strategy.REG

    @property
    def normalized(self) -> bool:
        return self in (Strategy.IPWN, Strategy.AIPWN)


ALL_REFERENCES = (Reference.DISADVANTAGED, Reference.ADVANTAGED, Reference.EQUILIBRIUM, Reference.POOLED)
ALL_STRATEGIES = tuple(Strategy)


@dataclass(frozen=True)
class EstimatorSpec:
    """Reference outcome, strategy, engine and trimming rule of one estimate.

    ``trim_threshold`` only acts for r in {0, 1}, and for the Reg strategy
    only when ``trim_applies_to_reg`` is set. ``misspec`` and ``r2_outcome``
    are forwarded to :class:`NuisanceConfig`.
    """

    reference: Reference
    strategy: Strategy
    trim_threshold: float = 0.0
    engine: str = "parametric"
    misspec: str = "none"
    r2_outcome: str = "pooled"
    trim_applies_to_reg: bool = False

    def __post_init__(self):
        object.__setattr__(self, "reference", Reference.parse(self.reference))
        object.__setattr__(self, "strategy", Strategy.parse(self.strategy))
        if not 0.0 <= self.trim_threshold < 0.5:
            raise ValidationError("trim_threshold must lie in [0, 0.5)")
        if self.reference is Reference.POOLED:
            if self.strategy is not Strategy.REG:
                raise UnsupportedCombinationError("the pooled reference (r=3) supports the Reg strategy only")
            if self.engine != "parametric":
                raise UnsupportedCombinationError("the pooled reference (r=3) needs the parametric engine")
        # validates engine / misspec / r2_outcome
        NuisanceConfig(engine=self.engine, misspec=self.misspec, r2_outcome=self.r2_outcome)

    @property
    def effective_trim(self) -> float:
        if not self.reference.trims:
            return 0.0
        if self.strategy is Strategy.REG and not self.trim_applies_to_reg:
            return 0.0
        return self.trim_threshold

    @property
    def label(self) -> str:
        return f"{self.strategy.value}_r{int(self.reference)}"

    def nuisance_config(self, gbm: GBMParams | None = None) -> NuisanceConfig:
        return NuisanceConfig(
            engine=self.engine, misspec=self.misspec, r2_outcome=self.r2_outcome, gbm=gbm or GBMParams()
        )


RESULT_FIELDS = (
    "delta_hat", "se", "n", "n0", "n1", "trimmed_count", "reference", "strategy", "engine",
    "per_rep", "explained_hat", "delta_obs",
)


@dataclass(frozen=True)
class DecompResult:
    """One estimate of the unexplained part.

    ``n``, ``n0``, ``n1`` describe the rows the estimator was evaluated on
    (after trimming). ``diagnostics`` carries run metadata (clip counts,
    skipped replicates, how ``se`` was obtained) and is kept out of
    :meth:`to_dict`, which emits exactly the documented result fields.
    """

    delta_hat: float
    se: float | None
    n: int
    n0: int
    n1: int
    trimmed_count: int
    reference: Reference
    strategy: Strategy
    engine: str
    per_rep: tuple[float, ...] = ()
    explained_hat: float | None = None
    delta_obs: float = float("nan")
    diagnostics: Mapping = field(default_factory=dict, compare=False)

    def to_dict(self) -> dict:
        return {
            "delta_hat": self.delta_hat,
            "se": self.se,
            "n": self.n,
            "n0": self.n0,
            "n1": self.n1,
            "trimmed_count": self.trimmed_count,
            "reference": int(self.reference),
            "strategy": self.strategy.value,
            "engine": self.engine,
            "per_rep": list(self.per_rep),
            "explained_hat": self.explained_hat,
            "delta_obs": self.delta_obs,
        }

    def with_se(self, se: float | None, per_rep=(), **diag) -> "DecompResult":
        return replace(self, se=se, per_rep=tuple(float(v) for v in per_rep),
                       diagnostics={**self.diagnostics, **diag})


# basic quantities


def _values(pred, s: Sample) -> np.ndarray:
    """Evaluate a predictor (fitted model, callable or precomputed vector) on ``s``."""
    if hasattr(pred, "predict"):
        out = pred.predict(s.x)
    elif callable(pred):
        out = pred(s.x)
    else:
        out = pred
    out = np.broadcast_to(np.asarray(out, dtype=float), (s.n,)) if np.ndim(out) == 0 else np.asarray(out, float)
    if out.shape != (s.n,):
        raise ValidationError(f"predictions have shape {out.shape}, expected ({s.n},)")
    return out


def _counts(s: Sample):
    s.require_both_groups()
    return s.n1, s.n0


def delta_obs(s: Sample) -> float:
    """Difference in group means, ``mean(y | d=1) - mean(y | d=0)``."""
    n1, n0 = _counts(s)
    return float(s.y[s.d == 1].sum() / n1 - s.y[s.d == 0].sum() / n0)


def trim_mask(p_hat, r, threshold: float) -> np.ndarray:
    """Rows kept: r=0 drops ``p > 1 - threshold``, r=1 drops ``p < threshold``."""
    r = Reference.parse(r)
    p = np.asarray(p_hat, dtype=float)
    if not r.trims:
        raise ValidationError("trimming is defined for r in {0, 1} only")
    if threshold <= 0.0:
        return np.ones(p.shape[0], dtype=bool)
    if r is Reference.DISADVANTAGED:
        return ~(p > 1.0 - threshold)
    return ~(p < threshold)


def trim(s: Sample, p_hat, r, threshold: float) -> tuple[Sample, int]:
    keep = trim_mask(p_hat, r, threshold)
    dropped = int((~keep).sum())
    if dropped == 0:
        return s, 0
    d = s.d[keep]
    if d.size == 0 or d.sum() == 0 or d.sum() == d.size:
        raise TrimmingExhaustedError(
            f"trimming at {threshold} for r={int(Reference.parse(r))} removed {dropped} of {s.n} rows "
            "and emptied a group"
        )
    return s.subset(np.flatnonzero(keep)), dropped


# weights


@dataclass(frozen=True)
class Weights:
    """Row weights of the weighting estimators; ``a`` is the combined vector."""

    a: np.ndarray
    parts: Mapping[str, np.ndarray]


def weights(d, p, r, normalized: bool) -> Weights:
    r = Reference.parse(r)
    d = np.asarray(d, dtype=float)
    p = np.asarray(p, dtype=float)
    n1 = d.sum()
    n0 = d.shape[0] - n1
    if n1 == 0 or n0 == 0:
        raise DegenerateSampleError("both groups must be non-empty")
    if r is Reference.DISADVANTAGED:
        raw = (1.0 - d) * p / (1.0 - p)
        w0 = raw / (raw.sum() if normalized else n1)
        return Weights(d / n1 - w0, {"w0": w0})
    if r is Reference.ADVANTAGED:
        raw = d * (1.0 - p) / p
        w1 = raw / (raw.sum() if normalized else n0)
        return Weights(w1 - (1.0 - d) / n0, {"w1": w1})
    if r is Reference.EQUILIBRIUM:
        v1 = p / (p.sum() if normalized else n1)
        v0 = (1.0 - p) / ((1.0 - p).sum() if normalized else n0)
        return Weights(d / n1 - (1.0 - d) / n0 + v0 - v1, {"v1": v1, "v0": v0})
    raise UnsupportedCombinationError("weighting estimators are not defined for the pooled reference (r=3)")


# estimators


def delta_reg(s: Sample, g_hat, r) -> float:
    """Regression estimator: residual means against ``g_hat = g(r, .)``."""
    r = Reference.parse(r)
    n1, n0 = _counts(s)
    res = s.y - _values(g_hat, s)
    if r is Reference.DISADVANTAGED:
        return float(res[s.d == 1].sum() / n1)
    if r is Reference.ADVANTAGED:
        return float(-res[s.d == 0].sum() / n0)
    return float(res[s.d == 1].sum() / n1 - res[s.d == 0].sum() / n0)


def delta_ipw(s: Sample, p_hat, r, normalized: bool = False) -> float:
    w = weights(s.d, _values(p_hat, s), r, normalized)
    return float(w.a @ s.y)


def delta_aipw(s: Sample, g_hat, p_hat, r, normalized: bool = False) -> float:
    w = weights(s.d, _values(p_hat, s), r, normalized)
    return float(w.a @ (s.y - _values(g_hat, s)))


def explained_reg(s: Sample, g_hat, r=None) -> float:
    """``mean(g | d=1) - mean(g | d=0)`` for the fitted reference outcome."""
    n1, n0 = _counts(s)
    g = _values(g_hat, s)
    return float(g[s.d == 1].sum() / n1 - g[s.d == 0].sum() / n0)


def explained_aipw_r2(s: Sample, g_hat, p_hat) -> float:
    """Doubly robust explained part for the equilibrium reference.

    Mean of ``[(y - g)(p - pi) + g (D - pi)] / (pi (1 - pi))`` with
    ``pi = n1 / n``. Algebraically equal to ``delta_obs - delta_aipw(r=2)``
    with unnormalized weights.
    """
    _counts(s)
    g = _values(g_hat, s)
    p = _values(p_hat, s)
    pi = s.pi
    return float(np.mean(((s.y - g) * (p - pi) + g * (s.d - pi)) / (pi * (1.0 - pi))))


@dataclass(frozen=True)
class LinearExplained:
    dx0: float
    dx1: float
    dx2: float
    dx3: float
    coef: Mapping[str, np.ndarray] = field(default_factory=dict, compare=False)

    def to_dict(self) -> dict:
        return {"dx0": self.dx0, "dx1": self.dx1, "dx2": self.dx2, "dx3": self.dx3}


def linear_explained_parts(s: Sample) -> LinearExplained:
    """Closed-form explained parts under ``y = a + x b + D c + (x D) e + noise``.

    With ``dX = mean(x|1) - mean(x|0)`` and ``p`` a logit fit:
    ``dx0 = dX b``, ``dx1 = dX (b + e)``, ``dx3 = dX (b + pi e)`` and
    ``dx2 = dX b + dP c + dXP e`` where ``dP`` and ``dXP`` are the group
    mean differences of ``p`` and ``x p``.
    """
    _counts(s)
    k = s.k
    x, d = s.x, s.d
    names = [*s.feature_names, "(group)", *[f"{nm}:(group)" for nm in s.feature_names]]
    fit = fit_ols(np.column_stack([x, d, x * d[:, None]]), s.y, feature_names=names)
    b = fit.coef[1:1 + k]
    c = fit.coef[1 + k]
    e = fit.coef[2 + k:]
    p = fit_logit(x, d, feature_names=s.feature_names).predict(x)
    g1, g0 = d == 1, d == 0

    def diff(v):
        return v[g1].mean(axis=0) - v[g0].mean(axis=0)

    dX = diff(x)
    pi = s.pi
    dx0 = float(dX @ b)
    dx1 = float(dX @ (b + e))
    dx3 = float(dX @ (b + pi * e))
    dx2 = float(dX @ b + diff(p) * c + diff(x * p[:, None]) @ e)
    return LinearExplained(dx0, dx1, dx2, dx3, {"beta": b, "gamma": np.array([c]), "delta": e})


# one estimate from precomputed nuisance values


def evaluate(
    s: Sample,
    spec: EstimatorSpec,
    g_hat=None,
    p_hat=None,
    delta_obs_value: float | None = None,
    with_scores: bool = True,
) -> tuple[DecompResult, object]:
    """Trim, estimate and (for AIPW) compute scores on ``s``.

    ``g_hat`` / ``p_hat`` are predictors or vectors aligned with ``s``.
    Returns the result and the :class:`~drdecomp.inference.ScoreVector`
    (``None`` for non-AIPW strategies or when ``with_scores`` is false).
    The score-based se is attached for AIPW strategies.
    """
    from .inference import scores, variance_from_scores

    st, r = spec.strategy, spec.reference
    if st.uses_outcome and g_hat is None:
        raise ValidationError(f"{spec.label} needs an outcome predictor")
    if st.uses_propensity and p_hat is None:
        raise ValidationError(f"{spec.label} needs a propensity predictor")
    dobs = delta_obs(s) if delta_obs_value is None else float(delta_obs_value)
    g = _values(g_hat, s) if g_hat is not None else None
    p = _values(p_hat, s) if p_hat is not None else None

    thr = spec.effective_trim
    dropped = 0
    if thr > 0.0:
        if p is None:
            raise ValidationError("trimming needs a propensity predictor")
        keep = trim_mask(p, r, thr)
        ev, dropped = trim(s, p, r, thr)
        if dropped:
            g = g[keep] if g is not None else None
            p = p[keep]
    else:
        ev = s
        _counts(ev)

    sv = None
    se = None
    explained = None
    if st is Strategy.REG:
        est = delta_reg(ev, g, r)
        explained = explained_reg(ev, g, r)
    elif st in (Strategy.IPWU, Strategy.IPWN):
        est = delta_ipw(ev, p, r, st.normalized)
        explained = dobs - est
    else:
        est = delta_aipw(ev, g, p, r, st.normalized)
        if r is Reference.EQUILIBRIUM and not st.normalized and dropped == 0:
            explained = explained_aipw_r2(ev, g, p)
        else:
            explained = dobs - est
        if with_scores:
            sv = scores(ev, g, p, r, est, st.normalized)
            se = variance_from_scores(sv)[1]
    res = DecompResult(
        delta_hat=float(est), se=se, n=ev.n, n0=ev.n0, n1=ev.n1, trimmed_count=dropped,
        reference=r, strategy=st, engine=spec.engine, explained_hat=float(explained),
        delta_obs=dobs, diagnostics={"se_method": "score" if se is not None else None},
    )
    return res, sv


# full-sample pipeline


def _config_key(spec: EstimatorSpec):
    return (spec.engine, spec.misspec, spec.r2_outcome)


def decompose_grid(
    s: Sample,
    specs: Sequence[EstimatorSpec],
    gbm: GBMParams | None = None,
    nuisance: NuisancePair | None = None,
) -> list[DecompResult]:
    """Fit nuisances once per engine configuration and evaluate every spec.

    The models are fitted and evaluated on the same (full) sample; see
    :mod:`drdecomp.crossfit` for the sample-splitting version.
    """
    if not specs:
        raise ValidationError("no estimators requested")
    s.require_both_groups()
    dobs = delta_obs(s)
    pairs: dict = {}
    out = []
    for spec in specs:
        key = _config_key(spec)
        if nuisance is not None:
            pair = nuisance
        elif key not in pairs:
            refs = sorted({int(t.reference) for t in specs if _config_key(t) == key})
            pairs[key] = fit_nuisance(s, refs, spec.nuisance_config(gbm))
            pair = pairs[key]
        else:
            pair = pairs[key]
        r = int(spec.reference)
        g = pair.predict_outcome(r, s.x) if spec.strategy.uses_outcome else None
        p, clipped = pair.predict_propensity_counted(s.x) if (
            spec.strategy.uses_propensity or spec.effective_trim > 0
        ) else (None, 0)
        res, _ = evaluate(s, spec, g, p, dobs)
        out.append(replace(res, diagnostics={**res.diagnostics, "clipped": clipped}))
    return out


def decompose(s: Sample, spec: EstimatorSpec, gbm: GBMParams | None = None,
              nuisance: NuisancePair | None = None) -> DecompResult:
    return decompose_grid(s, [spec], gbm, nuisance)[0]


def make_grid(
    references: Sequence = (0, 1, 2, 3),
    strategies: Sequence = ALL_STRATEGIES,
    trim_threshold: float = 0.0,
    engine: str = "parametric",
    skip_unsupported: bool = True,
    **kwargs,
) -> list[EstimatorSpec]:
    """Cartesian grid of specs, strategy-major within each reference."""
    out = []
    for r in references:
        for st in strategies:
            try:
                out.append(EstimatorSpec(r, st, trim_threshold, engine, **kwargs))
            except UnsupportedCombinationError:
                if not skip_unsupported:
                    raise
    if not out:
        raise ValidationError("no supported (reference, strategy) combination requested")
    return out
