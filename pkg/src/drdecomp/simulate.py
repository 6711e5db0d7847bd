"""Monte Carlo harness: bias, RMSE and coverage against the quadrature oracle."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from ._parallel import run_ordered
from .crossfit import FoldPlan, crossfit_grid
from .dataset import DgpConfig, generate_dgp, oracle_truth
from .errors import EstimationError, ExcessiveFailuresError, ValidationError
from .estimators import EstimatorSpec, Reference, decompose_grid, trim_mask
from .nuisance import MISSPECIFICATIONS, FunctionModel, GBMParams, NuisancePair, fit_nuisance

MAX_SKIP_SHARE = 0.10
Z95 = 1.959963984540054


def rep_seed(master_seed: int, rep: int) -> int:
    return int(np.random.SeedSequence([int(master_seed), int(rep)]).generate_state(1, dtype=np.uint64)[0])


def true_nuisance(cfg: DgpConfig) -> NuisancePair:
    """The DGP's own ``g(r, .)`` and ``p(1, .)`` as a :class:`NuisancePair`.

    ``g(3, .)`` is ``pi g(1, .) + (1 - pi) g(0, .)`` with the population share.
    """
    pi = oracle_truth(cfg, 20_001).pi
    col = lambda x: np.asarray(x, dtype=float).reshape(x.shape[0], -1)[:, 0]  # noqa: E731
    models = {
        0: FunctionModel(lambda x: cfg.g(0, col(x)), "g0"),
        1: FunctionModel(lambda x: cfg.g(1, col(x)), "g1"),
        2: FunctionModel(lambda x: cfg.g2(col(x)), "g2"),
        3: FunctionModel(lambda x: pi * cfg.g(1, col(x)) + (1 - pi) * cfg.g(0, col(x)), "g3"),
    }
    return NuisancePair(models, FunctionModel(lambda x: cfg.propensity(col(x)), "p"), "truth")


@dataclass(frozen=True)
class ExperimentSpec:
    """Repeated draws of ``dgp`` (with ``dgp.n`` rows each).

    ``misspecification`` overrides the ``misspec`` field of every parametric
    spec in the grid. With ``crossfit`` set, estimates come from
    :func:`~drdecomp.crossfit.crossfit_grid`; otherwise the nuisances are
    fitted and evaluated on the full draw.
    """

    dgp: DgpConfig
    n_reps: int
    estimator_grid: tuple[EstimatorSpec, ...]
    misspecification: str = "none"
    crossfit: FoldPlan | None = None
    master_seed: int = 0
    gbm: GBMParams = field(default_factory=GBMParams)

    def __post_init__(self):
        if int(self.n_reps) != self.n_reps or self.n_reps < 2:
            raise ValidationError("n_reps must be an integer >= 2")
        if not self.estimator_grid:
            raise ValidationError("estimator_grid is empty")
        if self.misspecification not in MISSPECIFICATIONS:
            raise ValidationError(f"unknown misspecification {self.misspecification!r}")
        object.__setattr__(self, "estimator_grid", tuple(self.estimator_grid))

    def specs(self) -> list[EstimatorSpec]:
        if self.misspecification == "none":
            return list(self.estimator_grid)
        return [replace(t, misspec=self.misspecification) if t.engine == "parametric" else t
                for t in self.estimator_grid]


@dataclass(frozen=True)
class EstimatorSummary:
    label: str
    reference: int
    strategy: str
    truth: float
    mean: float
    bias: float
    mc_se: float
    rmse: float
    coverage: float | None
    mean_se: float | None
    mean_trimmed: float
    n_ok: int

    @property
    def bias_z(self) -> float:
        return self.bias / self.mc_se if self.mc_se > 0 else math.inf * np.sign(self.bias)

    def to_dict(self) -> dict:
        return {
            "label": self.label, "reference": self.reference, "strategy": self.strategy,
            "truth": self.truth, "mean": self.mean, "bias": self.bias, "mc_se": self.mc_se,
            "rmse": self.rmse, "coverage": self.coverage, "mean_se": self.mean_se,
            "mean_trimmed": self.mean_trimmed, "n_ok": self.n_ok,
        }


CSV_COLUMNS = ("label", "reference", "strategy", "truth", "mean", "bias", "mc_se", "rmse", "coverage",
               "mean_se", "mean_trimmed", "n_ok")


@dataclass(frozen=True)
class ExperimentReport:
    summaries: tuple[EstimatorSummary, ...]
    n_reps: int
    skipped: int
    estimates: np.ndarray = field(repr=False)
    ses: np.ndarray = field(repr=False)

    def __getitem__(self, label: str) -> EstimatorSummary:
        for s in self.summaries:
            if s.label == label:
                return s
        raise KeyError(label)

    def to_dict(self) -> dict:
        return {"n_reps": self.n_reps, "skipped": self.skipped,
                "estimators": [s.to_dict() for s in self.summaries]}

    def csv_rows(self):
        yield list(CSV_COLUMNS)
        for s in self.summaries:
            d = s.to_dict()
            yield [d[c] for c in CSV_COLUMNS]


def _labels(specs):
    labels, seen = [], {}
    for t in specs:
        base = t.label if t.engine == "parametric" else f"{t.label}_{t.engine}"
        seen[base] = seen.get(base, 0) + 1
        labels.append(base if seen[base] == 1 else f"{base}#{seen[base]}")
    return labels


def _run_one(spec: ExperimentSpec, specs, rep: int):
    seed = rep_seed(spec.master_seed, rep)
    try:
        sample, _ = generate_dgp(spec.dgp.with_seed(seed), with_truth=False)
        if spec.crossfit is not None:
            res = crossfit_grid(sample, specs, replace(spec.crossfit, seed=seed), spec.gbm)
        else:
            res = decompose_grid(sample, specs, spec.gbm)
    except EstimationError:
        return None
    est = np.array([r.delta_hat for r in res])
    se = np.array([np.nan if r.se is None else r.se for r in res])
    trimmed = np.array([r.trimmed_count for r in res], dtype=float)
    return est, se, trimmed


def run_experiment(spec: ExperimentSpec, threads: int = 1, truth=None) -> ExperimentReport:
    """Run ``n_reps`` independent draws and summarise each estimator.

    Replication ``b`` uses the seed derived from ``(master_seed, b)``, so the
    report does not depend on ``threads``. Coverage counts
    ``|theta - truth| <= 1.96 se`` and is reported only for estimators with
    a standard error.
    """
    specs = spec.specs()
    truth = truth or oracle_truth(spec.dgp)
    outs = run_ordered(lambda b: _run_one(spec, specs, b), range(spec.n_reps), threads)
    good = [o for o in outs if o is not None]
    skipped = spec.n_reps - len(good)
    if skipped > MAX_SKIP_SHARE * spec.n_reps or len(good) < 2:
        raise ExcessiveFailuresError(f"{skipped} of {spec.n_reps} replications failed")
    est = np.vstack([o[0] for o in good])
    ses = np.vstack([o[1] for o in good])
    trim = np.vstack([o[2] for o in good])
    summaries = []
    for j, (t, label) in enumerate(zip(specs, _labels(specs))):
        th = truth.delta[int(t.reference)]
        e = est[:, j]
        m = len(e)
        bias = float(e.mean() - th)
        mc_se = float(e.std(ddof=1) / math.sqrt(m))
        rmse = float(math.sqrt(np.mean((e - th) ** 2)))
        s = ses[:, j]
        if np.all(np.isfinite(s)):
            coverage = float(np.mean(np.abs(e - th) <= Z95 * s))
            mean_se = float(s.mean())
        else:
            coverage = mean_se = None
        summaries.append(EstimatorSummary(label, int(t.reference), t.strategy.value, float(th), float(e.mean()),
                                          bias, mc_se, rmse, coverage, mean_se, float(trim[:, j].mean()), m))
    return ExperimentReport(tuple(summaries), spec.n_reps, skipped, est, ses)


# common support sweep


@dataclass(frozen=True)
class OverlapRow:
    logit_b: float
    threshold: float
    trimmed_fraction_r0: float
    trimmed_fraction_r1: float
    population_trimmed_r0: float
    population_trimmed_r1: float
    estimates: dict

    def to_dict(self) -> dict:
        return {
            "logit_b": self.logit_b, "threshold": self.threshold,
            "trimmed_fraction_r0": self.trimmed_fraction_r0, "trimmed_fraction_r1": self.trimmed_fraction_r1,
            "population_trimmed_r0": self.population_trimmed_r0,
            "population_trimmed_r1": self.population_trimmed_r1,
            "estimates": dict(self.estimates),
        }


def _population_trim(cfg: DgpConfig, r: int, t: float, points: int = 20_001) -> float:
    xs = np.linspace(cfg.x_low, cfg.x_high, points)
    return float(np.mean(~trim_mask(cfg.propensity(xs), r, t)))


def support_overlap_study(
    base: DgpConfig,
    logit_b_grid: Sequence[float],
    specs: Sequence[EstimatorSpec],
    n_reps: int = 20,
    thresholds: Sequence[float] = (0.01, 0.05),
    master_seed: int = 0,
    centered: bool = True,
    threads: int = 1,
) -> list[OverlapRow]:
    """Sweep the propensity steepness and record trimming and estimates.

    With ``centered`` the intercept is reset to ``-logit_b * midpoint`` so
    that ``p = 0.5`` at the middle of the covariate range for every
    steepness (the Figure-1 design has this property). For each steepness
    and threshold the row holds the mean share of trimmed rows for r=0 and
    r=1 (from the fitted propensity), the same share under the true
    propensity, and the mean estimate of each spec at that threshold.
    """
    if not logit_b_grid:
        raise ValidationError("logit_b_grid is empty")
    specs = list(specs)
    keys = {(t.engine, t.misspec, t.r2_outcome) for t in specs}
    if len(keys) != 1:
        raise ValidationError("support_overlap_study needs a single engine configuration")
    labels = _labels(specs)
    refs = sorted({int(t.reference) for t in specs})
    mid = 0.5 * (base.x_low + base.x_high)
    rows = []
    for b in logit_b_grid:
        cfg = replace(base, logit_b=float(b), logit_a=-float(b) * mid if centered else base.logit_a)

        def one(rep):
            sample, _ = generate_dgp(cfg.with_seed(rep_seed(master_seed, rep)), with_truth=False)
            try:
                pair = fit_nuisance(sample, refs, specs[0].nuisance_config())
            except EstimationError:
                return None
            p = pair.predict_propensity(sample.x)
            out = {}
            for t in thresholds:
                tf = (float(np.mean(~trim_mask(p, 0, t))), float(np.mean(~trim_mask(p, 1, t))))
                try:
                    res = decompose_grid(sample, [replace(s, trim_threshold=t) for s in specs], nuisance=pair)
                    est = [r.delta_hat for r in res]
                except EstimationError:
                    est = [float("nan")] * len(specs)
                out[t] = (tf, est)
            return out

        outs = [o for o in run_ordered(one, range(n_reps), threads) if o is not None]
        if len(outs) < max(1, (1 - MAX_SKIP_SHARE) * n_reps):
            raise ExcessiveFailuresError(f"logit_b={b}: too many failed replications")
        for t in thresholds:
            tf = np.array([o[t][0] for o in outs])
            est = np.array([o[t][1] for o in outs])
            rows.append(OverlapRow(
                float(b), float(t), float(tf[:, 0].mean()), float(tf[:, 1].mean()),
                _population_trim(cfg, 0, t), _population_trim(cfg, 1, t),
                {lab: float(np.nanmean(est[:, j])) if np.any(np.isfinite(est[:, j])) else None
                 for j, lab in enumerate(labels)},
            ))
    return rows


# plot data


def figure1_curves(
    cfg: DgpConfig,
    x_grid=None,
    trim_threshold: float | None = None,
    long: bool = False,
) -> list[dict]:
    """Reference-outcome curves ``g0, g1, g2`` and the propensity on a grid.

    ``x_grid`` may be an iterable of points or an integer number of evenly
    spaced points on the covariate range (default 101). With
    ``trim_threshold`` a ``g_trim`` column is added: ``g0`` where
    ``p <= 1 - threshold`` and ``g1`` beyond that cut, which is the reference
    outcome implied by trimming for r=0. ``long`` returns one
    ``{x, curve, value}`` row per point and curve.
    """
    if x_grid is None:
        x_grid = 101
    if np.ndim(x_grid) == 0:
        m = int(x_grid)
        if m < 2:
            raise ValidationError("grid needs at least 2 points")
        xs = np.linspace(cfg.x_low, cfg.x_high, m)
    else:
        xs = np.asarray(list(x_grid), dtype=float)
    if np.any(xs < cfg.x_low) or np.any(xs > cfg.x_high):
        raise ValidationError("x_grid must lie within the covariate support")
    p = cfg.propensity(xs)
    cols = {"g0": cfg.g(0, xs), "g1": cfg.g(1, xs), "g2": cfg.g2(xs), "p": p}
    if trim_threshold is not None:
        keep = trim_mask(p, Reference.DISADVANTAGED, float(trim_threshold))
        cols["g_trim"] = np.where(keep, cols["g0"], cols["g1"])
    if long:
        return [{"x": float(x), "curve": name, "value": float(v[i])}
                for i, x in enumerate(xs) for name, v in cols.items()]
    return [{"x": float(x), **{name: float(v[i]) for name, v in cols.items()}} for i, x in enumerate(xs)]
