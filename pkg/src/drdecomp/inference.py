"""Score functions, plug-in variances, pairs bootstrap and orthogonality checks.

For the AIPW estimators with row weights ``a`` (see :mod:`drdecomp.estimators`)
the per-row scores are

* r = 0: ``psi = n a (y - g) - n D delta / n1``
* r = 1: ``psi = -n a (y - g) + n (1-D) delta / n0``
* r = 2: ``psi = n a (y - g) - delta``

which average to zero at the matching estimate. ``var = sum(psi^2) / n^2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ._parallel import run_ordered
from .dataset import Sample
from .errors import EstimationError, ExcessiveFailuresError, UnsupportedCombinationError, ValidationError
from .estimators import (
    DecompResult,
    EstimatorSpec,
    Reference,
    _values,
    decompose_grid,
    weights,
)
from .nuisance import P_CLIP, GBMParams, fit_nuisance

MAX_SKIP_SHARE = 0.10
DEFAULT_C_GRID = (-0.2, -0.1, -0.05, 0.0, 0.05, 0.1, 0.2)


@dataclass(frozen=True)
class ScoreVector:
    psi: np.ndarray
    reference: Reference
    normalized: bool
    delta: float = 0.0

    @property
    def n(self) -> int:
        return int(self.psi.shape[0])

    def mean(self) -> float:
        return float(self.psi.mean())


def _score_from_weights(a, resid, d, r, delta):
    n = d.shape[0]
    n1 = d.sum()
    n0 = n - n1
    if r is Reference.DISADVANTAGED:
        return n * a * resid - n * d * delta / n1
    if r is Reference.ADVANTAGED:
        return -n * a * resid + n * (1.0 - d) * delta / n0
    return n * a * resid - delta


def scores(s: Sample, g_hat, p_hat, r, delta_hat: float, normalized: bool = False) -> ScoreVector:
    """Per-row AIPW scores at ``delta_hat`` (pass ``g_hat = 0`` for IPW)."""
    r = Reference.parse(r)
    if r is Reference.POOLED:
        raise UnsupportedCombinationError("scores are not defined for the pooled reference (r=3)")
    s.require_both_groups()
    g = _values(g_hat, s)
    p = _values(p_hat, s)
    w = weights(s.d, p, r, normalized)
    psi = _score_from_weights(w.a, s.y - g, s.d, r, float(delta_hat))
    return ScoreVector(psi, r, normalized, float(delta_hat))


def reg_moment(s: Sample, g_hat, r, theta: float) -> np.ndarray:
    """Per-row moment of the regression estimator (no weighting correction).

    Its mean is zero at ``delta_reg``; it is not orthogonal to ``g``.
    """
    r = Reference.parse(r)
    s.require_both_groups()
    n, n1, n0 = s.n, s.n1, s.n0
    res = s.y - _values(g_hat, s)
    d = s.d
    if r is Reference.DISADVANTAGED:
        return n * d / n1 * (res - theta)
    if r is Reference.ADVANTAGED:
        return -n * (1.0 - d) / n0 * (res + theta)
    if r is Reference.EQUILIBRIUM:
        return (n * d / n1 - n * (1.0 - d) / n0) * res - theta
    raise UnsupportedCombinationError("reg_moment is defined for r in {0, 1, 2}")


def variance_from_scores(sv) -> tuple[float, float]:
    """``(sum(psi^2) / n^2, sqrt of that)``."""
    psi = sv.psi if isinstance(sv, ScoreVector) else np.asarray(sv, dtype=float)
    n = psi.shape[0]
    if n == 0:
        raise ValidationError("empty score vector")
    var = float(psi @ psi) / (n * n)
    return var, math.sqrt(var)


# bootstrap


@dataclass(frozen=True)
class BootstrapResult:
    """Replicates (rows) for each requested spec (columns)."""

    se: np.ndarray
    replicates: np.ndarray
    skipped: int
    B: int
    fixed_nuisance: bool = False

    def to_csv_rows(self, labels: Sequence[str]):
        yield ["replicate", *labels]
        for b, row in enumerate(self.replicates):
            yield [b, *row.tolist()]


def _one_replicate(s, specs, gbm, pair, seed, b):
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(b)]))
    idx = rng.integers(0, s.n, size=s.n)
    sb = s.subset(idx)
    try:
        res = decompose_grid(sb, specs, gbm, nuisance=pair)
    except EstimationError:
        return None
    return np.array([r.delta_hat for r in res])


def bootstrap_grid(
    s: Sample,
    specs: Sequence[EstimatorSpec],
    B: int = 999,
    seed: int = 0,
    gbm: GBMParams | None = None,
    threads: int = 1,
    fixed_nuisance: bool = False,
) -> BootstrapResult:
    """Pairs bootstrap: resample rows with replacement and rerun the pipeline.

    By default every replicate refits the nuisance models, trims and
    estimates. ``fixed_nuisance`` keeps the full-sample models and only
    re-evaluates the estimators; that is faster but ignores first-stage
    noise, so treat its standard errors as approximate. Replicates that fail
    (a single group, a singular design, trimming that empties a group) are
    skipped; more than 10% skipped raises :class:`ExcessiveFailuresError`.
    """
    if B < 2:
        raise ValidationError("B must be at least 2")
    specs = list(specs)
    pair = None
    if fixed_nuisance:
        keys = {(t.engine, t.misspec, t.r2_outcome) for t in specs}
        if len(keys) != 1:
            raise ValidationError("fixed-nuisance bootstrap needs a single engine configuration")
        refs = sorted({int(t.reference) for t in specs})
        pair = fit_nuisance(s, refs, specs[0].nuisance_config(gbm))
    reps = run_ordered(lambda b: _one_replicate(s, specs, gbm, pair, seed, b), range(B), threads)
    good = [r for r in reps if r is not None]
    skipped = B - len(good)
    if skipped > MAX_SKIP_SHARE * B:
        raise ExcessiveFailuresError(f"{skipped} of {B} bootstrap replicates were degenerate")
    if len(good) < 2:
        raise ExcessiveFailuresError("fewer than two usable bootstrap replicates")
    mat = np.vstack(good)
    se = mat.std(axis=0, ddof=1)
    return BootstrapResult(se, mat, skipped, B, fixed_nuisance)


def bootstrap_pairs(s: Sample, spec: EstimatorSpec, B: int = 999, seed: int = 0, **kwargs):
    """Single-spec wrapper returning ``(se, replicates)``."""
    res = bootstrap_grid(s, [spec], B, seed, **kwargs)
    return float(res.se[0]), res.replicates[:, 0]


def attach_bootstrap(results: Sequence[DecompResult], boot: BootstrapResult) -> list[DecompResult]:
    out = []
    for j, res in enumerate(results):
        method = "bootstrap_fixed_nuisance" if boot.fixed_nuisance else "bootstrap"
        out.append(res.with_se(float(boot.se[j]), boot.replicates[:, j], se_method=method,
                               bootstrap_skipped=boot.skipped, score_se=res.se))
    return out


# orthogonality


@dataclass(frozen=True)
class OrthogonalityCurve:
    c: np.ndarray
    mean_score: np.ndarray
    slope: float
    slope_se: float
    moment: str
    perturb: str
    rows: np.ndarray = field(repr=False, default=None)

    @property
    def z(self) -> float:
        return self.slope / self.slope_se if self.slope_se > 0 else math.inf * np.sign(self.slope)

    def pairs(self):
        return list(zip(self.c.tolist(), self.mean_score.tolist()))


def orthogonality_check(
    s: Sample,
    eta_true,
    eta_perturbed,
    r,
    c_grid: Sequence[float] = DEFAULT_C_GRID,
    theta: float | None = None,
    normalized: bool = False,
    perturb: str = "joint",
    moment: str = "aipw",
) -> OrthogonalityCurve:
    """Mean score along ``eta_0 + c (eta - eta_0)`` with ``theta`` held fixed.

    ``eta_true`` and ``eta_perturbed`` expose ``predict_outcome(r, x)`` and
    ``predict_propensity(x)``. ``perturb`` selects which nuisance moves
    (``"outcome"``, ``"propensity"`` or ``"joint"``); ``moment`` is
    ``"aipw"`` or the non-orthogonal ``"reg"`` contrast. ``theta`` defaults
    to the estimate at ``eta_0``. The slope at zero is the symmetric
    difference at the smallest nonzero ``|c|``; its standard error is the
    standard deviation of the per-row differences over ``sqrt(n)``.
    """
    r = Reference.parse(r)
    if r is Reference.POOLED:
        raise UnsupportedCombinationError("orthogonality check is defined for r in {0, 1, 2}")
    if perturb not in ("outcome", "propensity", "joint"):
        raise ValidationError(f"unknown perturbation {perturb!r}")
    if moment not in ("aipw", "reg"):
        raise ValidationError(f"unknown moment {moment!r}")
    grid = np.array(sorted(set(float(c) for c in c_grid) | {0.0}))
    nonzero = np.abs(grid[grid != 0.0])
    if nonzero.size == 0:
        raise ValidationError("c_grid needs a nonzero value")
    h = float(nonzero.min())
    if -h not in grid or h not in grid:
        grid = np.array(sorted(set(grid.tolist()) | {h, -h}))

    g0 = eta_true.predict_outcome(int(r), s.x)
    p0 = eta_true.predict_propensity(s.x)
    g1 = eta_perturbed.predict_outcome(int(r), s.x)
    p1 = eta_perturbed.predict_propensity(s.x)
    move_g = perturb in ("outcome", "joint")
    move_p = perturb in ("propensity", "joint")

    def row_moment(c, th):
        g = g0 + c * (g1 - g0) if move_g else g0
        p = np.clip(p0 + c * (p1 - p0), P_CLIP, 1 - P_CLIP) if move_p else p0
        if moment == "reg":
            return reg_moment(s, g, r, th)
        return _score_from_weights(weights(s.d, p, r, normalized).a, s.y - g, s.d, r, th)

    if theta is None:
        from .estimators import delta_aipw, delta_reg

        theta = delta_reg(s, g0, r) if moment == "reg" else delta_aipw(s, g0, p0, r, normalized)
    rows = np.vstack([row_moment(c, theta) for c in grid])
    means = rows.mean(axis=1)
    diff = (rows[grid == h][0] - rows[grid == -h][0]) / (2.0 * h)
    slope = float(diff.mean())
    slope_se = float(diff.std(ddof=1) / math.sqrt(s.n))
    return OrthogonalityCurve(grid, means, slope, slope_se, moment, perturb, rows)
