"""Repeated sample splitting with nuisances fitted on the auxiliary part.

For each repetition ``k`` a random main subsample ``I_k`` of size
``floor(fraction n)`` is drawn; the nuisances are fitted on its complement
and the estimator and its scores are evaluated on ``I_k`` (after trimming
for r in {0, 1}, with fold-local group counts). The point estimate is the
mean of the ``theta_k``; the variance pools the fold scores,
``sigma^2 = mean_k( sum_{I_k} psi^2 / n_k )``, and ``se = sigma / sqrt(n)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ._parallel import run_ordered
from .dataset import Sample
from .errors import EstimationError, ExcessiveFailuresError, ValidationError
from .estimators import DecompResult, EstimatorSpec, Reference, Strategy, delta_obs, evaluate
from .nuisance import GBMParams, fit_nuisance

MAX_SKIP_SHARE = 0.10
VARIANCE_AT = ("fold", "aggregate")


@dataclass(frozen=True)
class FoldPlan:
    """``K`` repetitions of a ``split_fraction`` main / auxiliary split.

    ``swap_folds`` also evaluates on the auxiliary part with models fitted on
    the main part and averages the two. ``variance_at`` chooses whether fold
    scores enter the variance at ``theta_k`` (``"fold"``) or at the
    aggregated estimate (``"aggregate"``).
    """

    K: int = 100
    split_fraction: float = 0.5
    seed: int = 0
    swap_folds: bool = False
    variance_at: str = "fold"

    def __post_init__(self):
        if int(self.K) != self.K or self.K < 1:
            raise ValidationError("K must be a positive integer")
        if not 0.0 < self.split_fraction < 1.0:
            raise ValidationError("split_fraction must lie in (0, 1)")
        if int(self.seed) != self.seed or not 0 <= self.seed < 2**64:
            raise ValidationError("seed must be an unsigned 64-bit integer")
        if self.variance_at not in VARIANCE_AT:
            raise ValidationError(f"variance_at must be one of {VARIANCE_AT}")


def split(n: int, fraction: float, seed: int, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Sorted ``(main, aux)`` index sets; deterministic in ``(seed, k)``."""
    if not 0.0 < fraction < 1.0:
        raise ValidationError("fraction must lie in (0, 1)")
    m = int(math.floor(fraction * n))
    if m == 0 or m == n:
        raise ValidationError(f"fraction {fraction} of n={n} leaves an empty fold")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(k)]))
    perm = rng.permutation(n)
    return np.sort(perm[:m]), np.sort(perm[m:])


def _score_slope(spec: EstimatorSpec, ev_d: np.ndarray) -> np.ndarray:
    # d psi / d theta for each row, negated: psi(theta) = psi(theta_k) - (theta - theta_k) c
    n = ev_d.shape[0]
    r = spec.reference
    if r is Reference.DISADVANTAGED:
        return n * ev_d / ev_d.sum()
    if r is Reference.ADVANTAGED:
        return -n * (1.0 - ev_d) / (n - ev_d.sum())
    return np.ones(n)


@dataclass(frozen=True)
class _FoldEval:
    theta: float
    explained: float
    trimmed: int
    n_eval: int
    ss: float | None  # sum psi^2 at theta
    sc: float | None  # sum psi * c
    cc: float | None  # sum c^2


def _eval_half(s_eval: Sample, pair, spec: EstimatorSpec) -> _FoldEval:
    r = int(spec.reference)
    g = pair.predict_outcome(r, s_eval.x) if spec.strategy.uses_outcome else None
    p = pair.predict_propensity(s_eval.x) if (spec.strategy.uses_propensity or spec.effective_trim > 0) else None
    res, sv = evaluate(s_eval, spec, g, p)
    ss = sc = cc = None
    if sv is not None:
        if spec.effective_trim > 0:
            from .estimators import trim_mask

            d_ev = s_eval.d[trim_mask(p, spec.reference, spec.effective_trim)]
        else:
            d_ev = s_eval.d
        c = _score_slope(spec, d_ev)
        ss, sc, cc = float(sv.psi @ sv.psi), float(sv.psi @ c), float(c @ c)
    return _FoldEval(res.delta_hat, res.explained_hat, res.trimmed_count, res.n, ss, sc, cc)


def _one_rep(s: Sample, specs, plan: FoldPlan, gbm: GBMParams, k: int):
    main, aux = split(s.n, plan.split_fraction, plan.seed, k)
    seed_k = int(np.random.SeedSequence([int(plan.seed), int(k), 1]).generate_state(1)[0])
    gbm_k = gbm.with_seed(seed_k)
    halves = [(main, aux)] + ([(aux, main)] if plan.swap_folds else [])
    out: list = [[] for _ in specs]
    for ev_idx, fit_idx in halves:
        s_fit = s.subset(fit_idx)
        s_ev = s.subset(ev_idx)
        pairs = {}
        for j, spec in enumerate(specs):
            key = (spec.engine, spec.misspec, spec.r2_outcome)
            try:
                if key not in pairs:
                    refs = sorted({int(t.reference) for t in specs if (t.engine, t.misspec, t.r2_outcome) == key})
                    pairs[key] = fit_nuisance(s_fit, refs, spec.nuisance_config(gbm_k))
                out[j].append(_eval_half(s_ev, pairs[key], spec))
            except EstimationError:
                out[j].append(None)
    # a repetition counts for a spec only when every evaluated half succeeded
    return [None if any(h is None for h in halves_j) else halves_j for halves_j in out]


def crossfit_grid(
    s: Sample,
    specs: Sequence[EstimatorSpec],
    plan: FoldPlan | None = None,
    gbm: GBMParams | None = None,
    threads: int = 1,
) -> list[DecompResult]:
    """Cross-fitted estimates for every spec, sharing the splits.

    Standard errors are reported for the AIPW strategies only. A repetition
    whose fold lacks a group (or otherwise fails to estimate) is skipped for
    the affected specs; more than 10% skipped raises.
    """
    plan = plan or FoldPlan()
    gbm = gbm or GBMParams()
    specs = list(specs)
    if not specs:
        raise ValidationError("no estimators requested")
    s.require_both_groups()
    dobs = delta_obs(s)
    reps = run_ordered(lambda k: _one_rep(s, specs, plan, gbm, k), range(plan.K), threads)

    results = []
    for j, spec in enumerate(specs):
        folds = [rep[j] for rep in reps if rep[j] is not None]
        skipped = plan.K - len(folds)
        if skipped > MAX_SKIP_SHARE * plan.K or not folds:
            raise ExcessiveFailuresError(
                f"{spec.label}: {skipped} of {plan.K} cross-fitting repetitions failed"
            )
        theta_k = np.array([np.mean([h.theta for h in f]) for f in folds])
        theta = float(theta_k.mean())
        explained = float(np.mean([np.mean([h.explained for h in f]) for f in folds]))
        trimmed = [np.mean([h.trimmed for h in f]) for f in folds]
        se = None
        if spec.strategy in (Strategy.AIPWU, Strategy.AIPWN):
            sig2 = []
            for f in folds:
                tot, m = 0.0, 0
                for h in f:
                    shift = (theta - h.theta) if plan.variance_at == "aggregate" else 0.0
                    tot += h.ss - 2.0 * shift * h.sc + shift * shift * h.cc
                    m += h.n_eval
                sig2.append(tot / m)
            se = math.sqrt(float(np.mean(sig2)) / s.n)
        results.append(
            DecompResult(
                delta_hat=theta, se=se, n=s.n, n0=s.n0, n1=s.n1,
                trimmed_count=int(round(float(np.mean(trimmed)))),
                reference=spec.reference, strategy=spec.strategy, engine=spec.engine,
                per_rep=tuple(float(v) for v in theta_k), explained_hat=explained, delta_obs=dobs,
                diagnostics={
                    "se_method": "crossfit_score" if se is not None else None,
                    "K": plan.K, "K_effective": len(folds), "skipped": skipped,
                    "trimmed_mean": float(np.mean(trimmed)),
                    "split_fraction": plan.split_fraction, "variance_at": plan.variance_at,
                },
            )
        )
    return results


def crossfit_estimate(s: Sample, spec: EstimatorSpec, plan: FoldPlan | None = None,
                      ml_params: GBMParams | None = None, threads: int = 1) -> DecompResult:
    return crossfit_grid(s, [spec], plan, ml_params, threads)[0]
