import math

import numpy as np
import pytest

from drdecomp import Sample
from drdecomp.crossfit import FoldPlan, crossfit_estimate, crossfit_grid, split
from drdecomp.errors import ExcessiveFailuresError, ValidationError
from drdecomp.estimators import EstimatorSpec, decompose, make_grid
from drdecomp.inference import scores
from drdecomp.nuisance import GBMParams, fit_nuisance

from conftest import random_sample

FAST = GBMParams(n_trees=10, max_depth=2)


class TestSplit:
    def test_partition(self):
        main, aux = split(101, 0.5, 3, 0)
        assert main.size == 50 and aux.size == 51
        assert np.array_equal(np.sort(np.concatenate([main, aux])), np.arange(101))
        assert np.all(np.diff(main) > 0)

    def test_deterministic(self):
        a = split(500, 0.3, 9, 4)
        b = split(500, 0.3, 9, 4)
        assert np.array_equal(a[0], b[0])
        assert not np.array_equal(a[0], split(500, 0.3, 9, 5)[0])
        assert not np.array_equal(a[0], split(500, 0.3, 10, 4)[0])

    def test_uniform_inclusion(self):
        n, K = 200, 2000
        counts = np.zeros(n)
        for k in range(K):
            counts[split(n, 0.5, 1, k)[0]] += 1
        # each row is in the main part with probability 1/2
        z = (counts - K / 2) / math.sqrt(K / 4)
        assert np.max(np.abs(z)) < 4.5
        assert abs(np.mean(z)) < 0.01

    def test_bad_fraction(self):
        with pytest.raises(ValidationError):
            split(10, 0.01, 0, 0)
        with pytest.raises(ValidationError):
            FoldPlan(split_fraction=1.0)
        with pytest.raises(ValidationError):
            FoldPlan(variance_at="pooled")


class TestCrossfit:
    def test_single_rep_matches_manual(self):
        s = random_sample(n=400, seed=41)
        spec = EstimatorSpec(2, "AIPWu")
        res = crossfit_estimate(s, spec, FoldPlan(K=1, seed=7))
        main, aux = split(s.n, 0.5, 7, 0)
        pair = fit_nuisance(s.subset(aux), (2,))
        manual = decompose(s.subset(main), spec, nuisance=pair)
        assert res.delta_hat == pytest.approx(manual.delta_hat, abs=1e-12)
        # fold variance sum(psi^2)/n_k scaled by the full sample size
        assert res.se == pytest.approx(manual.se * math.sqrt(main.size / s.n), rel=1e-10)

    def test_variance_pooling(self):
        s = random_sample(n=300, seed=42)
        spec = EstimatorSpec(0, "AIPWn")
        plan = FoldPlan(K=3, seed=2)
        res = crossfit_estimate(s, spec, plan)
        thetas, sig = [], []
        for k in range(3):
            main, aux = split(s.n, 0.5, 2, k)
            sm = s.subset(main)
            pair = fit_nuisance(s.subset(aux), (0,))
            g, p = pair.predict_outcome(0, sm.x), pair.predict_propensity(sm.x)
            th = decompose(sm, spec, nuisance=pair).delta_hat
            psi = scores(sm, g, p, 0, th, True).psi
            thetas.append(th)
            sig.append(psi @ psi / sm.n)
        assert res.delta_hat == pytest.approx(np.mean(thetas), abs=1e-12)
        assert list(res.per_rep) == pytest.approx(thetas, abs=1e-12)
        assert res.se == pytest.approx(math.sqrt(np.mean(sig) / s.n), rel=1e-10)

    def test_aggregate_variance(self):
        # for r=2 the score slope is constant, so moving to the pooled estimate can only add variance
        s = random_sample(n=300, seed=43)
        spec = EstimatorSpec(2, "AIPWu")
        fold = crossfit_estimate(s, spec, FoldPlan(K=4, variance_at="fold"))
        agg = crossfit_estimate(s, spec, FoldPlan(K=4, variance_at="aggregate"))
        assert agg.delta_hat == fold.delta_hat
        assert agg.se >= fold.se
        one_f = crossfit_estimate(s, spec, FoldPlan(K=1, variance_at="fold"))
        one_a = crossfit_estimate(s, spec, FoldPlan(K=1, variance_at="aggregate"))
        assert one_a.se == pytest.approx(one_f.se, rel=1e-12)

    def test_aggregate_matches_recomputed_scores(self):
        s = random_sample(n=300, seed=44)
        spec = EstimatorSpec(0, "AIPWu")
        res = crossfit_estimate(s, spec, FoldPlan(K=3, seed=1, variance_at="aggregate"))
        sig = []
        for k in range(3):
            main, aux = split(s.n, 0.5, 1, k)
            sm = s.subset(main)
            pair = fit_nuisance(s.subset(aux), (0,))
            psi = scores(sm, pair.predict_outcome(0, sm.x), pair.predict_propensity(sm.x), 0, res.delta_hat).psi
            sig.append(psi @ psi / sm.n)
        assert res.se == pytest.approx(math.sqrt(np.mean(sig) / s.n), rel=1e-10)

    def test_swap_folds(self):
        s = random_sample(n=300, seed=45)
        spec = EstimatorSpec(2, "Reg")
        res = crossfit_estimate(s, spec, FoldPlan(K=1, swap_folds=True))
        main, aux = split(s.n, 0.5, 0, 0)
        a = decompose(s.subset(main), spec, nuisance=fit_nuisance(s.subset(aux), (2,))).delta_hat
        b = decompose(s.subset(aux), spec, nuisance=fit_nuisance(s.subset(main), (2,))).delta_hat
        assert res.delta_hat == pytest.approx((a + b) / 2, abs=1e-12)
        assert res.se is None

    def test_thread_invariance_ml(self):
        s = random_sample(n=300, k=2, seed=46)
        specs = make_grid((0, 2), ("AIPWu", "IPWn"), engine="ml", trim_threshold=0.01)
        a = crossfit_grid(s, specs, FoldPlan(K=4), FAST, threads=1)
        b = crossfit_grid(s, specs, FoldPlan(K=4), FAST, threads=4)
        assert [r.to_dict() for r in a] == [r.to_dict() for r in b]

    def test_diagnostics(self):
        s = random_sample(n=200, seed=47)
        res = crossfit_estimate(s, EstimatorSpec(0, "AIPWu", 0.05), FoldPlan(K=5))
        dg = res.diagnostics
        assert dg["K"] == 5 and dg["K_effective"] + dg["skipped"] == 5
        assert len(res.per_rep) == dg["K_effective"]
        assert res.n == s.n

    def test_excessive_skips(self):
        rng = np.random.default_rng(0)
        d = np.zeros(60)
        d[:2] = 1
        s = Sample(rng.normal(size=60), d, rng.normal(size=(60, 1)))
        with pytest.raises(ExcessiveFailuresError):
            crossfit_estimate(s, EstimatorSpec(2, "Reg"), FoldPlan(K=20))

    def test_some_skips_tolerated(self):
        # six rows in the rare group: a couple of the 100 splits leave one part without it
        rng = np.random.default_rng(3)
        n = 400
        d = np.zeros(n)
        d[:6] = 1
        s = Sample(rng.normal(size=n) + d, d, rng.normal(size=(n, 1)))
        res = crossfit_estimate(s, EstimatorSpec(2, "Reg"), FoldPlan(K=100, seed=0))
        lost = sum(1 for k in range(100) if min(d[i].sum() for i in split(n, 0.5, 0, k)) == 0)
        assert 0 < res.diagnostics["skipped"] <= 10
        assert res.diagnostics["skipped"] >= lost
        assert res.diagnostics["K_effective"] + res.diagnostics["skipped"] == 100
