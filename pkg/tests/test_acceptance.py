"""Acceptance criteria 1 to 9, each reported as one PASS/FAIL line.

The lines are printed as the tests run and repeated in the pytest terminal
summary. Criterion 6 is marked slow; criterion 8 needs user-supplied data
(see ``_find_data``) and skips when it is absent.
"""

import csv
import itertools
import math
import os
from pathlib import Path

import numpy as np
import pytest

from drdecomp import DgpConfig, Sample, generate_dgp, oracle_truth
from drdecomp.cli import main as cli_main
from drdecomp.crossfit import FoldPlan, crossfit_grid
from drdecomp.estimators import (
    EstimatorSpec,
    Strategy,
    decompose_grid,
    delta_aipw,
    delta_ipw,
    delta_obs,
    delta_reg,
    explained_reg,
    linear_explained_parts,
    make_grid,
    weights,
)
from drdecomp.inference import attach_bootstrap, bootstrap_grid, orthogonality_check, scores
from drdecomp.nuisance import FunctionModel, GBMParams, NuisanceConfig, NuisancePair, fit_gbm, fit_nuisance
from drdecomp.simulate import ExperimentSpec, run_experiment, true_nuisance

from conftest import random_sample, record_criterion


# 1. hand oracle


def test_criterion_1_hand_oracle(hand_sample):
    s = hand_sample
    pair = fit_nuisance(s, (0,))
    g0 = pair.predict_outcome(0, s.x)
    half = np.full(s.n, 0.5)
    got = {
        "delta_obs": delta_obs(s),
        "delta_reg_r0": delta_reg(s, g0, 0),
        "delta_ipw_r2": delta_ipw(s, half, 2),
        "delta_aipw_r0": delta_aipw(s, g0, pair.predict_propensity(s.x), 0),
        "explained_reg_r0": explained_reg(s, g0),
    }
    want = {"delta_obs": 1.0, "delta_reg_r0": 1.0, "delta_ipw_r2": 1.0, "delta_aipw_r0": 1.0,
            "explained_reg_r0": 0.0}
    err = max(abs(got[k] - want[k]) for k in want)
    ok = err <= 1e-12
    record_criterion(1, "hand-oracle exactness", ok, f"max abs error {err:.2e} (tol 1e-12)")
    assert ok, got


# 2. algebraic identities


def test_criterion_2_identities():
    s = random_sample(n=10_000, k=3, seed=2024)
    pair = fit_nuisance(s, (0, 1, 2, 3))
    p = pair.predict_propensity(s.x)

    wsum = max(abs(part.sum() - 1.0) for r in (0, 1, 2) for part in weights(s.d, p, r, True).parts.values())

    smean = 0.0
    for r, norm in itertools.product((0, 1, 2), (False, True)):
        g = pair.predict_outcome(r, s.x)
        est = delta_aipw(s, g, p, r, norm)
        smean = max(smean, abs(scores(s, g, p, r, est, norm).mean()))

    addup = 0.0
    for r in (0, 1, 2, 3):
        g = pair.predict_outcome(r, s.x)
        dobs = delta_obs(s)
        addup = max(addup, abs(explained_reg(s, g) + delta_reg(s, g, r) - dobs) / abs(dobs))

    res = {t.strategy: t.delta_hat for t in decompose_grid(s, make_grid((2,), (Strategy.IPWU, Strategy.IPWN,
                                                                               Strategy.AIPWU, Strategy.AIPWN)))}
    collapse = max(res.values()) - min(res.values())

    ok = wsum <= 1e-12 and smean <= 1e-10 and addup <= 1e-10 and collapse <= 1e-8
    record_criterion(2, "algebraic identities", ok,
                     f"weight sums {wsum:.1e} (1e-12), score means {smean:.1e} (1e-10), "
                     f"adding-up {addup:.1e} rel (1e-10), r=2 collapse {collapse:.1e} (1e-8)")
    assert ok


# 3. oracle consistency


def test_criterion_3_oracle_consistency():
    cfg = DgpConfig.figure1(n=10_000)
    truth = oracle_truth(cfg)
    specs = [EstimatorSpec(r, st) for r in (0, 1, 2) for st in ("AIPWu", "AIPWn")]
    hits = {t.label: 0 for t in specs}
    for seed in range(1, 21):
        s, _ = generate_dgp(cfg.with_seed(seed), with_truth=False)
        for t, res in zip(specs, decompose_grid(s, specs)):
            hits[t.label] += abs(res.delta_hat - truth.delta[int(t.reference)]) <= 3 * res.se
    ok = min(hits.values()) >= 18
    record_criterion(3, "oracle consistency (20 seeds, n=1e4)", ok,
                     ", ".join(f"{k} {v}/20" for k, v in hits.items()) + " (need >= 18)")
    assert ok, hits


# 4. double robustness


def _dr_grid(misspec):
    # r=2 uses the group regressions p g1 + (1 - p) g0, the outcome model that is correct
    # when g1 and g0 are; a pooled linear fit of y on x is not
    aipw = [EstimatorSpec(r, st, r2_outcome="composite" if r == 2 else "pooled")
            for r in (0, 1, 2) for st in ("AIPWu", "AIPWn")]
    single = "Reg" if misspec == "outcome_constant_only" else "IPWu"
    contrast = [EstimatorSpec(r, single) for r in (0, 1, 2)]
    if single == "IPWu":
        contrast += [EstimatorSpec(r, "IPWn") for r in (0, 1, 2)]
    return aipw, contrast


@pytest.mark.parametrize("misspec", ["outcome_constant_only", "propensity_constant_only"])
def test_criterion_4_double_robustness(misspec):
    cfg = DgpConfig.figure1(n=5000)
    aipw, contrast = _dr_grid(misspec)
    rep = run_experiment(ExperimentSpec(cfg, 200, tuple(aipw + contrast), misspec, master_seed=4))
    z = [sm.bias_z for sm in rep.summaries]
    za, zc = z[:len(aipw)], z[len(aipw):]
    ok = max(abs(v) for v in za) < 3 and min(abs(v) for v in zc) > 5
    lab = [sm.label for sm in rep.summaries]
    record_criterion(4, f"double robustness under {misspec}", ok,
                     "AIPW |bias|/MC-se " + ", ".join(f"{lab[i]} {abs(za[i]):.2f}" for i in range(len(za)))
                     + " (< 3); contrast " + ", ".join(f"{lab[len(za) + i]} {abs(v):.0f}" for i, v in enumerate(zc))
                     + " (> 5)")
    assert ok


# 5. Neyman orthogonality


def test_criterion_5_orthogonality():
    cfg = DgpConfig.figure1(n=20_000, seed=5, curvature1=0.2, curvature0=-0.1)
    s, _ = generate_dgp(cfg, with_truth=False)
    eta0 = true_nuisance(cfg)
    # perturbation directions from models fitted on an independent draw
    other, _ = generate_dgp(cfg.with_seed(55), with_truth=False)
    wrong_g = fit_nuisance(other, (0, 1, 2), NuisanceConfig(misspec="outcome_constant_only"))
    wrong_p = FunctionModel(lambda x: np.full(x.shape[0], 0.3), "flat")
    eta1 = NuisancePair(wrong_g.outcome_models, wrong_p, "perturbed")
    lines, ok = [], True
    for r in (0, 1, 2):
        for perturb in ("outcome", "propensity", "joint"):
            curve = orthogonality_check(s, eta0, eta1, r, perturb=perturb)
            ok &= abs(curve.z) < 3
            lines.append(f"AIPW r{r} {perturb} z={curve.z:+.2f}")
        reg = orthogonality_check(s, eta0, eta1, r, perturb="outcome", moment="reg")
        ok &= abs(reg.z) > 10 and abs(reg.slope) > 0.01
        lines.append(f"Reg r{r} slope={reg.slope:+.3f} z={reg.z:+.0f}")
    record_criterion(5, "Neyman orthogonality", ok, "; ".join(lines) + " (AIPW |z| < 3, Reg |z| > 10)")
    assert ok


# 6. coverage

COVERAGE_DGP = dict(curvature1=0.2, curvature0=-0.1)
GBM_GRID = dict(n_trees=(100, 200), learning_rate=(0.05, 0.1), max_depth=(1, 2, 3), min_leaf=(10, 50))


def _select_gbm(cfg, fit_n, pilot_seeds=(90_001, 90_002), valid_seed=90_100):
    """Hyperparameters with the smallest held-out propensity log-loss.

    Uses pilot draws of the auxiliary-fold size that are separate from the
    coverage replications; the outcome MSE breaks ties.
    """
    valid, _ = generate_dgp(cfg.__class__(**{**cfg.__dict__, "n": 20_000, "seed": valid_seed}), with_truth=False)
    best = None
    for combo in itertools.product(*GBM_GRID.values()):
        params = GBMParams(**dict(zip(GBM_GRID, combo)))
        ll = mse = 0.0
        for sd in pilot_seeds:
            fit, _ = generate_dgp(cfg.__class__(**{**cfg.__dict__, "n": fit_n, "seed": sd}), with_truth=False)
            p = np.clip(fit_gbm(fit.x, fit.d, "log_loss", params).predict(valid.x), 1e-6, 1 - 1e-6)
            ll -= np.mean(valid.d * np.log(p) + (1 - valid.d) * np.log(1 - p))
            mse += np.mean((valid.y - fit_gbm(fit.x, fit.y, params=params).predict(valid.x)) ** 2)
        key = (round(ll, 6), mse)
        if best is None or key < best[0]:
            best = (key, params)
    return best[1]


@pytest.mark.slow
def test_criterion_6_coverage():
    cfg = DgpConfig.figure1(n=5000, **COVERAGE_DGP)
    truth = oracle_truth(cfg)
    par = run_experiment(ExperimentSpec(cfg, 200, tuple(make_grid((0, 1, 2), ("AIPWu", "AIPWn"))), master_seed=0),
                         truth=truth)
    plan = FoldPlan(K=10, split_fraction=0.5)
    gbm = _select_gbm(cfg, int(cfg.n * plan.split_fraction))
    ml = run_experiment(ExperimentSpec(cfg, 200, tuple(make_grid((2,), ("AIPWu", "AIPWn"), engine="ml")),
                                       crossfit=plan, master_seed=0, gbm=gbm), truth=truth)
    cov = {sm.label: sm.coverage for sm in (*par.summaries, *ml.summaries)}
    ok = all(0.90 <= c <= 0.98 for c in cov.values())
    record_criterion(6, "95% CI coverage (200 reps, n=5000, ML K=10)", ok,
                     ", ".join(f"{k} {v:.3f}" for k, v in cov.items())
                     + f" (in [0.90, 0.98]); GBM trees={gbm.n_trees} lr={gbm.learning_rate} depth={gbm.max_depth}"
                     f" min_leaf={gbm.min_leaf}")
    assert ok, cov


# 7. irrelevant-variable pathology


def test_criterion_7_irrelevant_variable():
    cfg = DgpConfig.figure1(n=5000, seed=7, slope1=0.0, slope0=0.0, intercept1=0.4, intercept0=0.2)
    s, _ = generate_dgp(cfg, with_truth=False)
    lp = linear_explained_parts(s)
    rng_seed = np.random.SeedSequence(77)
    reps = []
    for b, child in enumerate(rng_seed.spawn(300)):
        idx = np.random.default_rng(child).integers(0, s.n, size=s.n)
        reps.append(list(linear_explained_parts(s.subset(idx)).to_dict().values()))
    se = np.std(np.array(reps), axis=0, ddof=1)
    z = dict(zip(("dx0", "dx1", "dx2", "dx3"), np.array(list(lp.to_dict().values())) / se))
    ok = abs(z["dx0"]) < 3 and abs(z["dx1"]) < 3 and abs(z["dx3"]) < 3 and abs(z["dx2"]) > 5
    record_criterion(7, "irrelevant-variable pathology", ok,
                     ", ".join(f"{k} = {getattr(lp, k):+.4f} ({v:+.1f} SE)" for k, v in z.items())
                     + " (dx0, dx1, dx3 within 3 SE; dx2 beyond 5 SE)")
    assert ok


# 8. table reproduction (needs user-supplied data)

DATA_DIR = Path(os.environ.get("DRDECOMP_DATA", Path(__file__).parent / "data"))

CHICAGO = dict(
    file="chicago.csv", outcome="ln.real.wage", flip="foreign.born", rows=712, delta_obs=0.1434,
    covariates=["age", "female", "LTHS", "some.college", "college", "advanced.degree"],
    table={0: {"Reg": (0.0664, 0.0449), "IPWu": (0.1274, 0.0619), "IPWn": (0.0824, 0.0469),
               "AIPWu": (0.0869, 0.0470), "AIPWn": (0.0873, 0.0470)},
           1: {"Reg": (0.1222, 0.0462), "IPWu": (0.1567, 0.1118), "IPWn": (0.0816, 0.0487),
               "AIPWu": (0.0708, 0.0493), "AIPWn": (0.0723, 0.0482)},
           2: {"Reg": (0.0751, 0.0322), "IPWu": (0.0793, 0.0322), "IPWn": (0.0793, 0.0322),
               "AIPWu": (0.0793, 0.0322), "AIPWn": (0.0793, 0.0322)}},
    ml_r2_aipwu=0.1090,
)
CPS2012 = dict(
    file="cps2012.csv", outcome="lnw", flip="female", rows=None, delta_obs=0.2608,
    covariates=["widowed", "divorced", "separated", "nevermarried", "hsd08", "hsd911", "hsg", "cg", "ad",
                "mw", "so", "we", "exp1", "exp2", "exp3"],
    table={0: {"Reg": (0.2884, 0.0071), "IPWu": (0.2878, 0.0072), "IPWn": (0.2897, 0.0072),
               "AIPWu": (0.2883, 0.0072), "AIPWn": (0.2883, 0.0072)},
           1: {"Reg": (0.2707, 0.0072), "IPWu": (0.2670, 0.0074), "IPWn": (0.2691, 0.0072),
               "AIPWu": (0.2701, 0.0072), "AIPWn": (0.2701, 0.0072)},
           2: {st: (0.2716, 0.0069) for st in ("Reg", "IPWu", "IPWn", "AIPWu", "AIPWn")}},
    ml_r2_aipwu=0.2706,
)


def _find_data(info):
    env = os.environ.get(f"DRDECOMP_{Path(info['file']).stem.upper()}")
    path = Path(env) if env else DATA_DIR / info["file"]
    return path if path.is_file() else None


def _load_table_sample(path, info):
    # the advantaged group is coded 1: natives (not foreign-born) and men (not female)
    cols = [info["outcome"], info["flip"], *info["covariates"]]
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        rows = [r for r in reader if all(r.get(c, "NA") not in ("", "NA") for c in cols)]
    y = np.array([float(r[info["outcome"]]) for r in rows])
    d = 1.0 - np.array([float(r[info["flip"]]) for r in rows])
    x = np.array([[float(r[c]) for c in info["covariates"]] for r in rows])
    return Sample(y, d, x, tuple(info["covariates"]))


@pytest.mark.slow
@pytest.mark.parametrize("info", [CHICAGO, CPS2012], ids=["chicago", "cps2012"])
def test_criterion_8_tables(info):
    path = _find_data(info)
    if path is None:
        record_criterion(8, f"table reproduction ({Path(info['file']).stem})", None,
                         f"{info['file']} not found (set DRDECOMP_DATA or "
                         f"DRDECOMP_{Path(info['file']).stem.upper()})")
        pytest.skip(f"{info['file']} not supplied")
    s = _load_table_sample(path, info)
    specs = make_grid((0, 1, 2), trim_threshold=0.01)
    res = attach_bootstrap(decompose_grid(s, specs), bootstrap_grid(s, specs, B=999, seed=0))
    bad = []
    if info["rows"] is not None and s.n != info["rows"]:
        bad.append(f"n={s.n}")
    if round(delta_obs(s), 4) != info["delta_obs"]:
        bad.append(f"delta_obs={delta_obs(s):.4f}")
    for r in res:
        est, se = info["table"][int(r.reference)][r.strategy.value]
        if round(r.delta_hat, 4) != est or abs(r.se / se - 1) > 0.2:
            bad.append(f"{r.strategy.value} r{int(r.reference)} {r.delta_hat:.4f} ({r.se:.4f}) vs {est} ({se})")
    ml_res = crossfit_grid(s, [EstimatorSpec(2, "AIPWu", engine="ml")], FoldPlan(K=100))[0]
    if abs(ml_res.delta_hat - info["ml_r2_aipwu"]) > 0.03:
        bad.append(f"ML AIPWu r2 {ml_res.delta_hat:.4f} vs {info['ml_r2_aipwu']} (+-0.03)")
    ok = not bad
    record_criterion(8, f"table reproduction ({Path(info['file']).stem})", ok,
                     "all parametric cells to 4 decimals, SEs within 20%" if ok else "; ".join(bad))
    assert ok, bad


def test_table_loader_flips_group_and_drops_missing(tmp_path):
    path = tmp_path / "chicago.csv"
    head = ",".join([CHICAGO["outcome"], CHICAGO["flip"], *CHICAGO["covariates"]])
    path.write_text(head + "\n2.5,1,30,0,1,0,0,0\n2.9,0,41,1,0,0,1,0\nNA,0,25,1,0,1,0,0\n3.1,0,50,0,0,0,0,1\n")
    s = _load_table_sample(path, CHICAGO)
    assert s.n == 3
    assert s.d.tolist() == [0.0, 1.0, 1.0]
    assert s.feature_names == tuple(CHICAGO["covariates"])


# 9. determinism


def test_criterion_9_determinism(tmp_path, capsys):
    rng = np.random.default_rng(9)
    n = 400
    x = rng.normal(size=(n, 2))
    d = (rng.uniform(size=n) < 1 / (1 + np.exp(-x[:, 0]))).astype(int)
    y = x @ [0.5, -0.2] + 0.3 * d + rng.normal(size=n)
    data = tmp_path / "d.csv"
    data.write_text("y,d,a,b\n" + "".join(f"{y[i]:.17g},{d[i]},{x[i, 0]:.17g},{x[i, 1]:.17g}\n" for i in range(n)))
    base = ["--input", str(data), "--outcome", "y", "--group", "d", "--covariates", "a,b", "--seed", "3"]
    commands = {
        "bootstrap": ["decompose", *base, "--bootstrap", "50"],
        "ml-crossfit": ["decompose", *base, "--engine", "ml", "--crossfit-k", "6", "--gbm-trees", "20"],
        "simulate": ["simulate", "--n", "500", "--reps", "6", "--seed", "3", "--crossfit-k", "3"],
        "curves": ["curves", "--trim", "0.05"],
        "calibrate": ["calibrate", "--n", "3000", "--seed", "3", "--engine", "ml", "--gbm-trees", "20"],
    }
    mismatched = []
    for name, cmd in commands.items():
        outs = []
        for i, threads in enumerate((1, 8, 1)):
            dest = tmp_path / f"{name}_{i}.out"
            assert cli_main([*cmd, "--threads", str(threads), "--output", str(dest)]) == 0
            outs.append(dest.read_bytes())
        capsys.readouterr()
        if not outs[0] == outs[1] == outs[2]:
            mismatched.append(name)
    ok = not mismatched
    record_criterion(9, "determinism across runs and --threads 1 vs 8", ok,
                     f"{len(commands)} commands byte-identical" if ok else "differ: " + ", ".join(mismatched))
    assert ok


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-s", "-q"]))
