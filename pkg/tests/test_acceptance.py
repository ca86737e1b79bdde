"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line.

Tolerances and budgets are pinned below; none is tuned to the result.
"""

import json
import random
import time

import numpy as np
import pandas as pd
import pytest

from cdrtarget import costmodel, pipeline
from cdrtarget.config import RunConfig
from cdrtarget.data_model import SampleDefinition
from cdrtarget.extract import batch_extract, write_matrix
from cdrtarget.indicators import DAYPARTS, WEEKPARTS, compute_indicators, indicator_names
from cdrtarget.learn import ModelSpec, nested_cv
from cdrtarget.learn.trees import fit_gbm, logistic_gradient
from cdrtarget.metrics import weighted_auc
from cdrtarget.targeting import (PanelConfig, TargetingMethod, evaluate_panel,
                                 independent_overlap_mc, roc_auc, trapezoid_area)
from cdrtarget.wealth import fit_asset_index

from fixtures import random_events
from reference_indicators import reference_indicators

pytestmark = pytest.mark.acceptance

CLASSIFIERS = ("logistic", "logistic_l1", "random_forest", "gradient_boosting")


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'} | {detail}")
        assert ok, detail
    return emit


def _run_pipeline(out, generator=None, stages=pipeline.STAGES[:-1], **cfg):
    rc = RunConfig.from_dict({"seed": 2015, "paths": {"output_dir": str(out)},
                              "generator": generator or {}, **cfg})
    for st in stages:
        pipeline.run_stage(st, rc, force=True)
    return out


# ------------------------------------------------------------------ 1

def test_criterion_01_cost_reproduction(report):
    t = time.perf_counter()
    screened = costmodel.estimate_screened(7500, 1235, 20702)
    cbt = costmodel.display_dollars(costmodel.targeting_cost(screened, "2.20"))
    pmt = costmodel.display_dollars(costmodel.targeting_cost(screened, "4.00"))
    s_cbt = costmodel.display_percent(costmodel.budget_share(cbt, 7500, 1688))
    s_pmt = costmodel.display_percent(costmodel.budget_share(pmt, 7500, 1688))
    dt = time.perf_counter() - t
    ok = (screened, cbt, pmt, s_cbt, s_pmt) == (125_721, 276_586, 502_884, "2.18%", "3.97%") \
        and dt < 1.0
    report(1, ok, f"screened={screened} CBT=${cbt} PMT=${pmt} shares={s_cbt}/{s_pmt} "
                  f"runtime={dt:.3f}s (<1s, exact)")


# ------------------------------------------------------------------ 2

def test_criterion_02_quota_identity(report):
    t = time.perf_counter()
    rng = np.random.default_rng(2)
    n, pos = 535, 146
    y = np.zeros(n, bool)
    y[rng.permutation(n)[:pos]] = True
    ids = tuple(f"H{i:04d}" for i in range(n))
    sample = SampleDefinition("matched", ids, (1.0,) * n, pos / n, "unweighted")
    methods = [
        TargetingMethod("assets", rng.normal(size=n) - 0.8 * y, False),
        TargetingMethod("consumption", np.round(rng.normal(size=n) - 0.6 * y, 1), False),  # ties
        TargetingMethod("cdr", rng.random(n) * 0.5 + 0.2 * y),
        TargetingMethod("combined", 1 / (1 + np.exp(-(rng.normal(size=n) + 1.5 * y)))),
        TargetingMethod("constant", np.full(n, 0.3)),
    ]
    reports = evaluate_panel(sample, methods, y, PanelConfig(bootstrap_b=0, seed=1))
    counts = {r.method: int(r.selected.sum()) for r in reports}
    gaps = [abs(r.unweighted["precision"] - r.unweighted["recall"]) for r in reports]
    dt = time.perf_counter() - t
    ok = set(counts.values()) == {146} and all(r.quota_count == 146 for r in reports) \
        and max(gaps) <= 1e-12 and dt < 10
    report(2, ok, f"selected={counts} max|precision-recall|={max(gaps):.1e} (<=1e-12) "
                  f"runtime={dt:.2f}s (<10s)")


# ------------------------------------------------------------------ 3

def _pairwise_auc(s, y):
    pos, neg = s[y], s[~y]
    return (np.sum(pos[:, None] > neg[None, :]) + 0.5 * np.sum(pos[:, None] == neg[None, :])) \
        / (len(pos) * len(neg))


def test_criterion_03_auc_oracle(report):
    t = time.perf_counter()
    worst_trap = worst_pair = 0.0
    for i in range(1000):
        rng = np.random.default_rng([3, i])
        n = int(rng.integers(2, 200))
        s = np.round(rng.normal(size=n), int(rng.integers(0, 3)))
        y = rng.random(n) < rng.uniform(0.1, 0.9)
        y[0], y[-1] = True, False
        w = rng.uniform(0.1, 5, n) if i % 2 else None
        r = roc_auc(s, y, w)
        worst_trap = max(worst_trap, abs(trapezoid_area(r["fpr"], r["tpr"]) - r["auc"]))
        if w is None:
            worst_pair = max(worst_pair, abs(_pairwise_auc(s, y) - r["auc"]))
    nulls = []
    for seed in range(20):
        rng = np.random.default_rng([31, seed])
        y = np.zeros(535, bool)
        y[:146] = True
        score = y + rng.normal(size=535)
        nulls.append(weighted_auc(score, rng.permutation(y)))
    dt = time.perf_counter() - t
    mean_null = float(np.mean(nulls))
    ok = worst_trap <= 1e-9 and worst_pair <= 1e-12 and 0.45 <= mean_null <= 0.55 and dt < 60
    report(3, ok, f"max|trapezoid-MW|={worst_trap:.1e} (<=1e-9) max|pairwise-MW|={worst_pair:.1e} "
                  f"permuted mean AUC={mean_null:.4f} in [0.45,0.55] runtime={dt:.1f}s (<60s)")


# ------------------------------------------------------------------ 4

def test_criterion_04_indicator_oracle(report):
    t = time.perf_counter()
    rng = random.Random(4)
    names = indicator_names()
    worst = 0.0
    nan_mismatch = slice_fail = 0
    for _ in range(500):
        ev = random_events(rng, 50)
        got = compute_indicators(ev, subscriber_id="S").values
        ref = reference_indicators(ev)
        for nm in names:
            a, b = got[nm], ref[nm]
            if (a != a) or (b != b):
                nan_mismatch += (a != a) != (b != b)
            else:
                worst = max(worst, abs(a - b) / max(1.0, abs(b)))
        for ch in ("call", "text", "combined"):
            def cnt(dp, wp):
                x = got[f"comm.number_of_interactions.{ch}.{dp}.{wp}.value"]
                return 0.0 if x != x else x
            for dp in DAYPARTS:
                slice_fail += cnt(dp, "weekday") + cnt(dp, "weekend") != cnt(dp, "allweek")
            for wp in WEEKPARTS:
                slice_fail += cnt("day", wp) + cnt("night", wp) != cnt("allday", wp)
    dt = time.perf_counter() - t
    ok = worst <= 1e-9 and nan_mismatch == 0 and slice_fail == 0 and dt < 60
    report(4, ok, f"500 fixtures x {len(names)} indicators: max rel err={worst:.1e} (<=1e-9) "
                  f"missing mismatches={nan_mismatch} slice-sum failures={slice_fail} "
                  f"runtime={dt:.1f}s (<60s)")


# ------------------------------------------------------------------ 5

def test_criterion_05_pca_oracle(report):
    t = time.perf_counter()
    worst = 1.0
    for seed in range(100):
        rng = np.random.default_rng([5, seed])
        n = int(rng.integers(40, 400))
        f = rng.standard_normal(n)
        latent = f[:, None] * rng.uniform(0.1, 1.0, 16) + rng.standard_normal((n, 16))
        x = (latent > rng.normal(0, 0.7, 16)).astype(float)
        x[:, 12:] = rng.poisson(np.exp(0.5 * latent[:, 12:]))
        _, v = np.linalg.eigh(np.corrcoef(x, rowvar=False))
        worst = min(worst, abs(float(v[:, -1] @ fit_asset_index(x).loadings)))
    rng = np.random.default_rng(55)
    evr = fit_asset_index(np.outer(rng.standard_normal(300), rng.uniform(0.5, 2, 16))
                          + rng.normal(0, 5, 16)).explained_variance_ratio
    dt = time.perf_counter() - t
    ok = worst > 1 - 1e-8 and evr > 0.999 and dt < 30
    report(5, ok, f"min |cos| over 100 panels = 1-{1 - worst:.1e} (>1-1e-8) rank-1 EVR={evr:.6f} "
                  f"(>0.999) runtime={dt:.1f}s (<30s)")


# ------------------------------------------------------------------ 6

# two grid points per family so inner-fold selection is exercised; every value
# comes from the published grids, tree counts at the low end to fit the budget
NULL_GRIDS = {
    "logistic": {"missing_threshold": [0.8], "variance_threshold": [0.01],
                 "winsor_limit": [0.0, 0.05]},
    "logistic_l1": {"missing_threshold": [0.8], "variance_threshold": [0.01],
                    "winsor_limit": [0.01], "alpha": [0.01, 0.1]},
    "random_forest": {"missing_threshold": [0.8], "variance_threshold": [0.01],
                      "winsor_limit": [0.0], "n_trees": [20], "max_depth": [4, 8]},
    "gradient_boosting": {"missing_threshold": [1.0], "variance_threshold": [0.0],
                          "winsor_limit": [0.0], "n_trees": [20], "min_data_in_leaf": [10],
                          "num_leaves": [5, 10], "learning_rate": [0.075]},
}


def test_criterion_06_no_leakage_null(report):
    t = time.perf_counter()
    aucs = {f: [] for f in CLASSIFIERS}
    for seed in range(20):
        rng = np.random.default_rng([6, seed])
        X = rng.lognormal(size=(535, 200))
        X[rng.random(X.shape) < 0.05] = np.nan
        y = np.zeros(535)
        y[:146] = 1.0
        y = rng.permutation(y)
        for fam in CLASSIFIERS:
            cv = nested_cv(ModelSpec(fam, grid=NULL_GRIDS[fam]), X, y, seed=seed)
            aucs[fam].append(cv.auc(y))
    dt = time.perf_counter() - t
    means = {f: round(float(np.mean(v)), 4) for f, v in aucs.items()}
    ok = all(0.45 <= m <= 0.55 for m in means.values()) and dt < 600
    report(6, ok, f"mean pooled AUC over 20 seeds {means} in [0.45,0.55] "
                  f"runtime={dt:.0f}s (<600s)")


# ------------------------------------------------------------------ 7

def test_criterion_07_signal_recovery(report, tmp_path):
    t = time.perf_counter()
    out = _run_pipeline(tmp_path / "default", stages=("simulate", "ingest", "extract", "wealth",
                                                     "train"))
    m = json.loads((out / "train" / "metrics.json").read_text())
    gbm = m["families"]["gradient_boosting"]["pooled_auc"]
    single = m["single_source_auc"]
    comb = m["combined_auc"]["combined"]
    best = max(single.values())
    dt = time.perf_counter() - t
    ok = gbm > 0.65 and comb >= best - 0.02 and dt < 900
    report(7, ok, f"n={m['n']} positives={m['positives']} GBM AUC={gbm:.4f} (>0.65) "
                  f"combined={comb:.4f} >= best single {best:.4f} - 0.02 "
                  f"singles={ {k: round(v, 4) for k, v in single.items()} } runtime={dt:.0f}s (<900s)")


# ------------------------------------------------------------------ 8

def test_criterion_08_ordering_policy_direction(report, tmp_path):
    t = time.perf_counter()
    out = _run_pipeline(tmp_path / "fewphones", {"scenario": "poor_few_phones"},
                        bootstrap_b=20, order_draws=10)
    reports = json.loads((out / "evaluate" / "reports.json").read_text())
    cdr = {r["policy"]: r for r in reports if r["sample"] == "full" and r["method"] == "cdr"}
    last, first = cdr["last"]["auc"], cdr["first"]["auc"]
    dt = time.perf_counter() - t
    ok = abs(last - 0.5) <= 0.05 and first - last >= 0.1 and dt < 300
    report(8, ok, f"full panel (weighted) CDR AUC last={last:.4f} (|.-0.5|<=0.05) "
                  f"first={first:.4f} (first-last={first - last:.4f} >= 0.1) "
                  f"runtime={dt:.0f}s (<300s)")


# ------------------------------------------------------------------ 9

def test_criterion_09_overlap_expectation(report):
    t = time.perf_counter()
    mc = independent_overlap_mc(146, 535 - 146, 0.2, 0.55, trials=100_000, seed=9)
    dt = time.perf_counter() - t
    ok = abs(mc["inclusion"] - 0.20) <= 0.02 and abs(mc["exclusion"] - 0.55) <= 0.02 and dt < 60
    report(9, ok, f"10^5 trials: inclusion overlap={mc['inclusion']:.4f} (0.20+-0.02) "
                  f"exclusion overlap={mc['exclusion']:.4f} (0.55+-0.02) runtime={dt:.1f}s (<60s)")


# ------------------------------------------------------------------ 10

def _million_events(d):
    rng = np.random.default_rng(10)
    S = 5000
    subs = np.array([f"S{i:05d}" for i in range(S)])
    t0 = 1_446_336_000
    t1 = t0 + 61 * 86400
    towers = pd.DataFrame({"tower": [f"T{i:03d}" for i in range(300)],
                           "lat": rng.uniform(34, 38, 300).round(6),
                           "lon": rng.uniform(64, 70, 300).round(6)})
    towers.to_csv(d / "towers.csv", index=False)

    def pair(n):
        a = rng.integers(0, S, n)
        b = rng.integers(0, S + 20_000, n)
        other = np.where(b < S, subs[np.minimum(b, S - 1)], np.char.add("K", b.astype(str)))
        flip = rng.random(n) < 0.5
        return np.where(flip, subs[a], other), np.where(flip, other, subs[a])

    n_call, n_text, n_rech = 450_000, 500_000, 50_000
    c1, c2 = pair(n_call)
    pd.DataFrame({"caller": c1, "callee": c2, "ts": rng.integers(t0, t1, n_call),
                  "duration": rng.integers(0, 900, n_call),
                  "tower": towers["tower"].values[rng.integers(0, 300, n_call)]}
                 ).to_csv(d / "calls.csv", index=False)
    s1, s2 = pair(n_text)
    pd.DataFrame({"sender": s1, "recipient": s2, "ts": rng.integers(t0, t1, n_text)}
                 ).to_csv(d / "texts.csv", index=False)
    pd.DataFrame({"subscriber": subs[rng.integers(0, S, n_rech)],
                  "ts": rng.integers(t0, t1, n_rech),
                  "amount": rng.choice([50.0, 100.0, 200.0], n_rech)}
                 ).to_csv(d / "recharges.csv", index=False)
    return list(subs), n_call + n_text + n_rech


def test_criterion_10_extraction_performance(report, tmp_path):
    subs, n_events = _million_events(tmp_path)
    files = [tmp_path / f for f in ("calls.csv", "texts.csv", "recharges.csv", "towers.csv")]
    times, outs = {}, {}
    for w in (1, 4):
        t = time.perf_counter()
        res = batch_extract(subs, *files, workers=w)
        times[w] = time.perf_counter() - t
        write_matrix(res, tmp_path / f"m{w}.csv")
        outs[w] = (tmp_path / f"m{w}.csv").read_bytes()
    same = outs[1] == outs[4]
    ok = n_events == 1_000_000 and times[1] < 30 and times[4] < 30 and same
    report(10, ok, f"{n_events} events / {len(subs)} subscribers: 1 worker {times[1]:.1f}s, "
                   f"4 workers {times[4]:.1f}s (<30s) byte-identical={same}")


# ------------------------------------------------------------------ 11

def test_criterion_11_boosting_gradient_and_monotone_loss(report):
    rng = np.random.default_rng(11)
    F = rng.uniform(-8, 8, 10_000)
    y = rng.integers(0, 2, 10_000).astype(float)
    h = 1e-5

    def loss(z):
        return np.logaddexp(0.0, z) - y * z

    num = (loss(F + h) - loss(F - h)) / (2 * h)
    g, _ = logistic_gradient(1 / (1 + np.exp(-F)), y)
    grad_err = float(np.max(np.abs(num - g)))
    bad = 0
    n_fix = 200
    for i in range(n_fix):
        r = np.random.default_rng([11, i])
        n, p = int(r.integers(10, 150)), int(r.integers(1, 8))
        X = r.standard_normal((n, p))
        X[r.random((n, p)) < 0.15] = np.nan
        task = ("classification", "regression")[i % 2]
        target = (r.random(n) < r.uniform(0.1, 0.9)).astype(float) if task == "classification" \
            else r.normal(size=n)
        fit = fit_gbm(X, target, r.uniform(0.1, 4, n), task, n_trees=20,
                      learning_rate=float(r.choice([0.05, 0.075, 1.0, 3.0])),
                      num_leaves=int(r.choice([2, 5, 10, 20])),
                      min_data_in_leaf=int(r.choice([1, 5, 10])))
        bad += int(np.any(np.diff(fit["train_loss"]) > 0))
    ok = grad_err <= 1e-6 and bad == 0
    report(11, ok, f"max|numerical - (p-y)| on 10^4 points={grad_err:.1e} (<=1e-6); "
                   f"fixtures with a loss increase: {bad}/{n_fix}")
