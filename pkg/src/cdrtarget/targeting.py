"""Quota-method targeting evaluation.

Every method is turned into a poverty score where higher means more likely
ultra-poor. A household without a score (no CDR coverage) is ranked according to
an ordering policy: ``first`` or ``last`` (in a seeded random order among
themselves) or ``excluded`` from the panel altogether.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import warnings
from dataclasses import asdict, dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from typing import Callable, Sequence

import numpy as np

from .metrics import UndefinedAUCError, weighted_auc

log = logging.getLogger(__name__)

POLICIES = ("first", "last", "excluded")
METRICS = ("precision", "recall", "exclusion_error", "inclusion_error", "auc")


class DegenerateQuotaError(ValueError):
    pass


@dataclass
class TargetingMethod:
    """Scores for one method, aligned to a panel; NaN marks no coverage.

    ``higher_is_poorer`` is False for wealth-type scores (asset index, log
    consumption), True for predicted ultra-poor probabilities.
    """
    name: str
    scores: np.ndarray
    higher_is_poorer: bool = True

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=float)

    @property
    def coverage(self) -> np.ndarray:
        return ~np.isnan(self.scores)

    @property
    def poverty_score(self) -> np.ndarray:
        return self.scores if self.higher_is_poorer else -self.scores


def quota_count(quota_fraction: float, n: int) -> int:
    """round-half-up(quota_fraction * n), computed in decimal."""
    if not 0 < quota_fraction < 1:
        raise DegenerateQuotaError(f"quota fraction {quota_fraction} outside (0, 1)")
    k = int((Decimal(repr(float(quota_fraction))) * n).quantize(Decimal(1), ROUND_HALF_UP))
    if k <= 0 or k >= n:
        raise DegenerateQuotaError(f"quota count {k} of {n} households selects none or all")
    return k


def _id_rank(ids) -> np.ndarray:
    ids = np.asarray([str(i) for i in ids])
    uniq, inv = np.unique(ids, return_inverse=True)
    return inv


def rank_households(poverty, id_rank, policy, rng) -> np.ndarray:
    """Selection order: covered rows by poverty desc then id; uncovered rows
    shuffled and put first or last (or dropped for ``excluded``)."""
    poverty = np.asarray(poverty, dtype=float)
    cov = ~np.isnan(poverty)
    ci = np.flatnonzero(cov)
    ci = ci[np.lexsort((id_rank[ci], -poverty[ci]))]
    ui = np.flatnonzero(~cov)
    if policy == "excluded" or not len(ui):
        return ci
    ui = ui[rng.permutation(len(ui))]
    if policy == "first":
        return np.concatenate([ui, ci])
    if policy == "last":
        return np.concatenate([ci, ui])
    raise ValueError(f"unknown ordering policy {policy!r}")


@dataclass
class QuotaSelection:
    selected: np.ndarray  # bool mask over the panel rows kept by the policy
    kept: np.ndarray      # bool mask, False for rows dropped by ``excluded``
    count: int
    threshold: float      # method-scale score of the last selected household, NaN if uncovered


def quota_select(scores, quota_fraction, ordering_policy="last", seed=0, ids=None,
                 higher_is_poorer=True) -> QuotaSelection:
    """Select the round(q * N) households with the highest poverty score."""
    m = scores if isinstance(scores, TargetingMethod) else TargetingMethod(
        "scores", scores, higher_is_poorer)
    rank = np.arange(len(m.scores)) if ids is None else _id_rank(ids)
    return _select(m.poverty_score, m.higher_is_poorer, rank, quota_fraction, ordering_policy,
                   np.random.default_rng(seed))


def _select(poverty, higher_is_poorer, id_rank, q, policy, rng, count=None) -> QuotaSelection:
    order = rank_households(poverty, id_rank, policy, rng)
    kept = np.zeros(len(poverty), dtype=bool)
    kept[order] = True
    k = quota_count(q, len(order)) if count is None else count
    sel = np.zeros(len(poverty), dtype=bool)
    sel[order[:k]] = True
    last = poverty[order[k - 1]]
    thr = float(last if higher_is_poorer else -last) if last == last else float("nan")
    return QuotaSelection(sel, kept, k, thr)


@dataclass
class Confusion:
    tp: float
    fp: float
    tn: float
    fn: float

    @property
    def positives(self):
        return self.tp + self.fn

    @property
    def negatives(self):
        return self.fp + self.tn

    def rates(self) -> dict:
        def div(a, b):
            return a / b if b > 0 else float("nan")
        return {
            "precision": div(self.tp, self.tp + self.fp),
            "recall": div(self.tp, self.positives),
            "exclusion_error": div(self.fn, self.positives),
            "inclusion_error": div(self.fp, self.negatives),
        }


def confusion_and_rates(selected, labels, weights=None, kept=None) -> dict:
    """Unweighted and weighted confusion counts and the derived rates."""
    sel = np.asarray(selected, dtype=bool)
    y = np.asarray(labels, dtype=bool)
    kept = np.ones(len(sel), dtype=bool) if kept is None else np.asarray(kept, dtype=bool)
    w = np.ones(len(sel)) if weights is None else np.asarray(weights, dtype=float)
    out = {}
    for tag, ww in (("unweighted", np.ones(len(sel))), ("weighted", w)):
        ww = ww * kept
        c = Confusion(float(ww[sel & y].sum()), float(ww[sel & ~y].sum()),
                      float(ww[~sel & ~y].sum()), float(ww[~sel & y].sum()))
        if tag == "unweighted":
            c = Confusion(*(int(round(v)) for v in (c.tp, c.fp, c.tn, c.fn)))
        out[tag] = {"confusion": asdict(c), **c.rates()}
    return out


def _with_pseudo_scores(poverty, policy):
    """No-coverage rows get a common score above (first) or below (last) every
    covered score; ``excluded`` drops them."""
    poverty = np.asarray(poverty, dtype=float)
    cov = ~np.isnan(poverty)
    if cov.all() or policy == "excluded":
        return poverty[cov], cov
    covered = poverty[cov]
    hi = covered.max() if len(covered) else 0.0
    lo = covered.min() if len(covered) else 0.0
    pseudo = hi + 1.0 + abs(hi) if policy == "first" else lo - 1.0 - abs(lo)
    return np.where(cov, poverty, pseudo), np.ones(len(poverty), dtype=bool)


def roc_curve(scores, labels, weights=None):
    """(fpr, tpr, threshold) at each distinct score, descending, from (0, 0, +inf)."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels, dtype=bool)
    w = np.ones(len(s)) if weights is None else np.asarray(weights, dtype=float)
    wp, wn = w[y].sum(), w[~y].sum()
    if not (wp > 0 and wn > 0):
        raise UndefinedAUCError("ROC needs both classes present")
    order = np.argsort(-s, kind="stable")
    s, y, w = s[order], y[order], w[order]
    ends = np.r_[np.flatnonzero(s[1:] != s[:-1]), len(s) - 1]
    tp = np.cumsum(np.where(y, w, 0.0))[ends]
    fp = np.cumsum(np.where(y, 0.0, w))[ends]
    fpr = np.r_[0.0, fp / wn]
    tpr = np.r_[0.0, tp / wp]
    thr = np.r_[np.inf, s[ends]]
    return fpr, tpr, thr


def trapezoid_area(fpr, tpr) -> float:
    fpr, tpr = np.asarray(fpr), np.asarray(tpr)
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2))


def roc_auc(scores, labels, weights=None, policy="excluded", higher_is_poorer=True):
    """ROC points and the Mann-Whitney AUC of poverty scores (NaN = no coverage)."""
    m = scores if isinstance(scores, TargetingMethod) else TargetingMethod(
        "scores", scores, higher_is_poorer)
    s, keep = _with_pseudo_scores(m.poverty_score, policy)
    y = np.asarray(labels, dtype=bool)[keep]
    w = None if weights is None else np.asarray(weights, dtype=float)[keep]
    auc = weighted_auc(s, y, w)
    fpr, tpr, thr = roc_curve(s, y, w)
    return {"fpr": fpr, "tpr": tpr, "threshold": thr, "auc": auc}


@dataclass
class BootstrapResult:
    mean: float
    sd: float
    n_valid: int
    n_skipped: int
    values: np.ndarray = field(repr=False, default=None)


def bootstrap_metric(metric: Callable[[np.ndarray], float], n: int, B: int = 1000, seed: int = 0,
                     name: str = "metric") -> BootstrapResult:
    """Resample row indices with replacement (size n) B times.

    ``metric(idx)`` returns the statistic on the resample; an UndefinedAUCError
    (single-class resample) skips that draw. Draw b uses seed [seed, b], so
    results do not depend on evaluation order.
    """
    if B < 2:
        raise ValueError("bootstrap needs B >= 2")
    vals = []
    skipped = 0
    for b in range(B):
        idx = np.random.default_rng([seed, b]).integers(0, n, size=n)
        try:
            vals.append(float(metric(idx)))
        except (UndefinedAUCError, DegenerateQuotaError):
            skipped += 1
    if skipped > 0.1 * B:
        warnings.warn(f"{name}: {skipped} of {B} bootstrap resamples skipped", RuntimeWarning)
    v = np.asarray(vals)
    if len(v) < 2:
        return BootstrapResult(float("nan"), float("nan"), len(v), skipped, v)
    return BootstrapResult(float(v.mean()), float(v.std(ddof=1)), len(v), skipped, v)


# ------------------------------------------------------------- error overlap

def error_overlap(a: "TargetingReport", b: "TargetingReport") -> dict:
    """Share of A's inclusion (exclusion) errors that B also makes, next to the
    share expected if B erred independently: B's inclusion (exclusion) error rate."""
    if a.sample != b.sample or list(a.ids) != list(b.ids):
        raise ValueError("error overlap requires both reports on the same sample")
    if a.quota_count != b.quota_count:
        raise ValueError("error overlap requires the same quota")
    y = np.asarray(a.labels, dtype=bool)
    out = {}
    for kind, err_a, err_b, rate in (
            ("inclusion", a.selected & ~y, b.selected & ~y, "inclusion_error"),
            ("exclusion", ~a.selected & y & a.kept, ~b.selected & y & b.kept, "exclusion_error")):
        na = int(err_a.sum())
        out[kind] = {
            "overlap": float((err_a & err_b).sum() / na) if na else None,
            "expected_if_independent": b.unweighted[rate],
            "n_errors_a": na,
        }
    return out


def independent_overlap_mc(n_pos, n_neg, inclusion_rate=0.2, exclusion_rate=0.55,
                           trials=100_000, seed=0, chunk=5_000) -> dict:
    """Monte Carlo overlap of two independent selectors with fixed error counts.

    Each selector wrongly includes round(inclusion_rate * n_neg) random
    non-poor households and misses round(exclusion_rate * n_pos) random poor
    ones; returns the mean share of A's errors that B shares.
    """
    k_inc = int(round(inclusion_rate * n_neg))
    k_exc = int(round(exclusion_rate * n_pos))
    rng = np.random.default_rng(seed)
    sums = {"inclusion": 0.0, "exclusion": 0.0}
    done = 0
    while done < trials:
        m = min(chunk, trials - done)
        for kind, pool, k in (("inclusion", n_neg, k_inc), ("exclusion", n_pos, k_exc)):
            ra = np.argsort(rng.random((m, pool)), axis=1) < k
            rb = np.argsort(rng.random((m, pool)), axis=1) < k
            sums[kind] += float(((ra & rb).sum(axis=1) / k).sum())
        done += m
    return {kind: s / trials for kind, s in sums.items()}


# ------------------------------------------------------------------ panels

@dataclass
class TargetingReport:
    method: str
    sample: str
    policy: str
    weighted: bool
    n: int
    quota_fraction: float
    quota_count: int
    threshold: float
    unweighted: dict
    weighted_rates: dict
    auc: float
    auc_unweighted: float
    auc_weighted: float
    roc: dict
    bootstrap: dict
    n_order_draws: int
    ids: list = field(repr=False, default_factory=list)
    labels: np.ndarray = field(repr=False, default=None)
    selected: np.ndarray = field(repr=False, default=None)
    kept: np.ndarray = field(repr=False, default=None)

    @property
    def primary(self) -> dict:
        return self.weighted_rates if self.weighted else self.unweighted

    def to_dict(self) -> dict:
        return {
            "method": self.method, "sample": self.sample, "policy": self.policy,
            "weighted": self.weighted, "n": self.n, "quota_fraction": self.quota_fraction,
            "quota_count": self.quota_count, "threshold": _num(self.threshold),
            "unweighted": _clean(self.unweighted), "weighted_metrics": _clean(self.weighted_rates),
            "auc": self.auc, "auc_unweighted": self.auc_unweighted,
            "auc_weighted": self.auc_weighted, "bootstrap": _clean(self.bootstrap),
            "n_order_draws": self.n_order_draws,
            "selected_ids": [i for i, s in zip(self.ids, self.selected) if s],
        }


def _num(v):
    return None if v is None or v != v or v in (np.inf, -np.inf) else float(v)


def _clean(d):
    if isinstance(d, dict):
        return {k: _clean(v) for k, v in d.items()}
    if isinstance(d, float):
        return _num(d)
    return d


@dataclass
class PanelConfig:
    policies: tuple = ("first", "last")
    order_draws: int = 100
    bootstrap_b: int = 1000
    seed: int = 0
    quota_override: float | None = None
    weighted: bool | None = None  # None: weighted unless the sample is unweighted


def _rates_for(poverty, hip, id_rank, y, w, q, policy, seed, draws):
    """Mean confusion rates over seeded no-coverage orderings; also the
    selection of the first draw (kept as the report's representative)."""
    cov = ~np.isnan(poverty)
    n_kept = len(y) if policy != "excluded" else int(cov.sum())
    k = quota_count(q, n_kept)
    n_unc = int((~cov).sum())
    # the order among uncovered rows only matters when the boundary cuts through them
    matters = n_unc > 0 and policy != "excluded" and (
        (policy == "first" and k < n_unc) or (policy == "last" and k > int(cov.sum())))
    n_draws = draws if matters else 1
    acc = None
    first = None
    for d in range(n_draws):
        sel = _select(poverty, hip, id_rank, q, policy, np.random.default_rng([seed, d]), k)
        r = confusion_and_rates(sel.selected, y, w, sel.kept)
        if first is None:
            first = sel
        flat = _flatten(r)
        acc = flat if acc is None else {key: acc[key] + flat[key] for key in acc}
    mean = {key: v / n_draws for key, v in acc.items()}
    return _unflatten(mean), first, n_draws


def _flatten(r, prefix=""):
    out = {}
    for k, v in r.items():
        if isinstance(v, dict):
            out.update(_flatten(v, prefix + k + "."))
        else:
            out[prefix + k] = float(v)
    return out


def _unflatten(flat):
    out = {}
    for key, v in flat.items():
        parts = key.split(".")
        d = out
        for p in parts[:-1]:
            d = d.setdefault(p, {})
        d[parts[-1]] = v
    return out


def evaluate_method(method: TargetingMethod, sample_name, ids, labels, weights, quota_fraction,
                    policy, weighted, order_draws=100, bootstrap_b=1000, seed=0,
                    auto_quota=True) -> TargetingReport:
    y = np.asarray(labels, dtype=bool)
    w = np.asarray(weights, dtype=float)
    n = len(y)
    poverty = method.poverty_score
    hip = method.higher_is_poorer
    rank = _id_rank(ids)
    rates, sel, n_draws = _rates_for(poverty, hip, rank, y, w, quota_fraction, policy, seed,
                                     order_draws)
    auc_u = roc_auc(poverty, y, None, policy)["auc"]
    roc_w = roc_auc(poverty, y, w, policy)
    roc = roc_w if weighted else roc_auc(poverty, y, None, policy)
    primary_w = w if weighted else None

    def resample_metrics(idx, b):
        yy, ww, pp = y[idx], w[idx], poverty[idx]
        if auto_quota:
            wk = ww if weighted else np.ones(len(idx))
            q = float(np.sum(wk * yy) / np.sum(wk))
        else:
            q = quota_fraction
        s = _select(pp, hip, rank[idx], q, policy, np.random.default_rng([seed, b, 1]))
        cr = confusion_and_rates(s.selected, yy, ww, s.kept)["weighted" if weighted else "unweighted"]
        out = {k: cr[k] for k in METRICS[:-1]}
        out["auc"] = roc_auc(pp, yy, ww if weighted else None, policy)["auc"]
        return out

    boot = _bootstrap_many(resample_metrics, n, bootstrap_b, seed, f"{method.name}/{sample_name}")
    return TargetingReport(
        method=method.name, sample=sample_name, policy=policy, weighted=weighted, n=n,
        quota_fraction=float(quota_fraction), quota_count=sel.count, threshold=sel.threshold,
        unweighted=rates["unweighted"], weighted_rates=rates["weighted"],
        auc=roc_w["auc"] if weighted else auc_u, auc_unweighted=auc_u, auc_weighted=roc_w["auc"],
        roc={k: roc[k].tolist() for k in ("fpr", "tpr", "threshold")}, bootstrap=boot,
        n_order_draws=n_draws, ids=list(ids), labels=y, selected=sel.selected, kept=sel.kept)


def _bootstrap_many(fn, n, B, seed, name) -> dict:
    """Bootstrap several metrics off the same resamples; ``fn(idx, b)`` also
    gets the draw number so any ordering randomness is seeded per draw."""
    if B <= 0:
        return {}
    rows = []
    skipped = 0
    for b in range(B):
        idx = np.random.default_rng([seed, b]).integers(0, n, size=n)
        try:
            rows.append(fn(idx, b))
        except (UndefinedAUCError, DegenerateQuotaError):
            skipped += 1
    if skipped > 0.1 * B:
        warnings.warn(f"{name}: {skipped} of {B} bootstrap resamples skipped", RuntimeWarning)
    out = {"B": B, "skipped": skipped}
    for k in METRICS:
        v = np.array([r[k] for r in rows], dtype=float)
        v = v[~np.isnan(v)]
        out[k] = {"mean": float(v.mean()) if len(v) else float("nan"),
                  "sd": float(v.std(ddof=1)) if len(v) > 1 else float("nan")}
    return out


def evaluate_panel(sample, methods: Sequence[TargetingMethod], labels, config: PanelConfig | None = None,
                   ids=None, weights=None) -> list[TargetingReport]:
    """One report per method and ordering policy (a single report for methods
    that cover every household). ``sample`` is a SampleDefinition."""
    cfg = config or PanelConfig()
    ids = list(sample.household_ids) if ids is None else list(ids)
    w = np.asarray(sample.weights if weights is None else weights, dtype=float)
    weighted = cfg.weighted if cfg.weighted is not None else sample.reweighting != "unweighted"
    q = cfg.quota_override if cfg.quota_override is not None else sample.quota_fraction
    reports = []
    for mi, m in enumerate(methods):
        if len(m.scores) != len(ids):
            raise ValueError(f"method {m.name!r} has {len(m.scores)} scores for {len(ids)} households")
        cov = m.coverage
        if not cov.any():
            warnings.warn(f"method {m.name!r} has no scores on sample {sample.name!r}; skipped",
                          RuntimeWarning)
            continue
        policies = cfg.policies if not cov.all() else ("n/a",)
        for policy in policies:
            reports.append(evaluate_method(
                m, sample.name, ids, labels, w, q, "last" if policy == "n/a" else policy,
                weighted, cfg.order_draws, cfg.bootstrap_b, _seed(cfg.seed, mi),
                auto_quota=cfg.quota_override is None))
            if policy == "n/a":
                reports[-1].policy = "n/a"
    return reports


def _seed(seed, i):
    return int(np.random.default_rng([int(seed), int(i)]).integers(2 ** 31))


# ------------------------------------------------------------------- output

def reports_json(reports: Sequence[TargetingReport]) -> str:
    return json.dumps([r.to_dict() for r in reports], indent=1, sort_keys=True)


def reports_csv(reports: Sequence[TargetingReport]) -> str:
    """Flat rows: sample, method, policy, weighting, metric, value, bootstrap sd."""
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["sample", "method", "policy", "weighting", "metric", "value", "bootstrap_sd"])
    for r in reports:
        for tag, rates in (("unweighted", r.unweighted), ("weighted", r.weighted_rates)):
            for k in METRICS[:-1]:
                sd = r.bootstrap.get(k, {}).get("sd") if (tag == "weighted") == r.weighted else None
                wr.writerow([r.sample, r.method, r.policy, tag, k, _fmt(rates[k]), _fmt(sd)])
            auc = r.auc_weighted if tag == "weighted" else r.auc_unweighted
            sd = r.bootstrap.get("auc", {}).get("sd") if (tag == "weighted") == r.weighted else None
            wr.writerow([r.sample, r.method, r.policy, tag, "auc", _fmt(auc), _fmt(sd)])
        wr.writerow([r.sample, r.method, r.policy, "unweighted", "quota_count", r.quota_count, ""])
    return buf.getvalue()


def roc_csv(report: TargetingReport) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["fpr", "tpr", "threshold"])
    for f, t, h in zip(report.roc["fpr"], report.roc["tpr"], report.roc["threshold"]):
        wr.writerow([repr(f), repr(t), repr(h)])
    return buf.getvalue()


def _fmt(v):
    if v is None or (isinstance(v, float) and v != v):
        return ""
    return repr(float(v))
