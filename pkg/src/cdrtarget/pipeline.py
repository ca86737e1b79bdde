"""Pipeline stages behind the command-line tool.

Every stage reads its inputs from the data directory or from earlier stage
directories under ``paths.output_dir`` and writes into its own directory, closing
with a ``manifest.json`` (config echo, config hash, versions, file hashes).
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import platform
from decimal import Decimal
from pathlib import Path

import numba
import numpy as np
import pandas as pd

from . import __version__, costmodel, synthgen, targeting
from .config import RunConfig
from .data_model import (MatchedRecord, build_sample, match_households, read_survey,
                         read_towers)
from .extract import _read, batch_extract, config_echo, read_matrix, write_matrix
from .indicators import IndicatorConfig
from .learn import FAMILIES, ModelSpec, combined_method, nested_cv, refit_full
from .learn.cv import _mix
from .metrics import UndefinedAUCError, weighted_auc
from .wealth import asset_matrix, fit_asset_index, log_consumption

log = logging.getLogger(__name__)

STAGES = ("simulate", "ingest", "extract", "wealth", "train", "evaluate", "cost")
SAMPLES = ("matched", "balanced", "full")
COMBINED_VARIANTS = {
    "combined": ("assets", "consumption", "cdr"),
    "combined_assets_consumption": ("assets", "consumption"),
    "combined_assets_cdr": ("assets", "cdr"),
    "combined_consumption_cdr": ("consumption", "cdr"),
}
MANIFEST = "manifest.json"


class StageError(RuntimeError):
    """A stage could not run; ``path`` names the offending file when there is one."""

    def __init__(self, message, path=None):
        super().__init__(message)
        self.path = None if path is None else str(path)


class MissingInputError(StageError):
    pass


class OverwriteError(StageError):
    pass


def versions() -> dict:
    return {"cdrtarget": __version__, "numpy": np.__version__, "pandas": pd.__version__,
            "numba": numba.__version__, "python": platform.python_version()}


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _need(path) -> Path:
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(f"required input not found: {path}", path)
    return path


class StageDir:
    """Output directory of one stage, guarded against clobbering other runs.

    A directory holding files is reused only when its manifest comes from the
    same config hash and every file it lists is still present; anything else
    counts as a foreign or partial output and needs ``force``.
    """

    def __init__(self, cfg: RunConfig, stage: str, force=False, directory=None):
        self.cfg, self.stage = cfg, stage
        self.dir = Path(directory) if directory is not None else Path(cfg.paths.output_dir) / stage
        self.inputs: list[Path] = []
        self.outputs: list[Path] = []
        if self.dir.exists() and any(self.dir.iterdir()) and not force and not self._reusable():
            raise OverwriteError(
                f"{self.dir} holds outputs from another or an unfinished run; "
                "pass --force to overwrite", self.dir)
        self.dir.mkdir(parents=True, exist_ok=True)

    def _reusable(self) -> bool:
        m = self.dir / MANIFEST
        if not m.is_file():
            return False
        try:
            man = json.loads(m.read_text())
        except ValueError:
            return False
        return (man.get("config_hash") == self.cfg.config_hash()
                and all((self.dir / f).is_file() for f in man.get("outputs", {})))

    def path(self, name) -> Path:
        p = self.dir / name
        p.parent.mkdir(parents=True, exist_ok=True)
        self.outputs.append(p)
        return p

    def write_text(self, name, text):
        with open(self.path(name), "w", newline="") as fh:
            fh.write(text)

    def read(self, path) -> Path:
        p = _need(path)
        self.inputs.append(p)
        return p

    def finish(self, summary: dict | None = None) -> dict:
        man = {
            "stage": self.stage,
            "config_hash": self.cfg.config_hash(),
            "config": self.cfg.to_dict(),
            "versions": versions(),
            "inputs": {str(p): sha256(p) for p in self.inputs},
            "outputs": {str(p.relative_to(self.dir)): sha256(p) for p in self.outputs},
            "summary": summary or {},
        }
        (self.dir / MANIFEST).write_text(json.dumps(man, indent=1, sort_keys=True) + "\n")
        return man


def _stage_path(cfg, stage, name) -> Path:
    return Path(cfg.paths.output_dir) / stage / name


def _fmt(v) -> str:
    return "" if v is None or v != v else repr(float(v))


# ------------------------------------------------------------------ simulate

def simulate(cfg: RunConfig, force=False) -> dict:
    """Synthetic CSV bundle written into the data directory."""
    gen = synthgen.GeneratorConfig.from_dict({"rng_seed": cfg.seed, **cfg.generator})
    sd = StageDir(cfg, "simulate", force, cfg.data_dir)
    bundle = synthgen.generate(gen)
    paths = synthgen.write_bundle(bundle, sd.dir)
    sd.outputs += [*paths.values(), sd.dir / "generator_config.json"]
    return sd.finish({"households": len(bundle.survey), "calls": len(bundle.calls),
                      "texts": len(bundle.texts), "recharges": len(bundle.recharges),
                      "subscribers": len(bundle.subscriber_of)})


# -------------------------------------------------------------------- ingest

def _parties(cfg, sd) -> tuple[set, dict, dict]:
    seen, rows, malformed = set(), {}, {}
    for name, kind, cols in (("calls", "call", ("caller", "callee")),
                             ("texts", "text", ("sender", "recipient")),
                             ("recharges", "recharge", ("subscriber",))):
        df, bad = _read(sd.read(cfg.resolve(name)), kind, cfg.schema)
        rows[name], malformed[name] = len(df) + bad, bad
        for c in cols:
            seen.update(df[c].astype(str))
    return seen, rows, malformed


def read_matched(path) -> list[MatchedRecord]:
    with open(_need(path), newline="") as fh:
        return [MatchedRecord(r["household_id"], r["subscriber_id"], r["match_rule"])
                for r in csv.DictReader(fh)]


def ingest(cfg: RunConfig, force=False) -> dict:
    """Validate the survey and CDR files and match households to subscribers."""
    survey_path = _need(cfg.resolve("survey"))
    sd = StageDir(cfg, "ingest", force)
    households = read_survey(sd.read(survey_path))
    read_towers(sd.read(cfg.resolve("towers")), cfg.schema)
    seen, rows, malformed = _parties(cfg, sd)
    seen.discard("")
    matched = sorted(match_households(households, seen, cfg.seed), key=lambda m: m.household_id)
    with open(sd.path("matched.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["household_id", "subscriber_id", "match_rule"])
        w.writerows((m.household_id, m.subscriber_id, m.match_rule) for m in matched)
    hh = {h.household_id: h for h in households}
    report = {
        "households": len(households),
        "complete_households": sum(h.complete for h in households),
        "phone_owners": sum(h.owns_phone for h in households),
        "ultra_poor": sum(h.ultra_poor for h in households),
        "cdr_rows": rows, "malformed_rows": malformed,
        "matched": len(matched),
        "matched_ultra_poor": sum(hh[m.household_id].ultra_poor for m in matched),
        "match_rules": {r: sum(m.match_rule == r for m in matched)
                        for r in ("head", "random-member")},
    }
    sd.write_text("ingest_report.json", json.dumps(report, indent=1, sort_keys=True) + "\n")
    return sd.finish(report)


# ------------------------------------------------------------------- extract

def extract(cfg: RunConfig, force=False) -> dict:
    """Indicator matrix for the matched subscribers."""
    matched_path = _stage_path(cfg, "ingest", "matched.csv")
    matched = read_matched(matched_path)
    files = {k: _need(cfg.resolve(k)) for k in ("calls", "texts", "recharges", "towers")}
    sd = StageDir(cfg, "extract", force)
    sd.read(matched_path)
    for p in files.values():
        sd.read(p)
    icfg = IndicatorConfig.from_run_config(cfg)
    res = batch_extract([m.subscriber_id for m in matched], files["calls"], files["texts"],
                        files["recharges"], files["towers"], icfg, cfg.workers, cfg.schema)
    out = sd.path("indicators.csv")
    write_matrix(res, out, config_echo(icfg))
    sd.outputs.append(Path(str(out) + ".json"))
    return sd.finish({"subscribers": len(res.subscriber_ids), "indicators": len(res.names),
                      "absent_subscribers": len(res.absent_subscribers)})


# -------------------------------------------------------------------- wealth

def wealth(cfg: RunConfig, force=False) -> dict:
    """Asset index fitted on complete households, plus log consumption."""
    survey_path = _need(cfg.resolve("survey"))
    sd = StageDir(cfg, "wealth", force)
    households = read_survey(sd.read(survey_path))
    complete = [h for h in households if h.complete]
    model = fit_asset_index(asset_matrix(complete))
    sd.write_text("asset_model.json", model.to_json() + "\n")
    scores = model.score(np.nan_to_num(asset_matrix(households)))
    with open(sd.path("wealth.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["household_id", "asset_index", "log_consumption"])
        for h, s in zip(households, scores):
            w.writerow([h.household_id, _fmt(s) if h.assets is not None else "",
                        _fmt(log_consumption(h))])
    return sd.finish({"fitted_on": len(complete),
                      "explained_variance_ratio": model.explained_variance_ratio,
                      "dropped_assets": list(model.dropped)})


def read_wealth(path) -> dict:
    df = pd.read_csv(_need(path), dtype={"household_id": str}, float_precision="round_trip")
    return {hid: (a, c) for hid, a, c in zip(df["household_id"], df["asset_index"].astype(float),
                                             df["log_consumption"].astype(float))}


# --------------------------------------------------------------------- train

def model_spec(cfg: RunConfig, family: str) -> ModelSpec:
    if cfg.models.grid == "compact":
        return ModelSpec.compact(family)
    if cfg.models.grid == "full":
        return ModelSpec(family)
    raise StageError(f"unknown grid setting {cfg.models.grid!r}; use 'compact' or 'full'")


def _training_data(cfg, sd):
    survey = read_survey(sd.read(_need(cfg.resolve("survey"))))
    matched = read_matched(sd.read(_stage_path(cfg, "ingest", "matched.csv")))
    subs, names, X = read_matrix(sd.read(_stage_path(cfg, "extract", "indicators.csv")))
    wl = read_wealth(sd.read(_stage_path(cfg, "wealth", "wealth.csv")))
    hh = {h.household_id: h for h in survey}
    row = {s: i for i, s in enumerate(subs)}
    missing = [m.subscriber_id for m in matched if m.subscriber_id not in row]
    if missing:
        raise StageError(f"{len(missing)} matched subscribers absent from the indicator matrix; "
                         "rerun extract")
    X = X[[row[m.subscriber_id] for m in matched]]
    y = np.array([hh[m.household_id].ultra_poor for m in matched], dtype=float)
    A = np.array([wl[m.household_id][0] for m in matched])
    C = np.array([wl[m.household_id][1] for m in matched])
    return matched, names, X, y, A, C


def _family_seed(cfg, family):
    return _mix(cfg.seed, 3, FAMILIES.index(family))


def train(cfg: RunConfig, model: str | None = None, force=False) -> dict:
    """Nested-CV out-of-fold predictions, refitted models and combined methods.

    ``model`` picks one family, ``"all"`` trains ``models.families``; the
    default is ``models.cdr_family``. Combined methods are stacked on the
    ``cdr_family`` predictions whenever those are trained in this run.
    """
    families = (list(cfg.models.families) if model == "all"
                else [model or cfg.models.cdr_family])
    specs = {f: model_spec(cfg, f) for f in families}
    for stage in ("ingest", "extract", "wealth"):
        _need(_stage_path(cfg, stage, MANIFEST))
    sd = StageDir(cfg, "train", force)
    matched, names, X, y, A, C = _training_data(cfg, sd)
    ids = [m.household_id for m in matched]
    metrics = {"n": len(y), "positives": int(y.sum()), "families": {}}
    cvs = {}
    for fam in families:
        seed = _family_seed(cfg, fam)
        cv = nested_cv(specs[fam], X, y, None, cfg.models.outer_k, cfg.models.inner_k, seed,
                       names, cfg.workers)
        cv.check_out_of_fold(len(y))
        cvs[fam] = cv
        with open(sd.path(f"predictions_{fam}.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["household_id", "subscriber_id", "fold", "probability"])
            for m, f, p in zip(matched, cv.fold, cv.prediction):
                w.writerow([m.household_id, m.subscriber_id, int(f), repr(float(p))])
        full = refit_full(specs[fam], X, y, None, cfg.models.inner_k, seed, names)
        sd.write_text(f"model_{fam}.json", full.to_json() + "\n")
        fold_aucs = cv.fold_aucs(y)
        metrics["families"][fam] = {
            "pooled_auc": cv.auc(y),
            "fold_aucs": fold_aucs,
            "mean_fold_auc": float(np.nanmean(fold_aucs)),
            "chosen": cv.chosen, "inner_scores": cv.inner_scores,
            "refit_hyperparameters": full.hyperparameters,
            "top_features": full.top_features(10),
            "grid": specs[fam].grid,
        }
    metrics["single_source_auc"] = {
        "assets": _auc_or_none(-A, y), "consumption": _auc_or_none(-C, y)}
    cdr_fam = cfg.models.cdr_family
    if cdr_fam in cvs:
        metrics["single_source_auc"]["cdr"] = cvs[cdr_fam].auc(y)
        combos = {}
        for name, feats in COMBINED_VARIANTS.items():
            combos[name] = combined_method(A, C, cvs[cdr_fam], y, None, cfg.models.outer_k,
                                           _mix(cfg.seed, 4, len(combos)), feats)
        with open(sd.path("combined.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["household_id", *combos])
            for i, hid in enumerate(ids):
                w.writerow([hid, *(repr(float(c.prediction[i])) for c in combos.values())])
        metrics["combined_auc"] = {k: c.auc(y) for k, c in combos.items()}
    sd.write_text("metrics.json", json.dumps(metrics, indent=1, sort_keys=True) + "\n")
    return sd.finish({"families": {f: metrics["families"][f]["pooled_auc"] for f in families},
                      "combined_auc": metrics.get("combined_auc", {})})


def _auc_or_none(s, y):
    ok = np.isfinite(s)
    try:
        return weighted_auc(s[ok], y[ok])
    except UndefinedAUCError:
        return None


# ------------------------------------------------------------------ evaluate

def _method_scores(cfg, sd, households):
    wl = read_wealth(sd.read(_stage_path(cfg, "wealth", "wealth.csv")))
    fam = cfg.models.cdr_family
    pred = pd.read_csv(sd.read(_stage_path(cfg, "train", f"predictions_{fam}.csv")),
                       dtype={"household_id": str}, float_precision="round_trip")
    comb = pd.read_csv(sd.read(_stage_path(cfg, "train", "combined.csv")),
                       dtype={"household_id": str}, float_precision="round_trip")
    cdr = dict(zip(pred["household_id"], pred["probability"].astype(float)))
    scores = {
        "assets": ({h: wl[h][0] for h in households}, False),
        "consumption": ({h: wl[h][1] for h in households}, False),
        "cdr": (cdr, True),
    }
    for name in COMBINED_VARIANTS:
        scores[name] = (dict(zip(comb["household_id"], comb[name].astype(float))), True)
    return scores


def evaluate(cfg: RunConfig, force=False) -> dict:
    """Targeting reports for the matched, balanced and full panels."""
    fam = cfg.models.cdr_family
    for p in (_stage_path(cfg, "train", f"predictions_{fam}.csv"),
              _stage_path(cfg, "train", "combined.csv")):
        _need(p)
    sd = StageDir(cfg, "evaluate", force)
    households = read_survey(sd.read(_need(cfg.resolve("survey"))))
    hh = {h.household_id: h for h in households}
    matched = read_matched(sd.read(_stage_path(cfg, "ingest", "matched.csv")))
    scores = _method_scores(cfg, sd, hh)
    all_reports, panels = [], {}
    for si, name in enumerate(SAMPLES):
        sample = build_sample(name, households, matched, cfg.sample.phone_owner_share,
                              cfg.sample.quota_override.get(name))
        ids = list(sample.household_ids)
        labels = np.array([hh[h].ultra_poor for h in ids])
        methods = [targeting.TargetingMethod(m, [s.get(h, np.nan) for h in ids], hip)
                   for m, (s, hip) in scores.items()]
        pcfg = targeting.PanelConfig(order_draws=cfg.order_draws, bootstrap_b=cfg.bootstrap_b,
                                     seed=_mix(cfg.seed, 5, si))
        reports = targeting.evaluate_panel(sample, methods, labels, pcfg)
        for r in reports:
            sd.write_text(f"roc/{r.sample}_{r.method}_{r.policy}.csv", targeting.roc_csv(r))
        panels[name] = {"n": len(ids), "quota_fraction": sample.quota_fraction,
                        "reweighting": sample.reweighting,
                        "methods": sorted({r.method for r in reports}),
                        "reports": len(reports)}
        if name == "matched":
            sd.write_text("overlap.json", json.dumps(_overlaps(cfg, reports, labels), indent=1,
                                                     sort_keys=True) + "\n")
        all_reports += reports
    sd.write_text("reports.json", targeting.reports_json(all_reports) + "\n")
    sd.write_text("reports.csv", targeting.reports_csv(all_reports))
    return sd.finish({"panels": panels})


def _overlaps(cfg, reports, labels) -> dict:
    by = {r.method: r for r in reports}
    out = {"pairs": {}}
    for a, b in (("cdr", "assets"), ("cdr", "consumption"), ("assets", "consumption"),
                 ("assets", "cdr"), ("consumption", "cdr")):
        if a in by and b in by:
            out["pairs"][f"{a}|{b}"] = targeting.error_overlap(by[a], by[b])
    n_pos = int(np.sum(labels))
    out["independent_mc"] = {
        "inclusion_rate": 0.2, "exclusion_rate": 0.55, "trials": 100_000,
        **targeting.independent_overlap_mc(n_pos, len(labels) - n_pos, 0.2, 0.55, 100_000,
                                           _mix(cfg.seed, 6)),
    }
    return out


# ---------------------------------------------------------------------- cost

def cost_params(cfg: RunConfig) -> costmodel.CostParams:
    d = dict(cfg.cost)
    if "per_household" in d:
        d["per_household"] = {k: Decimal(str(v)) for k, v in d["per_household"].items()}
    if "benefit_each" in d:
        d["benefit_each"] = Decimal(str(d["benefit_each"]))
    return costmodel.CostParams(**d)


def cost(cfg: RunConfig, force=False) -> dict:
    params = cost_params(cfg)
    sd = StageDir(cfg, "cost", force)
    sd.write_text("cost_table.json", costmodel.cost_table_json(params) + "\n")
    sd.write_text("cost_table.csv", costmodel.cost_table_csv(params))
    return sd.finish({"rows": costmodel.cost_table(params)})


# ----------------------------------------------------------------- reproduce

def reproduce(cfg: RunConfig, force=False) -> dict:
    """Every stage in order, then a top-level manifest summarising the run."""
    stages = {
        "simulate": simulate(cfg, force),
        "ingest": ingest(cfg, force),
        "extract": extract(cfg, force),
        "wealth": wealth(cfg, force),
        "train": train(cfg, None, force),
        "evaluate": evaluate(cfg, force),
        "cost": cost(cfg, force),
    }
    out = Path(cfg.paths.output_dir)
    man = {
        "config_hash": cfg.config_hash(),
        "config": cfg.to_dict(),
        "versions": versions(),
        "stages": {k: {"outputs": v["outputs"], "summary": v["summary"]}
                   for k, v in stages.items()},
        "panels": stages["evaluate"]["summary"]["panels"],
    }
    (out / MANIFEST).write_text(json.dumps(man, indent=1, sort_keys=True) + "\n")
    return man


def run_stage(stage: str, cfg: RunConfig, force=False, model=None) -> dict:
    if stage == "train":
        return train(cfg, model, force)
    fn = {"simulate": simulate, "ingest": ingest, "extract": extract, "wealth": wealth,
          "evaluate": evaluate, "cost": cost, "reproduce": reproduce}[stage]
    return fn(cfg, force)
