"""Batch indicator extraction from CDR files into a wide CSV matrix."""

from __future__ import annotations

import json
import logging
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from .data_model import CDR_COLUMNS, TOWER_COLUMNS, SchemaError
from .indicators import (SCHEMA_VERSION, EventArrays, IndicatorConfig, compute_block,
                         indicator_names)

log = logging.getLogger(__name__)

# subscribers per block; fixed so block boundaries never depend on the worker count
BLOCK_SIZE = 512


@dataclass
class ExtractResult:
    subscriber_ids: list
    names: list
    matrix: np.ndarray
    malformed_rows: dict = field(default_factory=dict)
    absent_subscribers: list = field(default_factory=list)

    def missing_rates(self) -> dict:
        if not len(self.subscriber_ids):
            return {k: 1.0 for k in self.names}
        rates = np.isnan(self.matrix).mean(axis=0)
        return dict(zip(self.names, rates.tolist()))

    def frame(self) -> pd.DataFrame:
        df = pd.DataFrame(self.matrix, columns=self.names)
        df.insert(0, "subscriber_id", self.subscriber_ids)
        return df


def _parse_float(v) -> float:
    try:
        return float(v)
    except ValueError:
        return np.nan


def _to_float(col: pd.Series) -> np.ndarray:
    """Exact decimal parsing (pandas' fast parser can be off by an ulp)."""
    arr = col.to_numpy(dtype=object)
    try:
        return arr.astype(float)
    except ValueError:
        return np.array([_parse_float(v) for v in arr], dtype=float)


def _read(path, kind: str, schema: dict | None) -> tuple[pd.DataFrame, int]:
    cols = CDR_COLUMNS[kind] if kind in CDR_COLUMNS else TOWER_COLUMNS
    schema = schema or {}
    df = pd.read_csv(path, dtype=str, keep_default_na=False)
    rename = {schema.get(c, c): c for c in cols}
    missing = [src for src, c in rename.items() if src not in df.columns]
    if missing:
        raise SchemaError(f"{path}: missing required column(s) {missing}")
    df = df.rename(columns=rename)[list(cols)]
    bad = np.zeros(len(df), dtype=bool)
    for c in cols:
        if c in ("ts", "duration", "amount", "lat", "lon"):
            num = _to_float(df[c])
            bad |= ~np.isfinite(num)
            df[c] = num
        elif c != "tower":
            bad |= (df[c].str.strip() == "").to_numpy()
    if "duration" in cols:
        bad |= (df["duration"] < 0).to_numpy()
    if "amount" in cols:
        bad |= ~(df["amount"] > 0).to_numpy()
    n_bad = int(bad.sum())
    if n_bad:
        log.warning("%s: %d malformed row(s) skipped", path, n_bad)
    return df[~bad], n_bad


def _comm_frame(df: pd.DataFrame, a: str, b: str, subs: pd.Index, is_text: bool) -> pd.DataFrame:
    """One row per (row, matched party): the party's view of the interaction."""
    parts = []
    for me, other, out in ((a, b, True), (b, a, False)):
        m = df[me].isin(subs)
        part = pd.DataFrame({
            "sub": df.loc[m, me].to_numpy(),
            "cp": df.loc[m, other].to_numpy(),
            "ts": df.loc[m, "ts"].to_numpy(dtype=float),
            "out": out,
            "is_text": is_text,
            "dur": df.loc[m, "duration"].to_numpy(dtype=float) if not is_text else np.nan,
            "tower": df.loc[m, "tower"].to_numpy() if not is_text else "",
        })
        parts.append(part)
    return pd.concat(parts, ignore_index=True)


def _block_task(args):
    ev, cfg = args
    return compute_block(ev, cfg)


def batch_extract(subscribers: Sequence[str], calls=None, texts=None, recharges=None,
                  towers=None, config: IndicatorConfig | None = None, workers: int = 1,
                  schema: dict | None = None) -> ExtractResult:
    """Indicators for every subscriber in ``subscribers``, rows sorted by id.

    Any of the file paths may be None (treated as an empty file). Subscribers
    without a single event get an all-missing row and a warning.
    """
    cfg = config or IndicatorConfig()
    ids = sorted(set(subscribers))
    subs = pd.Index(ids)
    malformed = {}
    frames = []
    if calls is not None:
        df, malformed["calls"] = _read(calls, "call", schema)
        frames.append(_comm_frame(df, "caller", "callee", subs, False))
    if texts is not None:
        df, malformed["texts"] = _read(texts, "text", schema)
        frames.append(_comm_frame(df, "sender", "recipient", subs, True))
    comm = (pd.concat(frames, ignore_index=True) if frames else
            pd.DataFrame({"sub": [], "cp": [], "ts": [], "out": [], "is_text": [],
                          "dur": [], "tower": []}))
    if recharges is not None:
        rdf, malformed["recharges"] = _read(recharges, "recharge", schema)
        rdf = rdf[rdf["subscriber"].isin(subs)]
    else:
        rdf = pd.DataFrame({"subscriber": [], "ts": [], "amount": []})
    tower_xy = {}
    if towers is not None:
        tdf, malformed["towers"] = _read(towers, "tower", schema)
        tower_xy = dict(zip(tdf["tower"], zip(tdf["lat"], tdf["lon"])))

    sub_code = subs.get_indexer(comm["sub"]).astype(np.int64)
    cp_code = pd.factorize(comm["cp"].astype(str), sort=True)[0].astype(np.int64)
    tw = comm["tower"].fillna("").astype(str)
    tw_code = pd.factorize(tw, sort=True)[0].astype(np.int64)
    tw_uniq = pd.factorize(tw, sort=True)[1]
    empty_code = tw_uniq.get_loc("") if "" in tw_uniq else -2
    tw_code[tw_code == empty_code] = -1
    lat = np.array([tower_xy.get(t, (np.nan, np.nan))[0] for t in tw_uniq] + [np.nan])
    lon = np.array([tower_xy.get(t, (np.nan, np.nan))[1] for t in tw_uniq] + [np.nan])
    ev_lat, ev_lon = lat[tw_code], lon[tw_code]  # -1 indexes the trailing NaN
    r_code = subs.get_indexer(rdf["subscriber"]).astype(np.int64)

    full = EventArrays(
        len(ids), sub_code, comm["ts"].to_numpy(dtype=float),
        comm["is_text"].to_numpy(dtype=bool), comm["out"].to_numpy(dtype=bool), cp_code,
        comm["dur"].to_numpy(dtype=float), tw_code, ev_lat, ev_lon,
        r_code, rdf["ts"].to_numpy(dtype=float), rdf["amount"].to_numpy(dtype=float))
    blocks = list(_split_blocks(full, BLOCK_SIZE))
    if workers > 1 and len(blocks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            mats = list(pool.map(_block_task, [(b, cfg) for b in blocks]))
    else:
        mats = [compute_block(b, cfg) for b in blocks]
    names = indicator_names()
    matrix = np.vstack(mats) if mats else np.zeros((0, len(names)))

    active = np.zeros(len(ids), dtype=bool)
    active[np.unique(sub_code)] = True
    active[np.unique(r_code)] = True
    absent = [s for s, a in zip(ids, active) if not a]
    if absent:
        warnings.warn(f"{len(absent)} matched subscriber(s) have no CDR events; "
                      "their indicator rows are all missing", RuntimeWarning)
    return ExtractResult(ids, names, matrix, malformed, absent)


def _split_blocks(ev: EventArrays, size: int):
    n = ev.n_subscribers
    c_order = np.argsort(ev.sub, kind="stable")
    r_order = np.argsort(ev.r_sub, kind="stable")
    c_bounds = np.searchsorted(ev.sub[c_order], np.arange(0, n + size, size))
    r_bounds = np.searchsorted(ev.r_sub[r_order], np.arange(0, n + size, size))
    for i, lo in enumerate(range(0, n, size)):
        hi = min(lo + size, n)
        ci = c_order[c_bounds[i]:c_bounds[i + 1]]
        ri = r_order[r_bounds[i]:r_bounds[i + 1]]
        yield EventArrays(
            hi - lo, ev.sub[ci] - lo, ev.ts[ci], ev.is_text[ci], ev.out[ci], ev.cp[ci],
            ev.dur[ci], ev.tower[ci], ev.lat[ci], ev.lon[ci],
            ev.r_sub[ri] - lo, ev.r_ts[ri], ev.r_amount[ri])


def _cell(v: float) -> str:
    return "" if v != v else repr(v)


def write_matrix(result: ExtractResult, path, config_echo: dict | None = None):
    """Wide CSV (empty cell = missing) plus ``<path>.json`` sidecar."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        fh.write(",".join(["subscriber_id", *result.names]) + "\n")
        for sid, row in zip(result.subscriber_ids, result.matrix.tolist()):
            fh.write(sid + "," + ",".join(map(_cell, row)) + "\n")
    sidecar = {
        "schema_version": SCHEMA_VERSION,
        "n_subscribers": len(result.subscriber_ids),
        "n_indicators": len(result.names),
        "config": config_echo or {},
        "malformed_rows": result.malformed_rows,
        "absent_subscribers": result.absent_subscribers,
        "missing_rates": result.missing_rates(),
    }
    with open(str(path) + ".json", "w") as fh:
        json.dump(sidecar, fh, indent=1, sort_keys=True)


def read_matrix(path) -> tuple[list, list, np.ndarray]:
    df = pd.read_csv(path, dtype={"subscriber_id": str}, keep_default_na=True,
                     float_precision="round_trip")
    return (df["subscriber_id"].tolist(), list(df.columns[1:]),
            df.iloc[:, 1:].to_numpy(dtype=float))


def config_echo(cfg: IndicatorConfig) -> dict:
    d = asdict(cfg)
    d["weekend"] = list(d["weekend"])
    return d
