"""Behavioral indicators from per-subscriber phone activity.

Indicator names follow ``family.metric.channel.daypart.weekpart.stat``. Every
communication indicator is recomputed on each of the nine (daypart, weekpart)
slices of the subscriber's calls and texts; recharge indicators are sliced by
weekpart only. The computation is vectorised over subscribers: all grouping is
done with sorts and ``bincount`` so a block of thousands of subscribers costs a
few dozen array passes.

Conventions
-----------
* Local time is UTC + ``timezone_offset_s``. "day" is ``[day_start_hour, day_end_hour)``.
* Within a subscriber, events are ordered by (timestamp, kind, direction,
  counterpart) with texts after calls and incoming before outgoing.
* A text conversation is a run of texts with one counterpart whose consecutive
  gaps are below ``conversation_gap_s``. Its initiator is the sender of the first
  text. A counterpart-initiated conversation is answered if it contains any
  outgoing text; the delay is the time from its first text to the first reply.
* Pareto shares count the fewest top contacts covering 80% of interactions (or
  of call time), divided by the number of contacts.
* Standard deviations use n-1 and are missing below two observations.
* Count indicators are 0 for an empty slice; everything else is missing. A
  subscriber without any event gets an all-missing vector.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data_model import CALL, OUTGOING, RECHARGE, TEXT, CdrEvent

SCHEMA_VERSION = "cdrtarget-indicators/1"

DAYPARTS = ("allday", "day", "night")
WEEKPARTS = ("allweek", "weekday", "weekend")
CHANNELS = ("call", "text", "combined")
SLICES = tuple((d, w) for d in DAYPARTS for w in WEEKPARTS)

EARTH_RADIUS_KM = 6371.0

# (family, metric, stats) computed for every channel in every slice
_PER_CHANNEL = (
    ("comm", "number_of_interactions", ("value",)),
    ("comm", "percent_initiated_interactions", ("value",)),
    ("comm", "interevent_time", ("mean", "std")),
    ("network", "number_of_contacts", ("value",)),
    ("network", "entropy_of_contacts", ("value",)),
    ("network", "interactions_per_contact", ("mean", "std")),
    ("network", "balance_of_contacts", ("mean", "std")),
    ("network", "percent_pareto_interactions", ("value",)),
)
# (family, metric, channel, stats) computed once per slice
_PER_SLICE = (
    ("comm", "call_duration", "call", ("mean", "std")),
    ("network", "percent_pareto_durations", "call", ("value",)),
    ("comm", "percent_initiated_conversations", "text", ("value",)),
    ("comm", "response_rate", "text", ("value",)),
    ("comm", "response_delay", "text", ("mean", "std")),
    ("comm", "active_days", "combined", ("value",)),
    ("spatial", "number_of_antennas", "call", ("value",)),
    ("spatial", "entropy_of_antennas", "call", ("value",)),
    ("spatial", "radius_of_gyration", "call", ("value",)),
)
_RECHARGE = (
    ("recharge", "number_of_recharges", ("value",)),
    ("recharge", "amount", ("mean", "std")),
    ("recharge", "time_between_recharges", ("mean", "std")),
)
COUNT_METRICS = frozenset({"number_of_interactions", "number_of_contacts", "active_days",
                           "number_of_antennas", "number_of_recharges"})


def indicator_names() -> list[str]:
    """Canonical, ordered indicator names."""
    names = []
    for dp, wp in SLICES:
        for ch in CHANNELS:
            for fam, metric, stats in _PER_CHANNEL:
                names += [f"{fam}.{metric}.{ch}.{dp}.{wp}.{s}" for s in stats]
        for fam, metric, ch, stats in _PER_SLICE:
            names += [f"{fam}.{metric}.{ch}.{dp}.{wp}.{s}" for s in stats]
    for wp in WEEKPARTS:
        for fam, metric, stats in _RECHARGE:
            names += [f"{fam}.{metric}.recharge.allday.{wp}.{s}" for s in stats]
    return names


@dataclass(frozen=True)
class IndicatorConfig:
    timezone_offset_s: float = 0.0
    day_start_hour: float = 7.0
    day_end_hour: float = 19.0
    weekend: tuple = (5, 6)  # Monday = 0
    conversation_gap_s: float = 3600.0
    pareto_share: float = 0.8

    @classmethod
    def from_run_config(cls, cfg) -> "IndicatorConfig":
        return cls(float(cfg.timezone_offset_s), float(cfg.day_start_hour),
                   float(cfg.day_end_hour), cfg.weekend_index, float(cfg.conversation_gap_s))


@dataclass(frozen=True)
class IndicatorVector:
    subscriber_id: str
    values: dict
    schema_version: str = SCHEMA_VERSION


@dataclass
class EventArrays:
    """Column-oriented events for a block of subscribers (codes 0..n_subscribers-1).

    ``cp`` and ``tower`` are integer codes whose order must follow the string
    order of the ids; ``tower`` is -1 when absent.
    """

    n_subscribers: int
    sub: np.ndarray
    ts: np.ndarray
    is_text: np.ndarray
    out: np.ndarray
    cp: np.ndarray
    dur: np.ndarray
    tower: np.ndarray
    lat: np.ndarray
    lon: np.ndarray
    r_sub: np.ndarray
    r_ts: np.ndarray
    r_amount: np.ndarray

    @classmethod
    def empty(cls, n_subscribers: int) -> "EventArrays":
        f = np.zeros(0)
        i = np.zeros(0, dtype=np.int64)
        b = np.zeros(0, dtype=bool)
        return cls(n_subscribers, i, f, b, b, i, f, i, f, f, i, f, f)


# ----------------------------------------------------------------- group helpers

def _safe_div(num, den):
    out = np.full(np.shape(num), np.nan)
    np.divide(num, den, out=out, where=den > 0)
    return out


def _group_mean_std(g, v, n):
    cnt = np.bincount(g, minlength=n).astype(float)
    mean = _safe_div(np.bincount(g, weights=v, minlength=n), cnt)
    dev = v - mean[g]
    ss = np.bincount(g, weights=dev * dev, minlength=n)
    std = np.full(n, np.nan)
    ok = cnt >= 2
    std[ok] = np.sqrt(ss[ok] / (cnt[ok] - 1))
    return mean, std


def _run_starts(*keys):
    """Boolean mask marking the first element of each run of equal key tuples."""
    m = len(keys[0])
    start = np.zeros(m, dtype=bool)
    if m:
        start[0] = True
        for k in keys:
            start[1:] |= k[1:] != k[:-1]
    return start


def _entropy(g, counts, n):
    tot = np.bincount(g, weights=counts, minlength=n).astype(float)
    p = counts / tot[g]
    ent = -np.bincount(g, weights=p * np.log(p), minlength=n).astype(float)
    ent[tot == 0] = np.nan
    return ent


def _pareto_counts(g, counts, n, share):
    """Share of contacts needed to cover ``share`` of integer counts."""
    order = np.lexsort((-counts, g))
    gs, cs = g[order], counts[order]
    tot = np.bincount(gs, weights=cs, minlength=n)
    csum = np.cumsum(cs)
    start = _run_starts(gs)
    offset = np.repeat(csum[start] - cs[start], np.diff(np.append(np.flatnonzero(start), len(gs))))
    cum = csum - offset
    num, den = _share_fraction(share)
    # exact integer comparison cum < share * total
    below = den * cum < num * tot[gs]
    npairs = np.bincount(gs, minlength=n)
    k = np.bincount(gs, weights=below, minlength=n) + 1
    return _safe_div(np.minimum(k, npairs), npairs.astype(float))


def _share_fraction(share):
    from fractions import Fraction
    f = Fraction(share).limit_denominator(1000)
    return f.numerator, f.denominator


def _pareto_float(g, values, n, share):
    """Float analogue of :func:`_pareto_counts`, with sequential per-group sums."""
    out = np.full(n, np.nan)
    if len(g) == 0:
        return out
    order = np.lexsort((-values, g))
    gs, vs = g[order], values[order]
    bounds = np.flatnonzero(_run_starts(gs))
    for a, b in zip(bounds, np.append(bounds[1:], len(gs))):
        cum = np.cumsum(vs[a:b])
        tot = cum[-1]
        if tot > 0:
            k = min(int(np.count_nonzero(cum < share * tot)) + 1, b - a)
            out[gs[a]] = k / (b - a)
    return out


def _haversine(lat1, lon1, lat2, lon2):
    p1, p2 = np.radians(lat1), np.radians(lat2)
    dphi = p2 - p1
    dlmb = np.radians(lon2 - lon1)
    h = np.sin(dphi / 2) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dlmb / 2) ** 2
    return 2 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))


# ------------------------------------------------------------------- core engine

def _slice_masks(ts, cfg: IndicatorConfig):
    local = ts + cfg.timezone_offset_s
    dayidx = np.floor(local / 86400.0)
    sod = local - dayidx * 86400.0
    is_day = (sod >= cfg.day_start_hour * 3600.0) & (sod < cfg.day_end_hour * 3600.0)
    weekday = ((dayidx.astype(np.int64) + 3) % 7)
    is_weekend = np.isin(weekday, cfg.weekend)
    allm = np.ones(len(ts), dtype=bool)
    dmask = {"allday": allm, "day": is_day, "night": ~is_day}
    wmask = {"allweek": allm, "weekday": ~is_weekend, "weekend": is_weekend}
    return dmask, wmask, dayidx


def compute_block(ev: EventArrays, cfg: IndicatorConfig | None = None) -> np.ndarray:
    """Indicator matrix (n_subscribers, n_indicators) for a block of subscribers."""
    cfg = cfg or IndicatorConfig()
    n = ev.n_subscribers
    names = indicator_names()
    res: dict[str, np.ndarray] = {}

    order = np.lexsort((ev.cp, ev.out, ev.is_text, ev.ts, ev.sub))
    sub, ts, is_text, out = ev.sub[order], ev.ts[order], ev.is_text[order], ev.out[order]
    cp, dur, tower = ev.cp[order], ev.dur[order], ev.tower[order]
    lat, lon = ev.lat[order], ev.lon[order]
    dmask, wmask, dayidx = _slice_masks(ts, cfg)
    chmask = {"call": ~is_text, "text": is_text, "combined": np.ones(len(ts), dtype=bool)}
    outf = out.astype(float)

    for dp, wp in SLICES:
        smask = dmask[dp] & wmask[wp]
        tag = f"{dp}.{wp}"
        for ch in CHANNELS:
            m = smask & chmask[ch]
            g, t, o, c = sub[m], ts[m], outf[m], cp[m]
            cnt = np.bincount(g, minlength=n).astype(float)
            res[f"comm.number_of_interactions.{ch}.{tag}.value"] = cnt
            res[f"comm.percent_initiated_interactions.{ch}.{tag}.value"] = _safe_div(
                np.bincount(g, weights=o, minlength=n), cnt)

            same = g[1:] == g[:-1]
            mean, std = _group_mean_std(g[1:][same], (t[1:] - t[:-1])[same], n)
            res[f"comm.interevent_time.{ch}.{tag}.mean"] = mean
            res[f"comm.interevent_time.{ch}.{tag}.std"] = std

            po = np.lexsort((c, g))
            gp, cpp, op = g[po], c[po], o[po]
            pstart = _run_starts(gp, cpp)
            pid = np.cumsum(pstart) - 1
            pair_cnt = np.bincount(pid).astype(float) if len(pid) else np.zeros(0)
            pair_out = np.bincount(pid, weights=op) if len(pid) else np.zeros(0)
            pair_g = gp[pstart]
            res[f"network.number_of_contacts.{ch}.{tag}.value"] = np.bincount(
                pair_g, minlength=n).astype(float)
            res[f"network.entropy_of_contacts.{ch}.{tag}.value"] = _entropy(pair_g, pair_cnt, n)
            mean, std = _group_mean_std(pair_g, pair_cnt, n)
            res[f"network.interactions_per_contact.{ch}.{tag}.mean"] = mean
            res[f"network.interactions_per_contact.{ch}.{tag}.std"] = std
            mean, std = _group_mean_std(pair_g, pair_out / pair_cnt if len(pair_cnt) else pair_cnt, n)
            res[f"network.balance_of_contacts.{ch}.{tag}.mean"] = mean
            res[f"network.balance_of_contacts.{ch}.{tag}.std"] = std
            res[f"network.percent_pareto_interactions.{ch}.{tag}.value"] = _pareto_counts(
                pair_g, pair_cnt, n, cfg.pareto_share)

            if ch == "call":
                mean, std = _group_mean_std(g, dur[m], n)
                res[f"comm.call_duration.call.{tag}.mean"] = mean
                res[f"comm.call_duration.call.{tag}.std"] = std
                pair_dur = np.bincount(pid, weights=dur[m][po]) if len(pid) else np.zeros(0)
                res[f"network.percent_pareto_durations.call.{tag}.value"] = _pareto_float(
                    pair_g, pair_dur, n, cfg.pareto_share)
                _spatial(res, tag, g, tower[m], lat[m], lon[m], n)
            elif ch == "text":
                _conversations(res, tag, g, t, out[m], c, np.flatnonzero(m), n, cfg)
            else:
                d = dayidx[m]
                res[f"comm.active_days.combined.{tag}.value"] = np.bincount(
                    g[_run_starts(g, d)], minlength=n).astype(float)

    r_order = np.lexsort((ev.r_amount, ev.r_ts, ev.r_sub))
    rg, rts, ram = ev.r_sub[r_order], ev.r_ts[r_order], ev.r_amount[r_order]
    _, rw, _ = _slice_masks(rts, cfg)
    for wp in WEEKPARTS:
        m = rw[wp]
        g, t, a = rg[m], rts[m], ram[m]
        res[f"recharge.number_of_recharges.recharge.allday.{wp}.value"] = np.bincount(
            g, minlength=n).astype(float)
        mean, std = _group_mean_std(g, a, n)
        res[f"recharge.amount.recharge.allday.{wp}.mean"] = mean
        res[f"recharge.amount.recharge.allday.{wp}.std"] = std
        same = g[1:] == g[:-1]
        mean, std = _group_mean_std(g[1:][same], (t[1:] - t[:-1])[same], n)
        res[f"recharge.time_between_recharges.recharge.allday.{wp}.mean"] = mean
        res[f"recharge.time_between_recharges.recharge.allday.{wp}.std"] = std

    mat = np.column_stack([res[k] for k in names]) if n else np.zeros((0, len(names)))
    active = (np.bincount(ev.sub, minlength=n) + np.bincount(ev.r_sub, minlength=n)) > 0
    mat[~active] = np.nan
    return mat


def _spatial(res, tag, g, tower, lat, lon, n):
    has = tower >= 0
    gt, tt = g[has], tower[has]
    po = np.lexsort((tt, gt))
    gs, ts_ = gt[po], tt[po]
    start = _run_starts(gs, ts_)
    pid = np.cumsum(start) - 1
    cnt = np.bincount(pid).astype(float) if len(pid) else np.zeros(0)
    pg = gs[start]
    res[f"spatial.number_of_antennas.call.{tag}.value"] = np.bincount(pg, minlength=n).astype(float)
    res[f"spatial.entropy_of_antennas.call.{tag}.value"] = _entropy(pg, cnt, n)

    loc = has & ~np.isnan(lat) & ~np.isnan(lon)
    gl, la, lo = g[loc], lat[loc], lon[loc]
    k = np.bincount(gl, minlength=n).astype(float)
    mla = _safe_div(np.bincount(gl, weights=la, minlength=n), k)
    mlo = _safe_div(np.bincount(gl, weights=lo, minlength=n), k)
    d = _haversine(la, lo, mla[gl], mlo[gl]) if len(gl) else np.zeros(0)
    rog = np.sqrt(_safe_div(np.bincount(gl, weights=d * d, minlength=n), k))
    # one distinct location means zero spread, regardless of rounding in the mean
    lamin = np.full(n, np.inf)
    lamax = np.full(n, -np.inf)
    lomin, lomax = lamin.copy(), lamax.copy()
    np.minimum.at(lamin, gl, la)
    np.maximum.at(lamax, gl, la)
    np.minimum.at(lomin, gl, lo)
    np.maximum.at(lomax, gl, lo)
    rog[(k > 0) & (lamin == lamax) & (lomin == lomax)] = 0.0
    res[f"spatial.radius_of_gyration.call.{tag}.value"] = rog


def _conversations(res, tag, g, t, out, c, pos, n, cfg):
    co = np.lexsort((pos, t, c, g))
    gs, tsc, oc, cc = g[co], t[co], out[co], c[co]
    new = _run_starts(gs, cc)
    if len(tsc):
        new[1:] |= (tsc[1:] - tsc[:-1]) >= cfg.conversation_gap_s
    cid = np.cumsum(new) - 1
    starts = np.flatnonzero(new)
    conv_g = gs[starts]
    init = oc[starts]
    if len(starts):
        any_out = np.bincount(cid, weights=oc) > 0
        first_out = np.minimum.reduceat(np.where(oc, tsc, np.inf), starts)
    else:
        any_out = np.zeros(0, dtype=bool)
        first_out = np.zeros(0)
    nconv = np.bincount(conv_g, minlength=n).astype(float)
    res[f"comm.percent_initiated_conversations.text.{tag}.value"] = _safe_div(
        np.bincount(conv_g, weights=init, minlength=n), nconv)
    theirs = ~init
    res[f"comm.response_rate.text.{tag}.value"] = _safe_div(
        np.bincount(conv_g, weights=theirs & any_out, minlength=n),
        np.bincount(conv_g, weights=theirs, minlength=n))
    answered = theirs & any_out
    mean, std = _group_mean_std(conv_g[answered], (first_out - tsc[starts])[answered], n)
    res[f"comm.response_delay.text.{tag}.mean"] = mean
    res[f"comm.response_delay.text.{tag}.std"] = std


# ------------------------------------------------------------------ event input

def _codes(values):
    uniq = sorted(set(values))
    lookup = {v: i for i, v in enumerate(uniq)}
    return np.array([lookup[v] for v in values], dtype=np.int64), uniq


def arrays_from_events(events: Sequence[CdrEvent], subscriber_ids: Sequence[str]) -> EventArrays:
    """Columnar form of CdrEvent objects for the given subscribers (others ignored)."""
    index = {s: i for i, s in enumerate(subscriber_ids)}
    comm = [e for e in events if e.kind != RECHARGE and e.subscriber_id in index]
    rech = [e for e in events if e.kind == RECHARGE and e.subscriber_id in index]
    cp, _ = _codes([e.counterpart_id or "" for e in comm])
    tw_ids = [e.tower_id for e in comm]
    tw_codes, uniq = _codes([t for t in tw_ids if t is not None])
    tw_lookup = {t: i for i, t in enumerate(uniq)}
    nan = float("nan")
    return EventArrays(
        n_subscribers=len(subscriber_ids),
        sub=np.array([index[e.subscriber_id] for e in comm], dtype=np.int64),
        ts=np.array([e.timestamp for e in comm], dtype=float),
        is_text=np.array([e.kind == TEXT for e in comm], dtype=bool),
        out=np.array([e.direction == OUTGOING for e in comm], dtype=bool),
        cp=cp,
        dur=np.array([e.duration_s if e.kind == CALL else nan for e in comm], dtype=float),
        tower=np.array([tw_lookup[t] if t is not None else -1 for t in tw_ids], dtype=np.int64),
        lat=np.array([nan if e.tower_lat is None else e.tower_lat for e in comm], dtype=float),
        lon=np.array([nan if e.tower_lon is None else e.tower_lon for e in comm], dtype=float),
        r_sub=np.array([index[e.subscriber_id] for e in rech], dtype=np.int64),
        r_ts=np.array([e.timestamp for e in rech], dtype=float),
        r_amount=np.array([e.amount for e in rech], dtype=float),
    )


def compute_indicators(events: Sequence[CdrEvent], config: IndicatorConfig | None = None,
                       subscriber_id: str | None = None) -> IndicatorVector:
    """Full indicator suite for one subscriber's events (any order)."""
    events = list(events)
    if subscriber_id is None:
        ids = {e.subscriber_id for e in events}
        if len(ids) > 1:
            raise ValueError("events belong to several subscribers; pass subscriber_id")
        subscriber_id = ids.pop() if ids else ""
    ev = arrays_from_events(events, [subscriber_id])
    row = compute_block(ev, config)[0]
    return IndicatorVector(subscriber_id, dict(zip(indicator_names(), row.tolist())))
