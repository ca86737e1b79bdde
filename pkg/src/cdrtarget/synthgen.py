"""Seeded synthetic villages, surveys and CDR with known latent wealth.

The generator works in four stages, each drawing from its own child seed:

1. ``generate_population``: villages of households with latent wealth, assets,
   consumption, the community-ranking flag (bottom quantile within the village),
   six wealth-dependent deprivation criteria and the derived ultra-poor label.
2. ``draw_survey``: a stratified survey that oversamples the ultra-poor; weights
   are stratum population over stratum sample size.
3. ``assign_phones``: phone ownership decreasing with poverty, and the subset of
   owners whose phone is on the data-providing operator. Exact target counts are
   met by weighted sampling without replacement.
4. ``generate_cdr``: Poisson activity per subscriber with wealth-dependent rates,
   log-normal call durations, per-subscriber contact pools, per-village towers.

Distributional forms are artifact choices; only the calibration targets
(shares and counts) come from the survey design being mimicked. Latent wealth
goes to a side file used by tests only.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .data_model import N_ASSETS, N_CRITERIA, Household, write_survey
from .wealth import ultra_poor_rule

WINDOW_START = 1446336000  # 2015-11-01T00:00:00Z
WINDOW_END = 1462060800    # 2016-05-01T00:00:00Z
RECHARGE_DENOMINATIONS = (25.0, 50.0, 100.0, 200.0, 500.0)


def _default_asset_loadings():
    return [0.9, 0.85, 0.8, 0.8, 0.75, 0.7, 0.7, 0.65, 0.6, 0.6, 0.55, 0.5, 0.6, 0.5, 0.45, 0.4]


def _default_asset_thresholds():
    return [0.3, 0.0, 0.5, -0.2, 0.8, 0.2, 1.0, -0.5, 0.4, 1.2, 0.0, 0.6, 0.0, 0.0, 0.0, 0.0]


@dataclass
class GeneratorConfig:
    rng_seed: int = 2015
    n_villages: int = 80
    households_per_village: int = 280
    wealth_mean: float = 0.0
    wealth_sd: float = 1.0
    village_effect_sd: float = 0.3
    cwr_quantile: float = 0.43
    # ranking and criteria see rho * wealth + sqrt(1 - rho^2) * u, u unobserved elsewhere
    label_wealth_corr: float = 0.62
    # deprivation criterion j holds with probability sigmoid(a_j - b_j * wealth)
    criteria_intercepts: list = field(default_factory=lambda: [-2.8] * N_CRITERIA)
    criteria_wealth_slope: list = field(default_factory=lambda: [1.3] * N_CRITERIA)
    # assets 1-12 binary: 1[l*z + sqrt(1-l^2)*e > t]; assets 13-16 Poisson counts
    asset_loadings: list = field(default_factory=_default_asset_loadings)
    asset_thresholds: list = field(default_factory=_default_asset_thresholds)
    n_binary_assets: int = 12
    consumption_intercept: float = 7.6
    consumption_slope: float = 0.55
    consumption_noise_sd: float = 0.5
    # survey design
    n_survey_up: int = 1173
    n_survey_nup: int = 1679
    n_incomplete: int = 38
    # phones: P(own) = sigmoid(intercept + slope * wealth)
    phone_intercept: float = 1.6
    phone_wealth_slope: float = 1.0
    n_no_phone: int | None = 472
    n_matched: int | None = 535
    n_matched_up: int | None = 146
    network_intercept: float = -1.2
    network_wealth_slope: float = 0.6
    head_phone_prob: float = 0.96
    extra_phone_prob: float = 0.08
    second_network_phone_prob: float = 0.25
    # CDR activity: expected count over the window = base * exp(slope*z) / mean(exp(slope*z))
    base_calls: float = 581.1
    base_texts: float = 571.5
    base_recharges: float = 24.1
    calls_wealth_slope: float = 0.5
    texts_wealth_slope: float = 0.6
    recharges_wealth_slope: float = 0.5
    outgoing_intercept: float = 0.0
    outgoing_wealth_slope: float = 0.5
    duration_log_mean: float = 4.0
    duration_wealth_slope: float = 0.25
    duration_log_sd: float = 1.0
    contacts_log_mean: float = 2.3
    contacts_wealth_slope: float = 0.5
    text_burst_mean: float = 2.5
    text_reply_gap_s: float = 300.0
    text_reply_prob: float = 0.7
    night_share: float = 0.25
    night_wealth_slope: float = 0.3
    n_towers_per_village: int = 6
    mobility_intercept: float = -1.0
    mobility_wealth_slope: float = 0.8
    recharge_wealth_tilt: float = 0.8
    window_start: int = WINDOW_START
    window_end: int = WINDOW_END
    aux_wealth_slope: float = 0.4
    # subscriber-level heterogeneity: a shared log-activity effect, and private
    # noise added to wealth separately for each behavioural propensity
    activity_sd: float = 0.6
    behavior_noise_sd: float = 1.0

    def __post_init__(self):
        if not self.window_start < self.window_end:
            raise ValueError("window start must precede window end")
        for name in ("base_calls", "base_texts", "base_recharges"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not -1 <= self.label_wealth_corr <= 1:
            raise ValueError("label_wealth_corr must lie in [-1, 1]")
        if not 0 < self.cwr_quantile < 1:
            raise ValueError("cwr_quantile must lie in (0, 1)")
        if len(self.asset_loadings) != N_ASSETS or len(self.asset_thresholds) != N_ASSETS:
            raise ValueError(f"asset parameters need {N_ASSETS} entries")
        if len(self.criteria_intercepts) != N_CRITERIA or len(self.criteria_wealth_slope) != N_CRITERIA:
            raise ValueError(f"criteria parameters need {N_CRITERIA} entries")

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        """Fields by name; an optional ``scenario`` key applies a preset first."""
        d = dict(d)
        name = d.pop("scenario", "default")
        if name not in SCENARIOS:
            raise ValueError(f"unknown scenario {name!r}; expected one of {sorted(SCENARIOS)}")
        return cls(**{**SCENARIOS[name], **d})


SCENARIOS = {
    "default": {},
    # phone ownership falls with wealth and every owner is on the CDR network,
    # so no-phone households are mostly poor and coverage is high
    "poor_few_phones": {
        "n_survey_up": 600, "n_survey_nup": 860, "n_no_phone": None, "n_matched": None,
        "n_matched_up": None, "phone_intercept": 1.0, "phone_wealth_slope": 0.7,
        "network_intercept": 6.0,
    },
}


@dataclass
class Population:
    households: list
    wealth: dict  # household_id -> latent wealth


@dataclass
class Bundle:
    survey: list
    wealth: dict
    subscriber_of: dict  # phone id -> household id, phones with CDR only
    calls: np.ndarray
    texts: np.ndarray
    recharges: np.ndarray
    towers: dict
    config: GeneratorConfig


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _child(seed: int, *path) -> np.random.Generator:
    return np.random.default_rng([seed, *path])


def _weighted_sample(rng, weights, k):
    """Indices of ``k`` items drawn without replacement, P proportional to weight."""
    w = np.asarray(weights, dtype=float)
    if k > len(w):
        raise ValueError(f"cannot draw {k} from {len(w)} candidates")
    keys = np.log(rng.random(len(w))) / np.maximum(w, 1e-300)
    return np.sort(np.argsort(-keys, kind="stable")[:k])


# ------------------------------------------------------------------ population

def generate_population(config: GeneratorConfig) -> Population:
    """Full village populations, unit weight, no phones yet."""
    c = config
    households = []
    wealth = {}
    crit_a = np.asarray(c.criteria_intercepts, dtype=float)
    crit_b = np.asarray(c.criteria_wealth_slope, dtype=float)
    load = np.asarray(c.asset_loadings, dtype=float)
    thr = np.asarray(c.asset_thresholds, dtype=float)
    nb = c.n_binary_assets
    for v in range(c.n_villages):
        rng = _child(c.rng_seed, 1, v)
        n = c.households_per_village
        z = (c.wealth_mean + rng.normal(0, c.village_effect_sd)
             + c.wealth_sd * rng.standard_normal(n))
        rho = c.label_wealth_corr
        zl = rho * z + math.sqrt(1 - rho * rho) * rng.standard_normal(n)
        # bottom quantile of the village, exact count
        n_cwr = int(math.floor(c.cwr_quantile * n + 0.5))
        cwr = np.zeros(n, dtype=bool)
        cwr[np.argsort(zl, kind="stable")[:n_cwr]] = True
        crit = rng.random((n, N_CRITERIA)) < _sigmoid(crit_a - crit_b * zl[:, None])
        eps = rng.standard_normal((n, N_ASSETS))
        latent = load * z[:, None] + np.sqrt(np.clip(1 - load ** 2, 0, None)) * eps
        assets = np.empty((n, N_ASSETS))
        assets[:, :nb] = (latent[:, :nb] > thr[:nb]).astype(float)
        assets[:, nb:] = rng.poisson(np.exp(0.3 * latent[:, nb:] + thr[nb:]))
        logc = (c.consumption_intercept + c.consumption_slope * z
                + c.consumption_noise_sd * rng.standard_normal(n))
        aux = c.aux_wealth_slope * z[:, None] + rng.standard_normal((n, 3))
        for i in range(n):
            hid = f"H{v:02d}{i:04d}"
            criteria = tuple(bool(x) for x in crit[i])
            households.append(Household(
                household_id=hid, village_id=f"V{v:02d}",
                assets=tuple(float(a) for a in assets[i]),
                consumption_pc_monthly=round(float(math.exp(logc[i])), 2),
                cwr_extreme_poor=bool(cwr[i]), criteria=criteria,
                ultra_poor=ultra_poor_rule(bool(cwr[i]), criteria),
                food_sec=round(float(aux[i, 0]), 6), fin_incl=round(float(aux[i, 1]), 6),
                psych=round(float(aux[i, 2]), 6)))
            wealth[hid] = float(z[i])
    return Population(households, wealth)


def draw_survey(pop: Population, config: GeneratorConfig) -> list:
    """Stratified survey of ultra-poor and other households with design weights."""
    c = config
    rng = _child(c.rng_seed, 2)
    up = [i for i, h in enumerate(pop.households) if h.ultra_poor]
    nup = [i for i, h in enumerate(pop.households) if not h.ultra_poor]
    n_up = min(c.n_survey_up, len(up))
    n_nup = min(c.n_survey_nup, len(nup))
    take_up = np.sort(rng.choice(up, n_up, replace=False)) if n_up else np.array([], int)
    take_nup = np.sort(rng.choice(nup, n_nup, replace=False)) if n_nup else np.array([], int)
    w_up = len(up) / n_up if n_up else 1.0
    w_nup = len(nup) / n_nup if n_nup else 1.0
    chosen = sorted([(int(i), w_up) for i in take_up] + [(int(i), w_nup) for i in take_nup])
    survey = [replace(pop.households[i], sample_weight=float(w)) for i, w in chosen]
    if c.n_incomplete:
        drop = rng.choice(len(survey), min(c.n_incomplete, len(survey)), replace=False)
        for j, d in enumerate(sorted(drop)):
            h = survey[d]
            survey[d] = (replace(h, assets=None) if j % 2 == 0
                         else replace(h, consumption_pc_monthly=None))
    return survey


def assign_phones(survey: Sequence[Household], wealth: dict, config: GeneratorConfig):
    """Return (households with phones, network phone -> household id)."""
    c = config
    rng = _child(c.rng_seed, 3)
    n = len(survey)
    z = np.array([wealth[h.household_id] for h in survey])
    complete = np.array([h.complete for h in survey])
    p_own = _sigmoid(c.phone_intercept + c.phone_wealth_slope * z)
    owns = rng.random(n) < p_own
    if c.n_no_phone is not None:
        idx = np.flatnonzero(complete)
        none = idx[_weighted_sample(rng, 1 - p_own[idx], c.n_no_phone)]
        owns[idx] = True
        owns[none] = False

    network = np.zeros(n, dtype=bool)
    cand = np.flatnonzero(owns & complete)
    p_net = _sigmoid(c.network_intercept + c.network_wealth_slope * z)
    if c.n_matched is None:
        network[cand] = rng.random(len(cand)) < p_net[cand]
    elif c.n_matched_up is None:
        network[cand[_weighted_sample(rng, p_net[cand], c.n_matched)]] = True
    else:
        up = np.array([survey[i].ultra_poor for i in cand])
        cu, cn = cand[up], cand[~up]
        network[cu[_weighted_sample(rng, p_net[cu], c.n_matched_up)]] = True
        network[cn[_weighted_sample(rng, p_net[cn], c.n_matched - c.n_matched_up)]] = True

    out = []
    subscriber_of = {}
    for i, h in enumerate(survey):
        if not owns[i]:
            out.append(h)
            continue
        k = 1 + int(rng.binomial(2, c.extra_phone_prob))
        phones = tuple(f"P{h.household_id[1:]}{j}" for j in range(k))
        head = phones[0] if rng.random() < c.head_phone_prob else None
        if network[i]:
            subscriber_of[phones[0] if head is not None or k == 1 else phones[1]] = h.household_id
            if k > 1 and rng.random() < c.second_network_phone_prob:
                subscriber_of[phones[-1]] = h.household_id
        out.append(replace(h, phone_numbers=phones, head_phone=head))
    return out, subscriber_of


# -------------------------------------------------------------------------- CDR

def village_towers(config: GeneratorConfig) -> dict:
    rng = _child(config.rng_seed, 4)
    towers = {}
    for v in range(config.n_villages):
        clat = 36.3 + 0.8 * rng.random()
        clon = 66.5 + 1.2 * rng.random()
        for t in range(config.n_towers_per_village):
            towers[f"TW{v:02d}{t}"] = (round(clat + 0.05 * rng.standard_normal(), 6),
                                       round(clon + 0.05 * rng.standard_normal(), 6))
    return towers


def _timestamps(rng, k, z, c, start, end):
    """Event times: uniform day, night-time hours taken with a wealth-tilted share."""
    days = rng.integers(0, (end - start) // 86400, k)
    night = rng.random(k) < _sigmoid(math.log(c.night_share / (1 - c.night_share))
                                     + c.night_wealth_slope * z)
    sec = np.where(night, (19 * 3600 + rng.integers(0, 12 * 3600, k)) % 86400,
                   7 * 3600 + rng.integers(0, 12 * 3600, k))
    return start + days * 86400 + sec


def generate_cdr(households: Sequence[Household], subscriber_of: dict, wealth: dict,
                 config: GeneratorConfig, towers: dict | None = None):
    """Calls, texts and recharges for every network phone.

    Returns three structured arrays in canonical (subscriber, timestamp) order.
    """
    c = config
    if not subscriber_of:
        raise ValueError("no phone-owning household to generate CDR for")
    towers = towers if towers is not None else village_towers(c)
    by_id = {h.household_id: h for h in households}
    subs = sorted(subscriber_of)
    z = np.array([wealth[subscriber_of[s]] for s in subs])

    # behavioural wealth: true wealth seen through subscriber-specific noise,
    # one independent draw per propensity (columns below)
    hrng = _child(c.rng_seed, 6)
    zb = z[:, None] + c.behavior_noise_sd * hrng.standard_normal((len(subs), 9))
    act = c.activity_sd * hrng.standard_normal(len(subs))

    def rate(base, slope, col):
        e = np.exp(slope * zb[:, col] + act)
        return base * e / e.mean()

    lam_c = rate(c.base_calls, c.calls_wealth_slope, 0)
    lam_t = rate(c.base_texts, c.texts_wealth_slope, 1)
    lam_r = rate(c.base_recharges, c.recharges_wealth_slope, 2)
    tower_ids = sorted(towers)
    calls, texts, rech = [], [], []
    for si, s in enumerate(subs):
        rng = _child(c.rng_seed, 5, si)
        zo, zd, zk, zn, zm, zr = zb[si, 3:]
        village = by_id[subscriber_of[s]].village_id[1:]
        local = [t for t in tower_ids if t[2:-1] == village] or tower_ids
        home = local[int(rng.integers(len(local)))]
        n_contacts = max(1, int(rng.poisson(math.exp(c.contacts_log_mean + c.contacts_wealth_slope * zk))))
        contacts = np.array([f"K{s[1:]}{j:03d}" for j in range(n_contacts)])
        cw = 1.0 / np.arange(1, n_contacts + 1)
        cw /= cw.sum()
        p_out = float(_sigmoid(c.outgoing_intercept + c.outgoing_wealth_slope * zo))
        p_away = float(_sigmoid(c.mobility_intercept + c.mobility_wealth_slope * zm))

        k = int(rng.poisson(lam_c[si]))
        if k:
            ts = _timestamps(rng, k, zn, c, c.window_start, c.window_end)
            out = rng.random(k) < p_out
            cp = contacts[rng.choice(n_contacts, k, p=cw)]
            dur = np.floor(np.exp(c.duration_log_mean + c.duration_wealth_slope * zd
                                  + c.duration_log_sd * rng.standard_normal(k)))
            away = rng.random(k) < p_away
            tw = np.where(away, np.array(local)[rng.integers(0, len(local), k)], home)
            for i in range(k):
                a, b = (s, cp[i]) if out[i] else (cp[i], s)
                calls.append((s, int(ts[i]), a, b, int(dur[i]), str(tw[i])))

        # texts come in short back-and-forth bursts
        n_bursts = int(rng.poisson(lam_t[si] / c.text_burst_mean))
        if n_bursts:
            starts = _timestamps(rng, n_bursts, zn, c, c.window_start, c.window_end - 86400)
            lengths = rng.geometric(1.0 / c.text_burst_mean, n_bursts)
            cps = contacts[rng.choice(n_contacts, n_bursts, p=cw)]
            first_out = rng.random(n_bursts) < p_out
            for b in range(n_bursts):
                t = int(starts[b])
                o = bool(first_out[b])
                for j in range(int(lengths[b])):
                    if j:
                        t += 1 + int(rng.exponential(c.text_reply_gap_s))
                        if rng.random() < c.text_reply_prob:
                            o = not o
                    a, r = (s, cps[b]) if o else (cps[b], s)
                    texts.append((s, t, a, r))

        k = int(rng.poisson(lam_r[si]))
        if k:
            ts = np.sort(rng.integers(c.window_start, c.window_end, k))
            tilt = np.exp(c.recharge_wealth_tilt * zr * np.arange(len(RECHARGE_DENOMINATIONS)) / 2)
            p = tilt / tilt.sum()
            amt = np.array(RECHARGE_DENOMINATIONS)[rng.choice(len(p), k, p=p)]
            rech.extend((s, int(t), float(a)) for t, a in zip(ts, amt))

    calls_arr = np.array(calls, dtype=[("sub", object), ("ts", np.int64), ("caller", object),
                                       ("callee", object), ("duration", np.int64),
                                       ("tower", object)])
    texts_arr = np.array(texts, dtype=[("sub", object), ("ts", np.int64), ("sender", object),
                                       ("recipient", object)])
    rech_arr = np.array(rech, dtype=[("sub", object), ("ts", np.int64), ("amount", float)])
    return (_canonical(calls_arr), _canonical(texts_arr), _canonical(rech_arr))


def _canonical(arr):
    if len(arr) == 0:
        return arr
    order = sorted(range(len(arr)), key=lambda i: (arr["sub"][i], arr["ts"][i], i))
    return arr[np.array(order)]


def generate(config: GeneratorConfig) -> Bundle:
    pop = generate_population(config)
    survey = draw_survey(pop, config)
    survey, subscriber_of = assign_phones(survey, pop.wealth, config)
    towers = village_towers(config)
    calls, texts, rech = generate_cdr(survey, subscriber_of, pop.wealth, config, towers)
    wealth = {h.household_id: pop.wealth[h.household_id] for h in survey}
    return Bundle(survey, wealth, subscriber_of, calls, texts, rech, towers, config)


# ---------------------------------------------------------------------- writing

def write_bundle(bundle: Bundle, directory) -> dict:
    """Write the CSV bundle; returns {name: path}."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = {k: d / f"{k}.csv" for k in ("calls", "texts", "recharges", "towers", "survey", "truth")}

    def dump(path, header, rows):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)

    dump(paths["calls"], ["caller", "callee", "ts", "duration", "tower"],
         ((r["caller"], r["callee"], r["ts"], r["duration"], r["tower"]) for r in bundle.calls))
    dump(paths["texts"], ["sender", "recipient", "ts"],
         ((r["sender"], r["recipient"], r["ts"]) for r in bundle.texts))
    dump(paths["recharges"], ["subscriber", "ts", "amount"],
         ((r["sub"], r["ts"], repr(float(r["amount"]))) for r in bundle.recharges))
    dump(paths["towers"], ["tower", "lat", "lon"],
         ((t, repr(la), repr(lo)) for t, (la, lo) in sorted(bundle.towers.items())))
    write_survey(paths["survey"], bundle.survey)
    dump(paths["truth"], ["household_id", "latent_wealth", "cdr_phones"],
         ((h.household_id, repr(bundle.wealth[h.household_id]),
           " ".join(sorted(p for p, hh in bundle.subscriber_of.items() if hh == h.household_id)))
          for h in bundle.survey))
    with open(d / "generator_config.json", "w") as fh:
        json.dump(asdict(bundle.config), fh, indent=1, sort_keys=True)
    return paths


def read_truth(path) -> dict:
    with open(path, newline="") as fh:
        return {r["household_id"]: float(r["latent_wealth"]) for r in csv.DictReader(fh)}
