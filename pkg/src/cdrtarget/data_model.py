"""Domain records, CSV ingestion and the survey-to-CDR matching rule.

File layouts (header row required, column names remappable through a schema dict):

* calls:     caller, callee, ts, duration, tower
* texts:     sender, recipient, ts
* recharges: subscriber, ts, amount
* towers:    tower, lat, lon
* survey:    household_id, village_id, asset_1..asset_16, consumption,
             phone_1..phone_k, head_phone, cwr, crit_1..crit_6, ultra_poor,
             weight, food_sec, fin_incl, psych

Empty cells mean "absent". Booleans are written as 0/1.
"""

from __future__ import annotations

import csv
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

N_ASSETS = 16
N_CRITERIA = 6

CALL, TEXT, RECHARGE = "call", "text", "recharge"
INCOMING, OUTGOING, NOT_APPLICABLE = "incoming", "outgoing", "n/a"

CDR_COLUMNS = {
    CALL: ("caller", "callee", "ts", "duration", "tower"),
    TEXT: ("sender", "recipient", "ts"),
    RECHARGE: ("subscriber", "ts", "amount"),
}
TOWER_COLUMNS = ("tower", "lat", "lon")

ASSET_COLUMNS = tuple(f"asset_{i}" for i in range(1, N_ASSETS + 1))
CRITERIA_COLUMNS = tuple(f"crit_{i}" for i in range(1, N_CRITERIA + 1))
AUX_COLUMNS = ("food_sec", "fin_incl", "psych")


class SchemaError(ValueError):
    """Header does not carry a required column."""


class SurveyError(ValueError):
    pass


class SampleError(ValueError):
    pass


@dataclass(frozen=True)
class CdrEvent:
    subscriber_id: str
    kind: str
    direction: str
    timestamp: float
    counterpart_id: str | None = None
    duration_s: float | None = None
    tower_id: str | None = None
    tower_lat: float | None = None
    tower_lon: float | None = None
    amount: float | None = None

    def __post_init__(self):
        if self.kind not in (CALL, TEXT, RECHARGE):
            raise ValueError(f"unknown event kind {self.kind!r}")
        if (self.kind == RECHARGE) != (self.direction == NOT_APPLICABLE):
            raise ValueError("direction is n/a exactly for recharges")
        if self.kind != RECHARGE and self.direction not in (INCOMING, OUTGOING):
            raise ValueError(f"bad direction {self.direction!r}")
        if (self.duration_s is not None) != (self.kind == CALL):
            raise ValueError("duration_s present iff kind is call")
        if self.duration_s is not None and self.duration_s < 0:
            raise ValueError("negative call duration")
        if (self.amount is not None) != (self.kind == RECHARGE):
            raise ValueError("amount present iff kind is recharge")
        if self.amount is not None and not self.amount > 0:
            raise ValueError("recharge amount must be positive")

    @property
    def outgoing(self) -> bool:
        return self.direction == OUTGOING


@dataclass(frozen=True)
class Household:
    household_id: str
    village_id: str
    assets: tuple | None
    consumption_pc_monthly: float | None
    phone_numbers: tuple = ()
    head_phone: str | None = None
    cwr_extreme_poor: bool = False
    criteria: tuple = (False,) * N_CRITERIA
    ultra_poor: bool = False
    sample_weight: float = 1.0
    food_sec: float | None = None
    fin_incl: float | None = None
    psych: float | None = None

    def __post_init__(self):
        if not self.sample_weight > 0:
            raise SurveyError(f"household {self.household_id}: sample_weight must be > 0")
        if len(self.criteria) != N_CRITERIA:
            raise SurveyError(f"household {self.household_id}: expected {N_CRITERIA} criteria")
        if self.assets is not None and len(self.assets) != N_ASSETS:
            raise SurveyError(f"household {self.household_id}: expected {N_ASSETS} assets")
        if self.ultra_poor and not (self.cwr_extreme_poor and sum(map(bool, self.criteria)) >= 3):
            raise SurveyError(
                f"household {self.household_id}: ultra_poor label violates the "
                "extreme-poor + 3-of-6 criteria rule")

    @property
    def owns_phone(self) -> bool:
        return len(self.phone_numbers) > 0

    @property
    def complete(self) -> bool:
        """Asset and consumption data both present."""
        return self.assets is not None and self.consumption_pc_monthly is not None


@dataclass(frozen=True)
class MatchedRecord:
    household_id: str
    subscriber_id: str
    match_rule: str  # "head" | "random-member"


@dataclass(frozen=True)
class SampleDefinition:
    name: str
    household_ids: tuple
    weights: tuple
    quota_fraction: float
    reweighting: str

    def __len__(self):
        return len(self.household_ids)


@dataclass
class RowError:
    line: int
    message: str


# --------------------------------------------------------------------- ingestion

def _resolve_header(header: Sequence[str], required: Sequence[str], schema: dict | None,
                    path) -> dict:
    schema = schema or {}
    index = {name: i for i, name in enumerate(header)}
    out = {}
    missing = []
    for col in required:
        src = schema.get(col, col)
        if src not in index:
            missing.append(src)
        else:
            out[col] = index[src]
    if missing:
        raise SchemaError(f"{path}: missing required column(s) {missing}")
    return out


def _opt(cell: str) -> str | None:
    cell = cell.strip()
    return cell if cell else None


def _float(cell: str, what: str) -> float:
    try:
        v = float(cell)
    except ValueError:
        raise ValueError(f"unparseable {what} {cell!r}") from None
    if not math.isfinite(v):
        raise ValueError(f"non-finite {what} {cell!r}")
    return v


class CdrStream:
    """Iterate the events of one CDR file, in file order.

    A call or text row yields one event per party that belongs to ``subscribers``
    (caller/sender as outgoing, callee/recipient as incoming); with
    ``subscribers=None`` both parties are emitted. The row's tower is attached to
    every event it produces. Malformed rows are skipped and recorded in ``errors``.

    >>> stream = CdrStream("calls.csv", "call", subscribers={"A"})  # doctest: +SKIP
    >>> events = list(stream); stream.errors  # doctest: +SKIP
    """

    def __init__(self, path, kind: str, schema: dict | None = None,
                 subscribers: Iterable[str] | None = None, towers: dict | None = None):
        if kind not in CDR_COLUMNS:
            raise ValueError(f"unknown event kind {kind!r}")
        self.path = Path(path)
        self.kind = kind
        self.schema = schema
        self.subscribers = None if subscribers is None else frozenset(subscribers)
        self.towers = towers or {}
        self.errors: list[RowError] = []
        self.n_rows = 0
        if not self.path.exists():
            raise FileNotFoundError(f"no such CDR file: {self.path}")

    def __iter__(self) -> Iterator[CdrEvent]:
        self.errors = []
        self.n_rows = 0
        with open(self.path, newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise SchemaError(f"{self.path}: empty file, no header") from None
            cols = _resolve_header(header, CDR_COLUMNS[self.kind], self.schema, self.path)
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                self.n_rows += 1
                try:
                    events = self._parse(row, cols)
                except (ValueError, IndexError) as exc:
                    self.errors.append(RowError(lineno, str(exc)))
                    continue
                yield from events

    def _wanted(self, sub):
        return self.subscribers is None or sub in self.subscribers

    def _parse(self, row, cols) -> list[CdrEvent]:
        ts = _float(row[cols["ts"]], "timestamp")
        if self.kind == RECHARGE:
            sub = row[cols["subscriber"]].strip()
            if not sub:
                raise ValueError("empty subscriber id")
            amount = _float(row[cols["amount"]], "amount")
            if not amount > 0:
                raise ValueError(f"non-positive recharge amount {amount}")
            if not self._wanted(sub):
                return []
            return [CdrEvent(sub, RECHARGE, NOT_APPLICABLE, ts, amount=amount)]

        if self.kind == CALL:
            a, b = row[cols["caller"]].strip(), row[cols["callee"]].strip()
            duration = _float(row[cols["duration"]], "duration")
            if duration < 0:
                raise ValueError(f"negative duration {duration}")
            tower = _opt(row[cols["tower"]])
        else:
            a, b = row[cols["sender"]].strip(), row[cols["recipient"]].strip()
            duration = None
            tower = None
        if not a or not b:
            raise ValueError("empty party id")
        lat = lon = None
        if tower is not None and tower in self.towers:
            lat, lon = self.towers[tower]
        out = []
        for sub, other, direction in ((a, b, OUTGOING), (b, a, INCOMING)):
            if self._wanted(sub):
                out.append(CdrEvent(sub, self.kind, direction, ts, counterpart_id=other,
                                    duration_s=duration, tower_id=tower,
                                    tower_lat=lat, tower_lon=lon))
        return out


def ingest_cdr(path, kind: str, schema: dict | None = None,
               subscribers: Iterable[str] | None = None, towers: dict | None = None) -> CdrStream:
    """Open a CDR file of one event kind as a re-iterable event stream."""
    return CdrStream(path, kind, schema=schema, subscribers=subscribers, towers=towers)


def read_towers(path, schema: dict | None = None) -> dict:
    """tower id -> (lat, lon)."""
    out = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        cols = _resolve_header(header, TOWER_COLUMNS, schema, path)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                out[row[cols["tower"]].strip()] = (_float(row[cols["lat"]], "lat"),
                                                   _float(row[cols["lon"]], "lon"))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    return out


# ------------------------------------------------------------------------ survey

def _bool(cell: str, what: str) -> bool:
    c = cell.strip().lower()
    if c in ("1", "true", "t", "yes"):
        return True
    if c in ("0", "false", "f", "no"):
        return False
    raise ValueError(f"unparseable boolean {what} {cell!r}")


def _opt_float(cell: str, what: str) -> float | None:
    cell = cell.strip()
    return None if cell == "" else _float(cell, what)


def read_survey(path) -> list[Household]:
    """Parse the survey CSV; a bad row raises SurveyError naming the line."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such survey file: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        required = (("household_id", "village_id") + ASSET_COLUMNS
                    + ("consumption", "head_phone", "cwr") + CRITERIA_COLUMNS
                    + ("ultra_poor", "weight") + AUX_COLUMNS)
        cols = _resolve_header(header, required, None, path)
        phone_cols = sorted((i for i, h in enumerate(header) if h.startswith("phone_")),
                            key=lambda i: int(header[i].split("_")[1]))
        households = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                cells = [row[cols[c]].strip() for c in ASSET_COLUMNS]
                assets = None if any(c == "" for c in cells) else tuple(
                    _float(c, "asset") for c in cells)
                phones = tuple(row[i].strip() for i in phone_cols if row[i].strip())
                hh = Household(
                    household_id=row[cols["household_id"]].strip(),
                    village_id=row[cols["village_id"]].strip(),
                    assets=assets,
                    consumption_pc_monthly=_opt_float(row[cols["consumption"]], "consumption"),
                    phone_numbers=phones,
                    head_phone=_opt(row[cols["head_phone"]]),
                    cwr_extreme_poor=_bool(row[cols["cwr"]], "cwr"),
                    criteria=tuple(_bool(row[cols[c]], c) for c in CRITERIA_COLUMNS),
                    ultra_poor=_bool(row[cols["ultra_poor"]], "ultra_poor"),
                    sample_weight=_float(row[cols["weight"]], "weight"),
                    food_sec=_opt_float(row[cols["food_sec"]], "food_sec"),
                    fin_incl=_opt_float(row[cols["fin_incl"]], "fin_incl"),
                    psych=_opt_float(row[cols["psych"]], "psych"),
                )
            except (ValueError, IndexError) as exc:
                raise SurveyError(f"{path}:{lineno}: {exc}") from None
            households.append(hh)
    return households


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_survey(path, households: Sequence[Household]):
    k = max([len(h.phone_numbers) for h in households] + [1])
    phone_cols = [f"phone_{i}" for i in range(1, k + 1)]
    header = (["household_id", "village_id", *ASSET_COLUMNS, "consumption", *phone_cols,
               "head_phone", "cwr", *CRITERIA_COLUMNS, "ultra_poor", "weight", *AUX_COLUMNS])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for h in households:
            assets = h.assets if h.assets is not None else (None,) * N_ASSETS
            phones = list(h.phone_numbers) + [None] * (k - len(h.phone_numbers))
            w.writerow([_fmt(v) for v in (
                h.household_id, h.village_id, *assets, h.consumption_pc_monthly, *phones,
                h.head_phone, h.cwr_extreme_poor, *h.criteria, h.ultra_poor,
                float(h.sample_weight), h.food_sec, h.fin_incl, h.psych)])


# ---------------------------------------------------------------------- matching

def match_households(households: Sequence[Household], subscribers: Iterable[str],
                     rng_seed: int) -> list[MatchedRecord]:
    """Attach each household to at most one subscriber seen in the CDR.

    The head's phone wins when it is present in the CDR; otherwise one of the
    household's other phones that is present is drawn uniformly. The draw for a
    household depends only on the seed and that household's id, so the result
    does not change with input order.
    """
    subs = set(subscribers)
    out = []
    for h in households:
        if h.head_phone is not None and h.head_phone in subs:
            out.append(MatchedRecord(h.household_id, h.head_phone, "head"))
            continue
        candidates = sorted({p for p in h.phone_numbers if p in subs})
        if not candidates:
            continue
        rng = random.Random(f"{rng_seed}:{h.household_id}")
        out.append(MatchedRecord(h.household_id, rng.choice(candidates), "random-member"))
    return out


# ---------------------------------------------------------------------- samples

def build_sample(name: str, households: Sequence[Household],
                 matched: Sequence[MatchedRecord], phone_owner_share: float = 0.84,
                 quota_override: float | None = None) -> SampleDefinition:
    """Construct one of the three evaluation samples.

    matched
        Households with a CDR match, unweighted.
    balanced
        Matched households plus complete-data households owning no phone. Survey weights are
        applied and the no-phone weights are scaled so the weighted share of
        phone owners equals ``phone_owner_share``.
    full
        Every household with complete asset and consumption data, survey weights.
    """
    matched_ids = {m.household_id for m in matched}
    if name == "matched":
        members = [h for h in households if h.household_id in matched_ids]
        weights = [1.0] * len(members)
        rule = "unweighted"
    elif name == "balanced":
        if not 0 < phone_owner_share < 1:
            raise SampleError("phone_owner_share must lie in (0, 1)")
        owners = [h for h in households if h.household_id in matched_ids]
        nophone = [h for h in households if not h.owns_phone and h.complete]
        members = owners + nophone
        w_own = math.fsum(h.sample_weight for h in owners)
        w_none = math.fsum(h.sample_weight for h in nophone)
        if owners and nophone:
            scale = w_own * (1 - phone_owner_share) / (phone_owner_share * w_none)
        else:
            scale = 1.0
        weights = ([h.sample_weight for h in owners]
                   + [h.sample_weight * scale for h in nophone])
        rule = f"survey weights; no-phone scaled by {scale!r} to owner share {phone_owner_share!r}"
    elif name == "full":
        members = [h for h in households if h.complete]
        weights = [h.sample_weight for h in members]
        rule = "survey weights"
    else:
        raise SampleError(f"unknown sample {name!r}")
    if not members:
        raise SampleError(f"sample {name!r} is empty")
    if quota_override is not None:
        quota = float(quota_override)
    else:
        total = math.fsum(weights)
        quota = math.fsum(w for w, h in zip(weights, members) if h.ultra_poor) / total
    return SampleDefinition(name, tuple(h.household_id for h in members), tuple(weights),
                            quota, rule)
