"""Targeting cost arithmetic for a screened population.

Money is carried as ``Decimal`` so the per-household products are exact to the cent.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction


@dataclass(frozen=True)
class CostParams:
    # marginal screening cost per household, USD
    per_household: dict = field(default_factory=lambda: {
        "CBT": Decimal("2.20"), "PMT": Decimal("4.00"), "CDR": Decimal("0.00")})
    beneficiaries: int = 7500
    benefit_each: Decimal = Decimal("1688")
    ref_eligible: int = 1235
    ref_screened: int = 20702

    def __post_init__(self):
        if any(Decimal(v) < 0 for v in self.per_household.values()):
            raise ValueError("costs must be non-negative")
        if self.ref_screened < self.ref_eligible:
            raise ValueError("screened count cannot be below eligible count")


def _round_half_up(x: Fraction | Decimal) -> int:
    if isinstance(x, Fraction):
        # floor(x + 1/2) is exact for rationals
        return int((x + Fraction(1, 2)).__floor__())
    return int(Decimal(x).quantize(Decimal(1), rounding=ROUND_HALF_UP))


def estimate_screened(beneficiaries: int, ref_eligible: int, ref_screened: int) -> int:
    """Households that must be screened to find ``beneficiaries`` eligible ones,
    assuming the reference site's eligibility yield."""
    if ref_eligible <= 0:
        raise ValueError("ref_eligible must be positive")
    return _round_half_up(Fraction(beneficiaries * ref_screened, ref_eligible))


def targeting_cost(screened: int, per_household_cost) -> Decimal:
    """Cost to the cent."""
    return (Decimal(screened) * Decimal(str(per_household_cost))).quantize(Decimal("0.01"))


def display_dollars(amount) -> int:
    return _round_half_up(Decimal(amount))


def budget_share(cost, beneficiaries: int, benefit_each) -> float:
    denom = Decimal(beneficiaries) * Decimal(str(benefit_each))
    if denom <= 0:
        raise ValueError("benefit budget must be positive")
    return float(Decimal(str(cost)) / denom)


def display_percent(share: float) -> str:
    return f"{Decimal(repr(share * 100)).quantize(Decimal('0.01'), rounding=ROUND_HALF_UP)}%"


def cost_table(params: CostParams | None = None) -> list[dict]:
    """One row per method; consumption is reported as a lower bound equal to PMT."""
    params = params or CostParams()
    screened = estimate_screened(params.beneficiaries, params.ref_eligible, params.ref_screened)
    rows = []
    methods = list(params.per_household.items())
    if "PMT" in params.per_household:
        methods.append(("consumption", params.per_household["PMT"]))
    for method, unit in methods:
        cost = targeting_cost(screened, unit)
        share = budget_share(cost, params.beneficiaries, params.benefit_each)
        rows.append({
            "method": method,
            "per_household_usd": str(Decimal(str(unit)).quantize(Decimal("0.01"))),
            "screened_households": screened,
            "targeting_cost_usd": display_dollars(cost),
            "targeting_cost_exact": str(cost),
            "share_of_benefits": display_percent(share),
            "lower_bound": method == "consumption",
        })
    return rows


def total_benefits(params: CostParams | None = None) -> Decimal:
    params = params or CostParams()
    return Decimal(params.beneficiaries) * params.benefit_each


def cost_table_json(params: CostParams | None = None) -> str:
    params = params or CostParams()
    return json.dumps({"total_benefits_usd": str(total_benefits(params)),
                       "rows": cost_table(params)}, indent=2, sort_keys=True)


def cost_table_csv(params: CostParams | None = None) -> str:
    rows = cost_table(params)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()
