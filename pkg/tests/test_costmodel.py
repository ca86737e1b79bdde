import json
from decimal import Decimal
from fractions import Fraction

import pytest

from cdrtarget.costmodel import (CostParams, budget_share, cost_table, cost_table_csv,
                                 cost_table_json, display_dollars, display_percent,
                                 estimate_screened, targeting_cost, total_benefits)


def test_screened_estimate():
    assert estimate_screened(7500, 1235, 20702) == 125_721
    # exact rational value for reference: 155265000 / 1235
    assert round(Fraction(7500 * 20702, 1235)) == 125_721
    assert estimate_screened(640, 333, 333) == 640
    assert estimate_screened(1000, 100, 1000) == 10_000
    assert estimate_screened(1, 2, 3) == 2  # 1.5 rounds up
    with pytest.raises(ValueError):
        estimate_screened(10, 0, 5)


def test_costs_and_shares():
    assert targeting_cost(125_721, "2.20") == Decimal("276586.20")
    assert display_dollars(targeting_cost(125_721, 2.20)) == 276_586
    assert display_dollars(targeting_cost(125_721, 4.00)) == 502_884
    assert targeting_cost(125_721, 0) == 0
    assert display_percent(budget_share(276_586, 7500, 1688)) == "2.18%"
    assert display_percent(budget_share(502_884, 7500, 1688)) == "3.97%"
    assert budget_share(276_586, 7500, 1688) == pytest.approx(276_586 / 12_660_000, abs=1e-12)
    assert budget_share(0, 7500, 1688) == 0.0
    assert total_benefits() == Decimal(12_660_000)
    with pytest.raises(ValueError):
        budget_share(1, 0, 1688)


def test_cost_table():
    rows = {r["method"]: r for r in cost_table()}
    assert rows["CBT"]["targeting_cost_usd"] == 276_586
    assert rows["PMT"]["share_of_benefits"] == "3.97%"
    assert rows["CDR"]["targeting_cost_usd"] == 0
    assert rows["consumption"]["lower_bound"] and not rows["PMT"]["lower_bound"]
    assert json.loads(cost_table_json())["total_benefits_usd"] == "12660000"
    assert cost_table_csv().splitlines()[0].startswith("method,per_household_usd")


def test_param_validation():
    with pytest.raises(ValueError):
        CostParams(per_household={"CBT": Decimal("-1")})
    with pytest.raises(ValueError):
        CostParams(ref_eligible=10, ref_screened=5)
