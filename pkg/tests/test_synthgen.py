import hashlib
import math
from collections import Counter

import numpy as np
import pytest
from scipy.stats import binom, spearmanr

from cdrtarget import synthgen
from cdrtarget.data_model import match_households
from cdrtarget.synthgen import GeneratorConfig


@pytest.fixture(scope="module")
def bundle():
    return synthgen.generate(GeneratorConfig())


def test_cwr_quantile_exact_per_village():
    cfg = GeneratorConfig(n_villages=5, households_per_village=100)
    pop = synthgen.generate_population(cfg)
    per_village = Counter(h.village_id for h in pop.households if h.cwr_extreme_poor)
    assert set(per_village.values()) == {43}


def test_flat_criteria_share_matches_binomial():
    p = 1 / (1 + math.exp(0.3))
    cfg = GeneratorConfig(n_villages=100, households_per_village=1000,
                          criteria_intercepts=[-0.3] * 6, criteria_wealth_slope=[0.0] * 6)
    pop = synthgen.generate_population(cfg)
    share = np.mean([h.ultra_poor for h in pop.households])
    expected = 0.43 * binom.sf(2, 6, p)
    # 10^5 households: binomial sd of the share is about 0.0015
    assert share == pytest.approx(expected, abs=0.006)


def test_zero_criteria_probability_gives_no_ultra_poor():
    cfg = GeneratorConfig(n_villages=3, criteria_intercepts=[-60.0] * 6)
    assert not any(h.ultra_poor for h in synthgen.generate_population(cfg).households)


def test_default_shape(bundle):
    hh = {h.household_id: h for h in bundle.survey}
    assert len(bundle.survey) == 1173 + 1679
    assert sum(h.complete for h in bundle.survey) == 2814
    assert sum(not h.owns_phone and h.complete for h in bundle.survey) == 472
    m = match_households(bundle.survey, bundle.subscriber_of, 0)
    assert len(m) == 535
    assert sum(hh[r.household_id].ultra_poor for r in m) == 146
    w = np.array([h.sample_weight for h in bundle.survey])
    up = np.array([h.ultra_poor for h in bundle.survey])
    assert (w * up).sum() / w.sum() == pytest.approx(0.06, abs=0.01)
    assert all(h.ultra_poor == (h.cwr_extreme_poor and sum(h.criteria) >= 3)
               for h in bundle.survey)


def test_event_volume_calibrated(bundle):
    total = len(bundle.calls) + len(bundle.texts) + len(bundle.recharges)
    assert abs(total - 629_543) <= 0.1 * 629_543


def test_activity_rises_with_wealth(bundle):
    subs = sorted(bundle.subscriber_of)
    wealth = [bundle.wealth[bundle.subscriber_of[s]] for s in subs]
    calls = Counter(r["caller"] for r in bundle.calls) + Counter(r["callee"] for r in bundle.calls)
    contacts = {}
    towers = {}
    for r in bundle.calls:
        for a, b in ((r["caller"], r["callee"]), (r["callee"], r["caller"])):
            contacts.setdefault(a, set()).add(b)
            towers.setdefault(a, set()).add(r["tower"])
    for stat in (calls, {s: len(c) for s, c in contacts.items()},
                 {s: len(t) for s, t in towers.items()}):
        rho = spearmanr(wealth, [stat.get(s, 0) for s in subs]).statistic
        assert rho > 0


def test_zero_text_rate():
    cfg = GeneratorConfig(n_villages=4, households_per_village=60, n_survey_up=40,
                          n_survey_nup=60, n_incomplete=0, n_no_phone=None, n_matched=None,
                          n_matched_up=None, base_texts=0.0)
    b = synthgen.generate(cfg)
    assert len(b.texts) == 0 and len(b.calls) > 0


def test_same_seed_identical_files(tmp_path):
    cfg = GeneratorConfig(n_villages=4, households_per_village=60, n_survey_up=40,
                          n_survey_nup=60, n_incomplete=4, n_no_phone=None, n_matched=None,
                          n_matched_up=None)
    digests = []
    for run in ("a", "b"):
        paths = synthgen.write_bundle(synthgen.generate(cfg), tmp_path / run)
        digests.append({k: hashlib.sha256(p.read_bytes()).hexdigest() for k, p in paths.items()})
    assert digests[0] == digests[1]
    other = synthgen.write_bundle(synthgen.generate(GeneratorConfig(
        **{**cfg.__dict__, "rng_seed": 99})), tmp_path / "c")
    assert hashlib.sha256(other["calls"].read_bytes()).hexdigest() != digests[0]["calls"]


def test_truth_side_file(tmp_path):
    cfg = GeneratorConfig(n_villages=2, households_per_village=50, n_survey_up=10,
                          n_survey_nup=30, n_incomplete=0, n_no_phone=None, n_matched=None,
                          n_matched_up=None)
    b = synthgen.generate(cfg)
    paths = synthgen.write_bundle(b, tmp_path)
    assert synthgen.read_truth(paths["truth"]) == b.wealth


def test_config_validation_and_scenarios():
    with pytest.raises(ValueError):
        GeneratorConfig(window_start=10, window_end=5)
    with pytest.raises(ValueError):
        GeneratorConfig(base_calls=-1)
    with pytest.raises(ValueError):
        GeneratorConfig.from_dict({"scenario": "nope"})
    cfg = GeneratorConfig.from_dict({"scenario": "poor_few_phones", "rng_seed": 4})
    assert cfg.n_matched is None and cfg.rng_seed == 4
