import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fewshot_nlg.selection import SelectionConfig, Strategy, select, trim_count
from fewshot_nlg.uncertainty import UncertaintyScore
from oracles import brute_force_select

STRATEGIES = [s.value for s in Strategy]


def score(mean, var, M=10):
    return UncertaintyScore(mean, var, M, (0.0,) * M, 1)


def synthetic(n_aug, n_gold, seed):
    rng = np.random.default_rng(seed)
    aug = [(f"u{i:06d}", float(m), float(v)) for i, (m, v) in enumerate(zip(rng.beta(2, 5, n_aug), rng.gamma(1.0, 1e-3, n_aug)))]
    gold = [(f"g{i:06d}", float(m), float(v)) for i, (m, v) in enumerate(zip(rng.beta(5, 2, n_gold), rng.gamma(1.0, 1e-3, n_gold)))]
    return aug, gold


def run_select(aug, gold, strategy, **kw):
    out = select([(i, score(m, v)) for i, m, v in aug], [(i, score(m, v)) for i, m, v in gold], SelectionConfig(strategy, **kw))
    return out


@pytest.mark.parametrize("strategy", STRATEGIES)
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_matches_brute_force_on_500_pairs(strategy, seed):
    aug, gold = synthetic(500, 50, seed)
    out = run_select(aug, gold, strategy)
    assert set(out.selected) == brute_force_select(aug, gold, strategy)


@settings(max_examples=150, deadline=None)
@given(
    st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1)), min_size=1, max_size=40),
    st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1)), max_size=10),
    st.sampled_from(STRATEGIES),
    st.sampled_from([0.0, 0.01, 0.1, 0.3]),
)
def test_matches_brute_force_property(aug_raw, gold_raw, strategy, trim):
    aug = [(f"u{i:06d}", m, v) for i, (m, v) in enumerate(aug_raw)]
    gold = [(f"g{i:06d}", m, v) for i, (m, v) in enumerate(gold_raw)]
    out = run_select(aug, gold, strategy, trim_fraction=trim)
    assert set(out.selected) == brute_force_select(aug, gold, strategy, trim)


def test_predicates_are_strict():
    # every survivor sits exactly on the thresholds
    aug = [("a", 0.5, 0.1), ("b", 0.5, 0.1)]
    for strategy in STRATEGIES:
        assert run_select(aug, [], strategy).selected == []


def test_strategies_partition_points_off_the_thresholds():
    aug, gold = synthetic(300, 20, 4)
    picked = [set(run_select(aug, gold, s).selected) for s in STRATEGIES]
    for i in range(4):
        for j in range(i + 1, 4):
            assert not picked[i] & picked[j]


def test_prefilter_drops_below_corpus_mean():
    aug = [("a", 0.1, 0.0), ("b", 0.2, 0.0), ("c", 0.9, 0.0)]
    out = run_select(aug, [], "high_mean_low_var")
    assert out.mu_a == pytest.approx(0.4)
    assert {d.pair_id for d in out.decisions if d.survived_prefilter} == {"c"}
    assert out.n_pool == 1


def test_without_prefilter_low_mean_can_be_chosen():
    aug = [("a", 0.1, 0.5), ("b", 0.2, 0.0), ("c", 0.9, 0.0)]
    assert "a" in run_select(aug, [], "low_mean_high_var", prefilter=False).selected


def test_gold_shifts_thresholds_but_is_never_selected():
    aug = [("a", 0.7, 0.2), ("b", 0.7, 0.1)]
    gold = [("g1", 0.1, 0.0), ("g2", 0.2, 0.0)]
    out = run_select(aug, gold, "high_mean_high_var", trim_fraction=0.0)
    assert out.mean_threshold == pytest.approx(0.425)
    assert out.var_threshold == pytest.approx(0.075)
    assert out.selected == ["a", "b"]


def test_empty_pool():
    out = select([], [("g", score(0.5, 0.1))])
    assert out.selected == [] and out.empty_pool
    assert math.isnan(out.mean_threshold)


def test_report_rows_cover_every_augmented_pair():
    aug, gold = synthetic(50, 5, 3)
    out = run_select(aug, gold, "high_mean_high_var")
    rows = out.report_rows()
    assert [r[0] for r in rows] == sorted(i for i, _, _ in aug)
    assert sum(r[4] for r in rows) == len(out.selected)


def test_mixed_m_rejected():
    with pytest.raises(ValueError):
        select([("a", score(0.5, 0.0, M=10))], [("g", score(0.5, 0.0, M=5))])


@pytest.mark.parametrize(
    "n, fraction, k",
    [(0, 0.01, 0), (2, 0.4, 0), (3, 0.01, 1), (100, 0.01, 1), (101, 0.01, 2), (550, 0.01, 6), (10, 0.0, 0), (4, 0.49, 0)],
)
def test_trim_count(n, fraction, k):
    assert trim_count(n, fraction) == k


def test_invalid_trim_fraction():
    with pytest.raises(ValueError):
        SelectionConfig(trim_fraction=0.5)
