"""Uncertainty-based selection of self-augmented pairs.

Steps: drop augmented pairs whose mean is below the corpus mean of the
augmented set; pool the gold pairs with the survivors; trim the tails of the
pool (per statistic by default); average what is left to get the mean and
variance thresholds; keep the survivors that satisfy the strategy's strict
inequalities. Gold pairs only ever contribute to the thresholds.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence

from fewshot_nlg.uncertainty import UncertaintyScore, corpus_mean


class Strategy(enum.Enum):
    HIGH_MEAN_HIGH_VAR = "high_mean_high_var"
    HIGH_MEAN_LOW_VAR = "high_mean_low_var"
    LOW_MEAN_HIGH_VAR = "low_mean_high_var"
    LOW_MEAN_LOW_VAR = "low_mean_low_var"

    @property
    def high_mean(self) -> bool:
        return self in (Strategy.HIGH_MEAN_HIGH_VAR, Strategy.HIGH_MEAN_LOW_VAR)

    @property
    def high_var(self) -> bool:
        return self in (Strategy.HIGH_MEAN_HIGH_VAR, Strategy.LOW_MEAN_HIGH_VAR)


@dataclass(frozen=True)
class SelectionConfig:
    strategy: Strategy = Strategy.HIGH_MEAN_HIGH_VAR
    trim_fraction: float = 0.01
    prefilter: bool = True
    joint_trim: bool = False

    def __post_init__(self):
        object.__setattr__(self, "strategy", Strategy(self.strategy))
        if not 0.0 <= self.trim_fraction < 0.5:
            raise ValueError("trim_fraction must be in [0, 0.5)")


@dataclass(frozen=True)
class Decision:
    pair_id: str
    mean: float
    variance: float
    survived_prefilter: bool
    selected: bool
    reason: str


@dataclass
class SelectionOutcome:
    selected: list[str]
    mean_threshold: float
    var_threshold: float
    mu_a: float
    n_pool: int
    decisions: list[Decision] = field(default_factory=list)
    empty_pool: bool = False

    def report_rows(self) -> list[tuple]:
        return [
            (d.pair_id, d.mean, d.variance, d.survived_prefilter, d.selected, d.reason)
            for d in self.decisions
        ]


REPORT_HEADER = ("id", "mean", "variance", "survived_prefilter", "selected", "reason")


def trim_count(pool_size: int, fraction: float) -> int:
    """Items removed from each tail: ceil(fraction * n), 0 for pools under 3."""
    if pool_size < 3 or fraction <= 0.0:
        return 0
    k = math.ceil(fraction * pool_size)
    return k if 2 * k < pool_size else 0


def _trimmed(items, key, k):
    ranked = sorted(items, key=lambda it: (key(it), it[0], it[1]))
    return ranked[k : len(ranked) - k] if k else ranked


def _predicate(strategy: Strategy, mean: float, var: float, mu: float, s: float) -> bool:
    mean_ok = mean > mu if strategy.high_mean else mean < mu
    var_ok = var > s if strategy.high_var else var < s
    return mean_ok and var_ok


def select(
    augmented: Sequence[tuple[str, UncertaintyScore]],
    gold: Sequence[tuple[str, UncertaintyScore]],
    cfg: SelectionConfig = SelectionConfig(),
) -> SelectionOutcome:
    """Choose augmented pair ids. Ties in sorting are broken by (pool, id)."""
    everything = list(augmented) + list(gold)
    if everything:
        first = everything[0][1]
        for _, sc in everything:
            if sc.M != first.M or sc.normalized != first.normalized:
                raise ValueError("scores must share M and normalization mode")

    if not augmented:
        return SelectionOutcome([], math.nan, math.nan, math.nan, 0, [], empty_pool=True)

    mu_a = corpus_mean([sc for _, sc in augmented])
    survivors = [(pid, sc) for pid, sc in augmented if not cfg.prefilter or sc.mean >= mu_a]
    if not survivors:
        decisions = [Decision(pid, sc.mean, sc.variance, False, False, "below corpus mean") for pid, sc in augmented]
        return SelectionOutcome([], math.nan, math.nan, mu_a, 0, sorted(decisions, key=lambda d: d.pair_id), True)

    # pool entries: (group, id, score); group orders gold before augmented on ties
    pool = [(0, pid, sc) for pid, sc in gold] + [(1, pid, sc) for pid, sc in survivors]
    k = trim_count(len(pool), cfg.trim_fraction)
    if cfg.joint_trim:
        kept = _trimmed(pool, lambda it: it[2].mean, k)
        mean_pool = var_pool = kept
    else:
        mean_pool = _trimmed(pool, lambda it: it[2].mean, k)
        var_pool = _trimmed(pool, lambda it: it[2].variance, k)
    mu = math.fsum(it[2].mean for it in mean_pool) / len(mean_pool)
    s = math.fsum(it[2].variance for it in var_pool) / len(var_pool)

    surviving_ids = {pid for pid, _ in survivors}
    selected, decisions = [], []
    for pid, sc in augmented:
        if pid not in surviving_ids:
            decisions.append(Decision(pid, sc.mean, sc.variance, False, False, "below corpus mean"))
            continue
        ok = _predicate(cfg.strategy, sc.mean, sc.variance, mu, s)
        if ok:
            selected.append(pid)
            reason = cfg.strategy.value
        elif not (sc.mean > mu if cfg.strategy.high_mean else sc.mean < mu):
            reason = "mean on wrong side of threshold"
        else:
            reason = "variance on wrong side of threshold"
        decisions.append(Decision(pid, sc.mean, sc.variance, True, ok, reason))
    decisions.sort(key=lambda d: d.pair_id)
    return SelectionOutcome(sorted(selected), mu, s, mu_a, len(mean_pool), decisions)
