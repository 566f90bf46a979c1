"""Monte Carlo dropout estimates of the predictive mean and variance of p(x | A)."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from fewshot_nlg.generator import ConditionalGenerator, DropoutMask
from fewshot_nlg.mr import LabeledPair
from fewshot_nlg.seeding import derive_seed


class EmptyCorpus(ValueError):
    pass


@dataclass(frozen=True)
class UncertaintyScore:
    mean: float
    variance: float
    M: int
    raw_log_samples: tuple[float, ...]
    n_tokens: int
    normalized: bool = True
    log_mean: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "raw_log_samples", tuple(float(x) for x in self.raw_log_samples))


def _logsumexp(x: np.ndarray) -> float:
    top = x.max()
    return float(top + np.log(np.exp(x - top).sum()))


def score_from_log_samples(log_samples: Sequence[float], n_tokens: int, normalized: bool = True) -> UncertaintyScore:
    """Aggregate M sequence log-likelihoods into a mean/variance score.

    With ``normalized`` each sample is first turned into a per-token
    likelihood ``exp(logp / n_tokens)``. The mean is ``LSE(l) - log M`` and the
    (biased, 1/M) variance is computed from relative deviations
    ``expm1(l_i - log_mean)`` so that identical samples give exactly zero and
    nothing is exponentiated before leaving log space.
    """
    raw = np.asarray(log_samples, dtype=float)
    M = raw.size
    if M < 1:
        raise ValueError("need at least one sample")
    logs = raw / n_tokens if normalized else raw
    log_mean = _logsumexp(logs) - math.log(M)
    rel = np.expm1(logs - log_mean)
    mean_sq_rel = float(np.mean(rel * rel))
    if mean_sq_rel > 0.0:
        variance = math.exp(2.0 * log_mean + math.log(mean_sq_rel))
    else:
        variance = 0.0
    return UncertaintyScore(math.exp(log_mean), variance, M, tuple(raw), n_tokens, normalized, log_mean)


def mask_seeds(seed: int, M: int) -> list[int]:
    """Seed of the i-th stochastic pass; the first M of M' > M passes coincide."""
    return [derive_seed(seed, i) for i in range(M)]


def estimate_batch(
    model: ConditionalGenerator,
    pairs: Sequence[LabeledPair],
    M: int,
    seeds: Sequence[int],
    normalized: bool = True,
) -> list[UncertaintyScore]:
    if M < 2:
        raise ValueError("M must be >= 2")
    if not pairs:
        return []
    rows, masks = [], []
    for pair, seed in zip(pairs, seeds):
        for s in mask_seeds(seed, M):
            rows.append(pair)
            masks.append(DropoutMask.stochastic(s))
    per_token = model.score_batch(rows, masks)
    scores = []
    for n in range(len(pairs)):
        chunk = per_token[n * M : (n + 1) * M]
        scores.append(score_from_log_samples([float(t.sum()) for t in chunk], len(chunk[0]), normalized))
    return scores


def estimate(model: ConditionalGenerator, pair: LabeledPair, M: int = 10, seed: int = 0, normalized: bool = True) -> UncertaintyScore:
    return estimate_batch(model, [pair], M, [seed], normalized)[0]


def corpus_mean(scores: Sequence[UncertaintyScore]) -> float:
    if not scores:
        raise EmptyCorpus("no scores")
    return math.fsum(s.mean for s in scores) / len(scores)
