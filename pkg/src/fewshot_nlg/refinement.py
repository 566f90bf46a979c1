"""Response refinement by averaging dropout-perturbed logits, plus the slot filter."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from fewshot_nlg.generator import ConditionalGenerator, DropoutMask, sampling_distribution, draw_tokens, softmax
from fewshot_nlg.metrics import find_occurrences, contains, slot_mentions, value_tokens
from fewshot_nlg.mr import (
    DEFAULT_IGNORE_VALUES,
    LabeledPair,
    MeaningRepresentation,
    Origin,
    concrete_slot_values,
    render_mr,
)
from fewshot_nlg.seeding import derive_seed


@dataclass(frozen=True)
class RefinementConfig:
    R: int = 10
    nucleus_p: float = 0.9
    max_len: int = 40
    seed: int = 0
    filter_enabled: bool = True

    def __post_init__(self):
        if self.R < 1:
            raise ValueError("R must be >= 1")
        if not 0.0 < self.nucleus_p <= 1.0:
            raise ValueError("nucleus_p must be in (0, 1]")


@dataclass
class RefineResult:
    tokens: tuple[str, ...]
    truncated: bool
    # per-step aggregated next-token distributions (before nucleus filtering)
    distributions: list[np.ndarray] = field(default_factory=list)
    # per-step single-mask distributions of the first track, for diagnostics
    single_mask_distributions: list[np.ndarray] = field(default_factory=list)


def track_seeds(seed: int, R: int) -> list[int]:
    """Mask seed of each of the R dropout tracks used for one MR."""
    return [derive_seed(seed, i) for i in range(R)]


def average_logits(logits: np.ndarray) -> np.ndarray:
    """Mean over axis 1, written as ``h_0 + mean(h_i - h_0)``.

    Identical rows therefore average to exactly ``h_0``.
    """
    base = logits[:, :1, :]
    return base[:, 0, :] + (logits - base).mean(axis=1)


def refine_decode_batch(
    model: ConditionalGenerator,
    mrs: Sequence[MeaningRepresentation],
    seeds: Sequence[int],
    cfg: RefinementConfig,
    trace: bool = False,
) -> list[RefineResult]:
    """Decode each MR from the softmax of R averaged dropout-perturbed logit vectors.

    Every MR runs R recurrent tracks, each with its own fixed dropout mask,
    fed the shared chosen prefix. The sampling stream of MR ``i`` is
    ``default_rng(seeds[i])`` and its track masks come from
    ``track_seeds(seeds[i], R)``.
    """
    if not mrs:
        return []
    R, vocab = cfg.R, model.vocab
    prefixes, masks = [], []
    for mr, seed in zip(mrs, seeds):
        pfx = model.encode_prefix(mr)
        for s in track_seeds(seed, R):
            prefixes.append(pfx)
            masks.append(DropoutMask.stochastic(s))
    state, logits = model.init_decode(prefixes, masks)
    rngs = [np.random.default_rng(s) for s in seeds]
    results = [RefineResult((), False) for _ in mrs]
    outputs: list[list[int]] = [[] for _ in mrs]
    done = np.zeros(len(mrs), dtype=bool)
    for _ in range(cfg.max_len):
        per_mr = logits.reshape(len(mrs), R, -1)
        probs = softmax(average_logits(per_mr))
        if trace:
            for i in np.flatnonzero(~done):
                results[i].distributions.append(probs[i].copy())
                results[i].single_mask_distributions.append(softmax(per_mr[i, 0]))
        u = np.array([rngs[i].random() if not done[i] else 0.0 for i in range(len(mrs))])
        toks = draw_tokens(sampling_distribution(probs, vocab, cfg.nucleus_p), u)
        for i in np.flatnonzero(~done):
            if toks[i] == vocab.eos:
                done[i] = True
            else:
                outputs[i].append(int(toks[i]))
        if done.all():
            break
        logits = model.advance(state, np.repeat(toks, R))
    for i, res in enumerate(results):
        res.tokens = tuple(vocab.words(outputs[i]))
        res.truncated = not done[i]
    return results


def refine_decode(model: ConditionalGenerator, mr: MeaningRepresentation, cfg: RefinementConfig) -> tuple[str, ...]:
    return refine_decode_batch(model, [mr], [cfg.seed], cfg)[0].tokens


@dataclass(frozen=True)
class FilterResult:
    accepted: bool
    reasons: tuple[str, ...]


def slot_match_filter(
    mr: MeaningRepresentation,
    text: Sequence[str],
    lexicon: Iterable[tuple[str, ...]] = (),
    synonyms: Mapping[str, Sequence[str]] | None = None,
    ignore: Iterable[str] = DEFAULT_IGNORE_VALUES,
) -> FilterResult:
    """Reject responses that miss a slot value, miss a requested slot name, or
    mention a lexicon value the MR does not carry."""
    toks = [t.lower() for t in text]
    reasons, ok = [], True
    required = set()
    for name, value in concrete_slot_values(mr, ignore):
        vt = value_tokens(value)
        required.add(vt)
        if contains(toks, vt):
            reasons.append(f"value {value!r} present")
        else:
            ok = False
            reasons.append(f"missing value {value!r}")
    for sv in mr.slots:
        if sv.requested:
            if any(contains(toks, m) for m in slot_mentions(sv.name, synonyms)):
                reasons.append(f"requested slot {sv.name!r} mentioned")
            else:
                ok = False
                reasons.append(f"missing requested slot {sv.name!r}")
    # a foreign value is excused only where it lies entirely inside a required
    # match ("north" within a required "north east"); "north east" in a text
    # for area=north is still redundant
    covered = [False] * len(toks)
    for vt in sorted(required, key=lambda v: (-len(v), v)):
        for i in find_occurrences(toks, vt, [False] * len(toks)):
            covered[i : i + len(vt)] = [True] * len(vt)
    for value in sorted(set(lexicon) - required, key=lambda v: (-len(v), v)):
        n = len(value)
        if any(tuple(toks[i : i + n]) == value and not all(covered[i : i + n]) for i in range(len(toks) - n + 1)):
            ok = False
            reasons.append(f"redundant value {' '.join(value)!r}")
    if not reasons:
        reasons.append("no slots to check")
    return FilterResult(ok, tuple(reasons))


@dataclass
class PseudoSet:
    pairs: list[LabeledPair]
    records: list[tuple]  # (mr id, seed, accepted, reasons)
    rejections: Counter

    PROVENANCE_HEADER = ("id", "seed", "accepted", "reasons", "mr", "response")


def _reason_kind(reason: str) -> str:
    return reason.split(" '")[0].split(" \"")[0]


def build_pseudo_set(
    model: ConditionalGenerator,
    selected: Sequence[tuple[str, MeaningRepresentation]],
    cfg: RefinementConfig,
    lexicon: Iterable[tuple[str, ...]] = (),
    gold_mrs: Iterable[MeaningRepresentation] = (),
    synonyms: Mapping[str, Sequence[str]] | None = None,
) -> PseudoSet:
    """Refine every selected MR and admit the accepted responses as pseudo pairs.

    Empty responses and MRs that already have a gold response are never admitted.
    """
    lexicon = frozenset(lexicon)
    gold_keys = {render_mr(mr) for mr in gold_mrs}
    seeds = [derive_seed(cfg.seed, n) for n in range(len(selected))]
    refined = refine_decode_batch(model, [mr for _, mr in selected], seeds, cfg)
    pairs, records, rejections = [], [], Counter()
    for (pid, mr), seed, res in zip(selected, seeds, refined):
        if render_mr(mr) in gold_keys:
            reasons, accepted = ("mr already has a gold response",), False
        elif not res.tokens:
            reasons, accepted = ("empty response",), False
        elif cfg.filter_enabled:
            verdict = slot_match_filter(mr, res.tokens, lexicon, synonyms)
            reasons, accepted = verdict.reasons, verdict.accepted
        else:
            reasons, accepted = ("filter disabled",), True
        if accepted:
            pairs.append(LabeledPair(mr, res.tokens, Origin.PSEUDO))
        else:
            for r in reasons:
                if r.startswith(("missing", "redundant", "empty", "mr already")):
                    rejections[_reason_kind(r)] += 1
        records.append((pid, seed, accepted, "; ".join(reasons), render_mr(mr), " ".join(res.tokens)))
    return PseudoSet(pairs, records, rejections)
