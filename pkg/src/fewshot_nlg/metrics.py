"""Slot error rate, corpus BLEU and the best-of-k decoding protocol."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from fewshot_nlg.generator import ConditionalGenerator, DropoutMask, sample_batch
from fewshot_nlg.mr import (
    DEFAULT_IGNORE_VALUES,
    REQUESTED,
    LabeledPair,
    MeaningRepresentation,
    Origin,
    render_mr,
    tokenize,
)
from fewshot_nlg.seeding import derive_seed

STOPWORDS = frozenset(
    "a an and are as at be by for from has have in is it its of on or that the this to was were will with "
    "you your i we there here what which".split()
)


class LengthMismatch(ValueError):
    pass


def value_tokens(value: str) -> tuple[str, ...]:
    return tuple(t.lower() for t in tokenize(value))


def build_lexicon(
    mrs: Iterable[MeaningRepresentation],
    ignore: Iterable[str] = DEFAULT_IGNORE_VALUES,
    min_chars: int = 3,
    stopwords: Iterable[str] = STOPWORDS,
) -> frozenset[tuple[str, ...]]:
    """All concrete slot values of a domain, as lowercased token tuples."""
    ignore = {v.lower() for v in ignore} | {REQUESTED}
    stop = set(stopwords)
    lex = set()
    for mr in mrs:
        for sv in mr.slots:
            v = sv.value.lower()
            if v in ignore or len(v) < min_chars or v in stop:
                continue
            toks = value_tokens(v)
            if toks:
                lex.add(toks)
    return frozenset(lex)


def slot_mentions(name: str, synonyms: Mapping[str, Sequence[str]] | None = None) -> list[tuple[str, ...]]:
    forms = [name.replace("_", " ")]
    if synonyms:
        forms.extend(synonyms.get(name, ()))
    return [value_tokens(f) for f in forms if value_tokens(f)]


def find_occurrences(tokens: Sequence[str], needle: tuple[str, ...], used: list[bool]) -> list[int]:
    """Start offsets of non-overlapping matches on tokens not yet used."""
    n, k = len(tokens), len(needle)
    hits, i = [], 0
    while i + k <= n:
        if tuple(tokens[i : i + k]) == needle and not any(used[i : i + k]):
            hits.append(i)
            i += k
        else:
            i += 1
    return hits


def contains(tokens: Sequence[str], needle: tuple[str, ...]) -> bool:
    return bool(find_occurrences(tokens, needle, [False] * len(tokens)))


@dataclass(frozen=True)
class ErrBreakdown:
    missing: int
    redundant: int
    total: int
    missing_items: tuple[str, ...] = ()
    redundant_items: tuple[str, ...] = ()

    @property
    def err(self) -> float:
        return (self.missing + self.redundant) / self.total if self.total else 0.0

    @property
    def undefined(self) -> bool:
        return self.total == 0


def compute_err(
    mr: MeaningRepresentation,
    text: Sequence[str],
    lexicon: Iterable[tuple[str, ...]] = (),
    ignore: Iterable[str] = DEFAULT_IGNORE_VALUES,
    synonyms: Mapping[str, Sequence[str]] | None = None,
) -> ErrBreakdown:
    """Count missing and redundant slots by exact token matching.

    Required values use multiset semantics: each required occurrence needs its
    own match, surplus matches are redundant. Requested (``?``) slots are
    satisfied by a mention of the slot name. Any other lexicon value found in
    the unmatched part of the text counts once as redundant. Longer values are
    matched first so ``north east`` is not also read as ``north``.
    """
    toks = [t.lower() for t in text]
    used = [False] * len(toks)
    ignore = {v.lower() for v in ignore} | {REQUESTED}
    required: Counter[tuple[str, ...]] = Counter()
    requested = []
    for sv in mr.slots:
        if sv.value == REQUESTED:
            requested.append(sv.name)
        elif sv.value.lower() not in ignore:
            required[value_tokens(sv.value)] += 1

    missing, redundant = 0, 0
    missing_items, redundant_items = [], []
    for value in sorted(required, key=lambda v: (-len(v), v)):
        hits = find_occurrences(toks, value, used)
        for start in hits:
            used[start : start + len(value)] = [True] * len(value)
        need = required[value]
        if len(hits) < need:
            missing += need - len(hits)
            missing_items.extend([" ".join(value)] * (need - len(hits)))
        elif len(hits) > need:
            redundant += len(hits) - need
            redundant_items.extend([" ".join(value)] * (len(hits) - need))
    for name in requested:
        if not any(contains(toks, m) for m in slot_mentions(name, synonyms)):
            missing += 1
            missing_items.append(f"{name}=?")
    for value in sorted(set(lexicon) - set(required), key=lambda v: (-len(v), v)):
        hits = find_occurrences(toks, value, used)
        if hits:
            for start in hits:
                used[start : start + len(value)] = [True] * len(value)
            redundant += 1
            redundant_items.append(" ".join(value))
    return ErrBreakdown(missing, redundant, len(mr.slots), tuple(missing_items), tuple(redundant_items))


def corpus_err(breakdowns: Sequence[ErrBreakdown]) -> float:
    """Total (missing + redundant) over total slots, as a fraction."""
    total = sum(b.total for b in breakdowns)
    if total == 0:
        return 0.0
    return sum(b.missing + b.redundant for b in breakdowns) / total


# -- BLEU -----------------------------------------------------------------


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def corpus_bleu(
    hypotheses: Sequence[Sequence[str]],
    references: Sequence[Sequence[Sequence[str]]],
    max_n: int = 4,
    epsilon: float = 1e-9,
) -> float:
    """Corpus BLEU-4 in [0, 100] with clipped counts and brevity penalty.

    Each hypothesis has a list of references; the effective reference length is
    the closest one (shorter wins ties). Zero n-gram precisions are replaced by
    ``epsilon``.
    """
    if len(hypotheses) != len(references):
        raise LengthMismatch(f"{len(hypotheses)} hypotheses vs {len(references)} reference sets")
    matches = [0] * max_n
    totals = [0] * max_n
    hyp_len = ref_len = 0
    for hyp, refs in zip(hypotheses, references):
        if not refs:
            raise ValueError("every hypothesis needs at least one reference")
        hyp_len += len(hyp)
        ref_len += min((abs(len(r) - len(hyp)), len(r)) for r in refs)[1]
        for n in range(1, max_n + 1):
            counts = _ngrams(hyp, n)
            max_ref = Counter()
            for r in refs:
                max_ref |= _ngrams(r, n)
            matches[n - 1] += sum(min(c, max_ref[g]) for g, c in counts.items())
            totals[n - 1] += max(len(hyp) - n + 1, 0)
    if hyp_len == 0:
        return 0.0
    log_p = 0.0
    for m, t in zip(matches, totals):
        p = m / t if m > 0 else epsilon
        log_p += math.log(p) / max_n
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * bp * math.exp(log_p)


# -- decoding protocol ----------------------------------------------------


@dataclass
class Candidate:
    tokens: tuple[str, ...]
    err: ErrBreakdown
    log_likelihood: float
    index: int


def candidate_seeds(seed: int, k: int) -> list[int]:
    return [derive_seed(seed, i) for i in range(k)]


def best_of_k_batch(
    model: ConditionalGenerator,
    mrs: Sequence[MeaningRepresentation],
    k: int,
    lexicon: Iterable[tuple[str, ...]],
    seeds: Sequence[int],
    nucleus_p: float = 0.9,
    max_len: int = 40,
) -> list[Candidate]:
    """Draw k samples per MR and keep the lowest-ERR one.

    Ties go to the higher likelihood (dropout disabled), then the lower index.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    lexicon = frozenset(lexicon)
    flat_mrs = [mr for mr in mrs for _ in range(k)]
    flat_seeds = [s for seed in seeds for s in candidate_seeds(seed, k)]
    samples = sample_batch(model, flat_mrs, flat_seeds, nucleus_p, max_len)
    scored_pairs = [LabeledPair(mr, s.tokens, Origin.AUGMENTED) for mr, s in zip(flat_mrs, samples)]
    lls = model.score_batch(scored_pairs, [DropoutMask()] * len(scored_pairs))
    best = []
    for n, mr in enumerate(mrs):
        cands = [
            Candidate(samples[n * k + i].tokens, compute_err(mr, samples[n * k + i].tokens, lexicon), float(lls[n * k + i].sum()), i)
            for i in range(k)
        ]
        best.append(min(cands, key=lambda c: (c.err.err, -c.log_likelihood, c.index)))
    return best


def best_of_k(
    model: ConditionalGenerator,
    mr: MeaningRepresentation,
    k: int = 5,
    lexicon: Iterable[tuple[str, ...]] = (),
    seed: int = 0,
    nucleus_p: float = 0.9,
    max_len: int = 40,
) -> tuple[str, ...]:
    return best_of_k_batch(model, [mr], k, lexicon, [seed], nucleus_p, max_len)[0].tokens


@dataclass
class EvalResult:
    bleu: float
    err: float
    n_mrs: int
    n_slots: int
    predictions: list[tuple[MeaningRepresentation, tuple[str, ...]]] = field(default_factory=list)

    def row(self) -> dict:
        return {"bleu": round(self.bleu, 6), "err": round(100.0 * self.err, 6), "n_mrs": self.n_mrs, "n_slots": self.n_slots}


def group_references(pairs: Sequence[LabeledPair]) -> list[tuple[MeaningRepresentation, list[tuple[str, ...]]]]:
    """Group gold pairs by MR, keeping first-seen order."""
    groups: dict[str, tuple[MeaningRepresentation, list]] = {}
    for p in pairs:
        key = render_mr(p.mr)
        if key not in groups:
            groups[key] = (p.mr, [])
        groups[key][1].append(p.text)
    return list(groups.values())


def score_predictions(
    predictions: Sequence[Sequence[str]],
    grouped: Sequence[tuple[MeaningRepresentation, list[tuple[str, ...]]]],
    lexicon: Iterable[tuple[str, ...]],
) -> EvalResult:
    lexicon = frozenset(lexicon)
    bleu = corpus_bleu(predictions, [refs for _, refs in grouped])
    errs = [compute_err(mr, pred, lexicon) for pred, (mr, _) in zip(predictions, grouped)]
    return EvalResult(
        bleu,
        corpus_err(errs),
        len(grouped),
        sum(e.total for e in errs),
        [(mr, tuple(pred)) for pred, (mr, _) in zip(predictions, grouped)],
    )


def evaluate(
    model: ConditionalGenerator,
    pairs: Sequence[LabeledPair],
    lexicon: Iterable[tuple[str, ...]],
    k: int = 5,
    seed: int = 0,
    nucleus_p: float = 0.9,
    max_len: int = 40,
) -> EvalResult:
    """BLEU and ERR of best-of-k outputs, one prediction per distinct MR."""
    grouped = group_references(pairs)
    if not grouped:
        return EvalResult(0.0, 0.0, 0, 0)
    seeds = [derive_seed(seed, n) for n in range(len(grouped))]
    cands = best_of_k_batch(model, [mr for mr, _ in grouped], k, lexicon, seeds, nucleus_p, max_len)
    return score_predictions([c.tokens for c in cands], grouped, lexicon)


def format_report(rows: Sequence[Mapping], title: str = "") -> str:
    """Human-readable table with BLEU / ERR columns per domain."""
    lines = [title] if title else []
    lines.append(f"{'domain':<16}{'BLEU':>10}{'ERR':>10}{'MRs':>8}{'slots':>8}")
    for r in rows:
        lines.append(f"{r['domain']:<16}{r['bleu']:>10.2f}{r['err']:>10.2f}{r['n_mrs']:>8}{r['n_slots']:>8}")
    return "\n".join(lines)


def per_token_entropy(probs: np.ndarray) -> float:
    p = probs[probs > 0]
    return float(-(p * np.log(p)).sum())
