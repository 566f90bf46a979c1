"""The ten acceptance criteria, each at its stated tolerance and time budget.

Every test reports a one-line PASS/FAIL through the ``record`` fixture; the
lines are repeated in the terminal summary.
"""

import json
import math
import time

import numpy as np
import pytest

from fewshot_nlg.corpus import default_toy_spec, synth_toy_corpus
from fewshot_nlg.generator import DropoutMask, GRUGenerator, Vocab, log_likelihood, sample
from fewshot_nlg.metrics import build_lexicon, compute_err, corpus_bleu, corpus_err
from fewshot_nlg.mr import Intent, MalformedMR, MeaningRepresentation, SlotValue, parse_mr, render_mr, tokenize
from fewshot_nlg.refinement import RefinementConfig, refine_decode, refine_decode_batch
from fewshot_nlg.selection import SelectionConfig, Strategy, select
from fewshot_nlg.selftrain import Run, SelfTrainConfig
from fewshot_nlg.uncertainty import UncertaintyScore, estimate
from oracles import brute_force_select, finite_difference_grad, max_relative_error, reference_bleu
from test_metrics import ERR_CASES, ERR_LEXICON, load_bleu_items
from test_refinement import single_track_decode

SEEDS = range(5)


# 1 -------------------------------------------------------------------------


def test_gradient_correctness(record):
    t0 = time.perf_counter()
    split = synth_toy_corpus(default_toy_spec(0), 3, 0, 0, 0)
    model = GRUGenerator(Vocab.build(split.train), 5, 7, 0.2, seed=1)
    rng = np.random.default_rng(101)
    model.p["w_copy"][:] = rng.normal(0, 0.5, model.p["w_copy"].shape)
    model.p["b_copy"][:] = 0.3
    masks = [DropoutMask.stochastic(i) for i in range(len(split.train))]
    _, grad = model.loss_and_grad(split.train, masks)
    err = max_relative_error(grad, finite_difference_grad(model, split.train, masks))
    elapsed = time.perf_counter() - t0
    ok = model.n_params <= 2000 and err < 1e-4 and elapsed < 10
    record(1, ok, f"{model.n_params} params, max relative error {err:.2e} (< 1e-4), {elapsed:.1f}s (< 10s)")
    assert ok


# 2 -------------------------------------------------------------------------


def test_mc_dropout_degeneracy(record):
    t0 = time.perf_counter()
    split = synth_toy_corpus(default_toy_spec(1), 50, 0, 0, 0)
    model = GRUGenerator(Vocab.build(split.train), 32, 48, 0.0, seed=3)
    worst_var = worst_mean = 0.0
    for n, pair in enumerate(split.train):
        score = estimate(model, pair, M=10, seed=n)
        loglik, per_token = log_likelihood(model, DropoutMask.disabled(), pair)
        worst_var = max(worst_var, score.variance)
        worst_mean = max(worst_mean, abs(score.mean - math.exp(loglik / len(per_token))))
    elapsed = time.perf_counter() - t0
    ok = worst_var <= 1e-12 and worst_mean <= 1e-9 and elapsed < 5
    record(2, ok, f"50 pairs, max variance {worst_var:.1e} (<= 1e-12), max mean gap {worst_mean:.1e} (<= 1e-9), {elapsed:.2f}s (< 5s)")
    assert ok


# 3 -------------------------------------------------------------------------


def test_selection_oracle_equivalence(record):
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    aug = [(f"u{i:06d}", float(m), float(v)) for i, (m, v) in enumerate(zip(rng.beta(2, 3, 500), rng.gamma(0.8, 2e-3, 500)))]
    gold = [(f"g{i:06d}", float(m), float(v)) for i, (m, v) in enumerate(zip(rng.beta(4, 2, 50), rng.gamma(0.8, 2e-3, 50)))]
    sizes, mismatches = {}, 0
    for strategy in Strategy:
        out = select(
            [(i, UncertaintyScore(m, v, 10, (0.0,) * 10, 1)) for i, m, v in aug],
            [(i, UncertaintyScore(m, v, 10, (0.0,) * 10, 1)) for i, m, v in gold],
            SelectionConfig(strategy, 0.01),
        )
        expected = brute_force_select(aug, gold, strategy.value, 0.01)
        mismatches += len(set(out.selected) ^ expected)
        sizes[strategy.value] = len(expected)
    elapsed = time.perf_counter() - t0
    ok = mismatches == 0 and elapsed < 1
    record(3, ok, f"500 pairs, 4 strategies, {mismatches} mismatches, selected {sizes}, {elapsed:.2f}s (< 1s)")
    assert ok


# 4 -------------------------------------------------------------------------


def test_refinement_identities(record):
    t0 = time.perf_counter()
    split = synth_toy_corpus(default_toy_spec(2), 30, 0, 0, 100)
    model = GRUGenerator(Vocab.build(split.train, split.unlabeled), 24, 32, 0.3, seed=4)
    model.train_epochs(split.train, 20, 1e-2, batch_size=8)
    mrs = list(split.unlabeled)

    r1_equal = all(
        refine_decode(model, mr, RefinementConfig(R=1, seed=n)) == single_track_decode(model, mr, n)
        for n, mr in enumerate(mrs[:30])
    )
    flat = model.copy()
    flat.dropout = 0.0
    flat_equal = all(
        refine_decode(flat, mr, RefinementConfig(R=10, seed=n)) == sample(flat, mr, seed=n).tokens
        for n, mr in enumerate(mrs[:30])
    )
    traced = refine_decode_batch(model, mrs, list(range(100)), RefinementConfig(R=10), trace=True)
    worst = max(abs(d.sum() - 1.0) for r in traced for d in r.distributions)
    elapsed = time.perf_counter() - t0
    ok = r1_equal and flat_equal and worst <= 1e-9 and elapsed < 10
    record(4, ok, f"R=1 exact: {r1_equal}, dropout 0 exact: {flat_equal}, "
                  f"max |sum-1| over 100 decodes {worst:.1e} (<= 1e-9), {elapsed:.1f}s (< 10s)")
    assert ok


# 5 -------------------------------------------------------------------------


def test_err_oracle(record):
    t0 = time.perf_counter()
    wrong = []
    for case in ERR_CASES:
        b = compute_err(parse_mr(case["mr"]), tokenize(case["text"]), ERR_LEXICON)
        got = (b.missing, b.redundant, b.total, sorted(b.missing_items), sorted(b.redundant_items))
        want = (case["missing"], case["redundant"], case["total"], sorted(case["missing_items"]), sorted(case["redundant_items"]))
        if got != want:
            wrong.append(case["name"])
    split = synth_toy_corpus(default_toy_spec(0), 50, 50, 100, 0)
    lex = build_lexicon(split.all_mrs())
    gold_err = corpus_err([compute_err(p.mr, p.text, lex) for p in split.train + split.dev + split.test])
    elapsed = time.perf_counter() - t0
    ok = len(ERR_CASES) == 30 and not wrong and gold_err == 0.0 and elapsed < 1
    record(5, ok, f"{len(ERR_CASES) - len(wrong)}/{len(ERR_CASES)} fixture cases exact, gold corpus ERR {gold_err}, {elapsed:.2f}s (< 1s)")
    assert ok


# 6 -------------------------------------------------------------------------


def test_bleu_cross_check(record):
    t0 = time.perf_counter()
    hyps, refs = load_bleu_items()
    ours, theirs = corpus_bleu(hyps, refs), reference_bleu(hyps, refs)
    identity = corpus_bleu([r[0] for r in refs], [[r[0]] for r in refs])
    elapsed = time.perf_counter() - t0
    ok = len(hyps) == 50 and abs(ours - theirs) < 1e-6 and abs(identity - 100.0) < 1e-9 and elapsed < 1
    record(6, ok, f"50 sentences, BLEU {ours:.6f} vs reference {theirs:.6f} (diff {abs(ours - theirs):.1e}), "
                  f"identity {identity:.6f}, {elapsed:.2f}s (< 1s)")
    assert ok


# 7 and 8 ---------------------------------------------------------------------


@pytest.fixture(scope="module")
def toy_sweep():
    """Five seeds of the toy corpus (50 train / 500 unlabeled), three arms each."""
    t0 = time.perf_counter()
    arms = {"hmhv": {}, "lmlv": {"strategy": Strategy.LOW_MEAN_LOW_VAR.value}, "no_filter": {"filter_enabled": False}}
    results = {name: [] for name in list(arms) + ["warmup"]}
    for seed in SEEDS:
        split = synth_toy_corpus(default_toy_spec(seed), 50, 50, 100, 500)
        for name, extra in arms.items():
            report = Run(SelfTrainConfig(seed=seed, **extra), split).run()
            results[name].append((report["test"]["bleu"], report["test"]["err"]))
            if name == "hmhv":
                results["warmup"].append((report["warmup_test"]["bleu"], report["warmup_test"]["err"]))
    return {k: np.array(v) for k, v in results.items()}, time.perf_counter() - t0


@pytest.mark.slow
def test_end_to_end_trend(toy_sweep, record):
    res, elapsed = toy_sweep
    hmhv, lmlv, warm = (res[k][:, 0].mean() for k in ("hmhv", "lmlv", "warmup"))
    ok = hmhv >= lmlv and hmhv - warm >= 1.0 and elapsed < 15 * 60
    record(7, ok, f"mean test BLEU over 5 seeds: high-mean-high-var {hmhv:.2f} >= low-mean-low-var {lmlv:.2f}; "
                  f"gain over warm-up {warm:.2f} is {hmhv - warm:+.2f} (>= 1); sweep {elapsed / 60:.1f} min (< 15)")
    assert ok


@pytest.mark.slow
def test_filter_ablation(toy_sweep, record):
    res, elapsed = toy_sweep
    filtered, unfiltered = res["hmhv"][:, 1].mean(), res["no_filter"][:, 1].mean()
    ok = unfiltered >= filtered and elapsed < 15 * 60
    record(8, ok, f"mean test ERR over 5 seeds: without filter {unfiltered:.2f} >= with filter {filtered:.2f}")
    assert ok


# 9 -------------------------------------------------------------------------


@pytest.mark.slow
def test_determinism(tmp_path, record):
    t0 = time.perf_counter()
    split = synth_toy_corpus(default_toy_spec(0), 50, 50, 100, 500)
    cfg = SelfTrainConfig(seed=0)
    reports = [Run(cfg, split, tmp_path / name).run() for name in ("a", "b")]
    dumps_equal = all(
        (tmp_path / "a" / f"iter_{it:02d}" / "pseudo.txt").read_bytes()
        == (tmp_path / "b" / f"iter_{it:02d}" / "pseudo.txt").read_bytes()
        for it in range(1, cfg.iterations + 1)
    )
    reports_equal = (tmp_path / "a" / "report.json").read_bytes() == (tmp_path / "b" / "report.json").read_bytes()
    n_pseudo = sum(r["n_pseudo"] for r in json.loads((tmp_path / "a" / "report.json").read_text())["iterations"])
    elapsed = time.perf_counter() - t0
    ok = dumps_equal and reports_equal and reports[0] == reports[1] and elapsed < 15 * 60
    record(9, ok, f"pseudo-label dumps identical: {dumps_equal} ({n_pseudo} pairs over {cfg.iterations} iterations), "
                  f"reports identical: {reports_equal}, {elapsed:.0f}s (< 15 min)")
    assert ok


# 10 ------------------------------------------------------------------------

_NAME = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJ_0123456789"
_VALUE = _NAME + "'-.,?!@&=:/"


def _random_mr(rng):
    def word(chars, lo, hi):
        return "".join(rng.choice(list(chars), rng.integers(lo, hi + 1)))

    intents = []
    for _ in range(rng.integers(1, 4)):
        slots = tuple(
            SlotValue(word(_NAME, 1, 8), " ".join(word(_VALUE, 1, 6) for _ in range(rng.integers(1, 4))))
            for _ in range(rng.integers(0, 5))
        )
        intents.append(Intent(word(_NAME, 1, 10), slots))
    return MeaningRepresentation(tuple(intents))


def test_parser_fuzz(record):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    crashes = 0
    alphabet = np.frombuffer(b"()=;@& \tabcxyz?_\n\x00\xff\xc3", dtype=np.uint8)
    for n in range(100_000):
        size = int(rng.integers(0, 48))
        # half uniform bytes, half drawn from the grammar's punctuation
        data = rng.integers(0, 256, size, dtype=np.uint8) if n % 2 else rng.choice(alphabet, size)
        try:
            parse_mr(data.tobytes())
        except MalformedMR:
            pass
        except Exception:  # noqa: BLE001 - any other exception is a crash
            crashes += 1
    spec = default_toy_spec(0)
    mrs = [spec.draw(rng).mr for _ in range(5_000)] + [_random_mr(rng) for _ in range(5_000)]
    bad = sum(parse_mr(render_mr(mr)) != mr or render_mr(parse_mr(render_mr(mr))) != render_mr(mr) for mr in mrs)
    elapsed = time.perf_counter() - t0
    ok = crashes == 0 and bad == 0 and elapsed < 30
    record(10, ok, f"100000 random byte strings, {crashes} crashes; 10000 generated MRs, {bad} round-trip failures; {elapsed:.1f}s (< 30s)")
    assert ok
