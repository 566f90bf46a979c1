import numpy as np
import pytest

from fewshot_nlg.corpus import default_toy_spec, synth_toy_corpus
from fewshot_nlg.generator import DropoutMask, GRUGenerator, Vocab, draw_tokens, sample, sampling_distribution, softmax
from fewshot_nlg.metrics import build_lexicon, per_token_entropy
from fewshot_nlg.mr import parse_mr
from fewshot_nlg.refinement import (
    RefinementConfig,
    average_logits,
    build_pseudo_set,
    refine_decode,
    refine_decode_batch,
    slot_match_filter,
    track_seeds,
)
from oracles import filter_recheck


@pytest.fixture(scope="module")
def toy():
    return synth_toy_corpus(default_toy_spec(2), 30, 0, 0, 100)


@pytest.fixture(scope="module")
def trained(toy):
    m = GRUGenerator(Vocab.build(toy.train, toy.unlabeled), 24, 32, 0.3, seed=4)
    m.train_epochs(toy.train, 25, 1e-2, batch_size=8)
    return m


def single_track_decode(model, mr, seed, nucleus_p=0.9, max_len=40):
    """Plain loop: one stochastic mask, softmax of its logits, inverse-CDF draw."""
    mask = DropoutMask.stochastic(track_seeds(seed, 1)[0])
    state, logits = model.init_decode([model.encode_prefix(mr)], [mask])
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(max_len):
        probs = sampling_distribution(softmax(logits), model.vocab, nucleus_p)
        tok = draw_tokens(probs, np.array([rng.random()]))
        if tok[0] == model.vocab.eos:
            break
        out.append(int(tok[0]))
        logits = model.advance(state, tok)
    return tuple(model.vocab.words(out))


def test_r1_equals_single_stochastic_decode(toy, trained):
    for n, mr in enumerate(toy.unlabeled[:20]):
        cfg = RefinementConfig(R=1, seed=100 + n)
        assert refine_decode(trained, mr, cfg) == single_track_decode(trained, mr, 100 + n)


def test_zero_dropout_equals_deterministic_sampling(toy, trained):
    flat = trained.copy()
    flat.dropout = 0.0
    for n, mr in enumerate(toy.unlabeled[:20]):
        cfg = RefinementConfig(R=10, seed=n)
        assert refine_decode(flat, mr, cfg) == sample(flat, mr, seed=n).tokens


def test_batch_equals_single(toy, trained):
    mrs = list(toy.unlabeled[:8])
    seeds = list(range(8))
    cfg = RefinementConfig(R=4)
    batch = refine_decode_batch(trained, mrs, seeds, cfg)
    for mr, seed, res in zip(mrs, seeds, batch):
        assert refine_decode(trained, mr, RefinementConfig(R=4, seed=seed)) == res.tokens


def test_aggregated_distributions_are_normalized(toy, trained):
    res = refine_decode_batch(trained, list(toy.unlabeled[:50]), list(range(50)), RefinementConfig(R=5), trace=True)
    for r in res:
        assert r.distributions
        for d in r.distributions + r.single_mask_distributions:
            assert abs(d.sum() - 1.0) < 1e-9
            assert np.all(d >= 0)


def test_entropy_report(toy, trained):
    r = refine_decode_batch(trained, [toy.unlabeled[0]], [0], RefinementConfig(R=10), trace=True)[0]
    agg = [per_token_entropy(d) for d in r.distributions]
    single = [per_token_entropy(d) for d in r.single_mask_distributions]
    assert len(agg) == len(single) >= 1
    assert all(0.0 <= h <= np.log(len(trained.vocab)) + 1e-12 for h in agg + single)


def test_average_of_identical_rows_is_exact():
    rng = np.random.default_rng(0)
    row = rng.normal(size=(1, 1, 7)) * 1e3
    stacked = np.repeat(row, 10, axis=1)
    assert np.array_equal(average_logits(stacked), row[:, 0])
    two = np.array([[[1.0, 3.0], [3.0, 5.0]]])
    np.testing.assert_allclose(average_logits(two), [[2.0, 4.0]])


def test_invalid_config():
    with pytest.raises(ValueError):
        RefinementConfig(R=0)
    with pytest.raises(ValueError):
        RefinementConfig(nucleus_p=1.5)


# -- slot filter -------------------------------------------------------------

LEX = build_lexicon([parse_mr("inform ( name = golden curry ; food = chinese ; area = north east )"),
                     parse_mr("inform ( food = italian ; area = north )")])


@pytest.mark.parametrize(
    "mr, text, accepted",
    [
        ("inform ( name = golden curry ; food = chinese )", "golden curry serves chinese food", True),
        ("inform ( name = golden curry ; food = chinese )", "golden curry serves food", False),
        ("inform ( food = chinese )", "chinese or italian", False),
        ("inform ( area = north east )", "in the north east", True),
        ("inform ( area = north )", "in the north east", False),
        ("inform ( area = north east )", "in the north east", True),
        ("request ( area = ? )", "which area ?", True),
        ("request ( area = ? )", "which one ?", False),
        ("inform ( food = dont_care )", "any food", True),
        ("hello ( )", "hi", True),
    ],
)
def test_slot_match_filter(mr, text, accepted):
    assert slot_match_filter(parse_mr(mr), text.split(), LEX).accepted is accepted


def test_filter_reasons_name_the_problem():
    res = slot_match_filter(parse_mr("inform ( food = chinese )"), "italian food".split(), LEX)
    assert "missing value 'chinese'" in res.reasons
    assert "redundant value 'italian'" in res.reasons


def test_pseudo_set_only_admits_filtered_pairs(toy, trained):
    lexicon = build_lexicon([p.mr for p in toy.train] + list(toy.unlabeled))
    chosen = [(f"u{n}", mr) for n, mr in enumerate(toy.unlabeled[:60])]
    pseudo = build_pseudo_set(trained, chosen, RefinementConfig(R=5, seed=3), lexicon)
    assert len(pseudo.records) == 60
    for pair in pseudo.pairs:
        assert filter_recheck(pair.mr, pair.text, lexicon)
    assert sum(r[2] for r in pseudo.records) == len(pseudo.pairs)
    assert sum(pseudo.rejections.values()) >= 60 - len(pseudo.pairs)


def test_pseudo_set_skips_gold_mrs_even_without_filter(toy, trained):
    gold_mr = toy.train[0].mr
    cfg = RefinementConfig(R=2, filter_enabled=False)
    pseudo = build_pseudo_set(trained, [("x", gold_mr), ("y", toy.unlabeled[0])], cfg, gold_mrs=[gold_mr])
    assert pseudo.records[0][2] is False
    assert pseudo.records[0][3] == "mr already has a gold response"
    assert [p.mr for p in pseudo.pairs] == ([toy.unlabeled[0]] if pseudo.records[1][2] else [])
