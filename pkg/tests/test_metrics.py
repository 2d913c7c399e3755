"""BLEU, perplexity, and length statistics."""

import math

import numpy as np
import pytest

from treenmt.decoder import sequence_nll
from treenmt.metrics import (
    CountMismatchError,
    EmptyCorpusError,
    avg_hypothesis_length,
    bleu,
    perplexity,
)
from treenmt.subword import EOS_ID

from modelutil import make_model, tree_of


def test_bleu_of_identity_is_one():
    corpus = [["the", "cat", "sat"], ["a", "dog", "ran", "far"],
              ["one", "two", "three", "four", "five"]]
    assert math.isclose(bleu(corpus, corpus), 1.0, rel_tol=0, abs_tol=1e-12)


def test_bleu_hand_example_with_clipping_and_smoothing():
    # "the the the the" vs "the cat sat down": unigram precision clips to
    # 1/4; the empty 2-4 gram matches smooth to 1/6, 1/4, 1/2; equal
    # lengths mean no brevity penalty.
    score = bleu([["the"] * 4], [["the", "cat", "sat", "down"]])
    expected = (1 / 4 * 1 / 6 * 1 / 4 * 1 / 2) ** 0.25
    assert math.isclose(score, expected, rel_tol=0, abs_tol=1e-12)
    assert math.isclose(score, 0.2686, rel_tol=0, abs_tol=5e-5)


def test_bleu_brevity_penalty():
    # p1 = p2 = 1; orders 3-4 have no candidate n-grams and stay neutral
    score = bleu([["a", "b"]], [["a", "b", "c"]])
    assert math.isclose(score, math.exp(1 - 3 / 2), rel_tol=0, abs_tol=1e-12)


def test_bleu_no_penalty_when_candidate_longer():
    score = bleu([["a", "b", "c", "d"]], [["a", "b", "c"]])
    p1, p2, p3 = 3 / 4, 2 / 3, 1 / 2
    p4 = 1 / 2  # no 4-gram match: smoothed at 1/(2*1)
    expected = (p1 * p2 * p3 * p4) ** 0.25
    assert math.isclose(score, expected, rel_tol=0, abs_tol=1e-12)


def test_bleu_zero_unigram_precision_is_zero():
    assert bleu([["x"]], [["y"]]) == 0.0


def test_bleu_repeated_token_clipping():
    # p1 clips to 1/2, the lone unmatched bigram smooths to 1/2
    score = bleu([["the", "the"]], [["the"]])
    assert math.isclose(score, (1 / 2 * 1 / 2) ** 0.25,
                        rel_tol=0, abs_tol=1e-12)


def test_bleu_pools_counts_over_corpus():
    hyps = [["a", "b", "c"], ["d", "e"]]
    refs = [["a", "b", "c"], ["x", "y"]]
    # pooled: p1 = 3/5, p2 = 2/3, p3 = 1/1; no 4-grams exist -> neutral
    expected = (3 / 5 * 2 / 3 * 1 / 1) ** 0.25
    assert math.isclose(bleu(hyps, refs), expected, rel_tol=0, abs_tol=1e-12)


def test_bleu_errors():
    with pytest.raises(CountMismatchError):
        bleu([["a"]], [])
    with pytest.raises(EmptyCorpusError):
        bleu([], [])


def corpus_items():
    return [
        ([4, 5, 6], tree_of("(x a b c)"), [4, 5, EOS_ID]),
        ([6, 5], tree_of("(x d e)"), [5, 4, 6, EOS_ID]),
    ]


def test_uniform_model_perplexity_is_vocab_size():
    model = make_model(d_emb=4, d=6, tgt_vocab=11)
    model.zero_params()
    ppl = perplexity(model, corpus_items())
    assert abs(ppl - 11.0) < 1e-9


def test_perplexity_weights_sentences_by_token_count():
    model = make_model(rng=np.random.default_rng(5), d_emb=4, d=6)
    items = corpus_items()
    totals = []
    counts = []
    for src_ids, tree, tgt_ids in items:
        mean = float(sequence_nll(model, src_ids, tree, tgt_ids).value)
        counts.append(len(tgt_ids))
        totals.append(mean * len(tgt_ids))
    expected = math.exp(sum(totals) / sum(counts))
    assert math.isclose(perplexity(model, items), expected,
                        rel_tol=0, abs_tol=1e-9)


def test_perplexity_empty_corpus():
    model = make_model(d_emb=4, d=6)
    with pytest.raises(EmptyCorpusError):
        perplexity(model, [])


def test_avg_hypothesis_length_excludes_eos():
    assert avg_hypothesis_length([[4, 5, EOS_ID], [4, EOS_ID]]) == 1.5
    assert avg_hypothesis_length([[4, 5, 6]]) == 3.0
