"""Corpus-level BLEU, perplexity, and hypothesis-length statistics."""

from __future__ import annotations

import math
from collections import Counter
from statistics import fmean

from .decoder import nll_parts
from .subword import EOS_ID
from .tape import Tape

MAX_ORDER = 4


class MetricsError(ValueError):
    pass


class CountMismatchError(MetricsError):
    pass


class EmptyCorpusError(MetricsError):
    pass


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(hypotheses, references) -> float:
    """Corpus BLEU with clipped 1-4 gram precisions and brevity penalty.

    A zero precision at order n >= 2 is smoothed to 1 / (2 * t_n) where
    t_n is the candidate n-gram count; an order with no candidate
    n-grams at all contributes the neutral factor 1 (this keeps
    identity at exactly 1 for corpora of short sentences). A zero
    unigram precision makes the whole score 0.
    """
    hypotheses = list(hypotheses)
    references = list(references)
    if len(hypotheses) != len(references):
        raise CountMismatchError(
            f"{len(hypotheses)} hypotheses vs {len(references)} references")
    if not hypotheses:
        raise EmptyCorpusError("nothing to score")
    matches = [0] * MAX_ORDER
    totals = [0] * MAX_ORDER
    c = 0
    r = 0
    for hyp, ref in zip(hypotheses, references):
        hyp = list(hyp)
        ref = list(ref)
        c += len(hyp)
        r += len(ref)
        for n in range(1, MAX_ORDER + 1):
            hyp_counts = _ngrams(hyp, n)
            ref_counts = _ngrams(ref, n)
            for gram, count in hyp_counts.items():
                matches[n - 1] += min(count, ref_counts.get(gram, 0))
            totals[n - 1] += sum(hyp_counts.values())
    if totals[0] == 0 or matches[0] == 0:
        return 0.0
    log_sum = 0.0
    for n in range(MAX_ORDER):
        if totals[n] == 0:
            continue
        if matches[n] > 0:
            p = matches[n] / totals[n]
        else:
            p = 1.0 / (2.0 * totals[n])
        log_sum += math.log(p)
    bp = 1.0 if c >= r else math.exp(1.0 - r / c)
    return bp * math.exp(log_sum / MAX_ORDER)


def perplexity(model, items) -> float:
    """exp(mean per-token NLL) over (source ids, tree, target ids) triples."""
    items = list(items)
    if not items:
        raise EmptyCorpusError("nothing to score")
    total = 0.0
    tokens = 0
    for src_ids, tree, tgt_ids in items:
        part, count = nll_parts(Tape(), model, src_ids, tree, tgt_ids)
        total += float(part.value)
        tokens += count
    return math.exp(total / tokens)


def avg_hypothesis_length(id_sequences, eos_id=EOS_ID) -> float:
    """Mean emitted length, not counting the end-of-sentence token."""
    return fmean(sum(1 for t in ids if t != eos_id) for ids in id_sequences)
