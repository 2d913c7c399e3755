"""Greedy and length-synchronous beam decoding.

Both searches score candidates with the same ordering key — descending
total log-probability, with exact ties going to non-`<eos>` tokens first
and then to the lowest token id — so a beam of one reproduces greedy
decoding bit for bit. Partial hypotheses compete on total log-prob;
hypotheses that emit `<eos>` leave the beam, and the winner is the
finished hypothesis with the best mean per-token log-prob (the `<eos>`
token counts). If nothing finishes by max_len, the best unfinished
hypothesis by the same mean wins.

`<pad>`, `<bos>`, and `<unk>` are never generated.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .decoder import AttentionCache, decoder_step, init_decoder_state
from .encoder import encode
from .subword import BOS_ID, EOS_ID, PAD_ID, UNK_ID
from .tape import Tape


class EmptySourceError(ValueError):
    pass


_BLOCKED = (PAD_ID, BOS_ID, UNK_ID)


@dataclass
class StepTrace:
    """What the inspector wants from one decoding step."""

    token_id: int
    beta: float  # NaN in unweighted mode
    alpha: np.ndarray


@dataclass
class Hypothesis:
    ids: list = field(default_factory=list)
    logprob: float = 0.0
    traces: list = None

    @property
    def finished(self) -> bool:
        return bool(self.ids) and self.ids[-1] == EOS_ID

    def mean_logprob(self) -> float:
        return self.logprob / len(self.ids) if self.ids else 0.0


def _log_softmax(logits):
    shifted = logits - logits.max()
    return shifted - np.log(np.exp(shifted).sum())


def _candidate_key(total, token_id):
    return (-total, token_id == EOS_ID, token_id)


class _Searcher:
    """Shared per-sentence machinery: one tape, one attention cache."""

    def __init__(self, model, src_ids, tree, trace=False):
        if not list(src_ids):
            raise EmptySourceError("cannot decode an empty source sentence")
        self.model = model
        self.trace = trace
        self.tape = Tape()
        encoded = encode(self.tape, src_ids, tree, model.params, model.config)
        self.cache = AttentionCache(self.tape, encoded, model.params)
        self.s0, self.c0 = init_decoder_state(self.tape, encoded,
                                              model.params, model.config)

    def advance(self, y_prev, s, c):
        """Run one decoder step; returns (logprobs, new_s, new_c, trace)."""
        step = decoder_step(self.tape, y_prev, s, c, self.cache,
                            self.model.params, self.model.config)
        logprobs = _log_softmax(step.logits.value.copy())
        logprobs[list(_BLOCKED)] = -np.inf
        entry = None
        if self.trace:
            beta = step.beta_value()
            entry = StepTrace(token_id=-1,
                              beta=float("nan") if beta is None else beta,
                              alpha=step.alpha.value.copy())
        return logprobs, step.s, step.c, entry


def greedy_decode(model, src_ids, tree, max_len, trace=False) -> Hypothesis:
    """Pick the best next token at every step."""
    searcher = _Searcher(model, src_ids, tree, trace=trace)
    s, c = searcher.s0, searcher.c0
    hyp = Hypothesis(traces=[] if trace else None)
    y_prev = BOS_ID
    for _ in range(max_len):
        logprobs, s, c, entry = searcher.advance(y_prev, s, c)
        token = min(range(len(logprobs)),
                    key=lambda t: _candidate_key(hyp.logprob + logprobs[t], t))
        hyp.ids.append(token)
        hyp.logprob += logprobs[token]
        if entry is not None:
            entry.token_id = token
            hyp.traces.append(entry)
        if token == EOS_ID:
            break
        y_prev = token
    return hyp


@dataclass
class _Beam:
    ids: list
    logprob: float
    s: object
    c: object
    traces: list


def beam_search(model, src_ids, tree, beam=5, max_len=50,
                trace=False) -> Hypothesis:
    """Length-synchronous beam search; returns a single best hypothesis."""
    if beam < 1:
        raise ValueError("beam size must be >= 1")
    searcher = _Searcher(model, src_ids, tree, trace=trace)
    live = [_Beam(ids=[], logprob=0.0, s=searcher.s0, c=searcher.c0,
                  traces=[] if trace else None)]
    finished = []
    for _ in range(max_len):
        candidates = []
        for parent_idx, parent in enumerate(live):
            y_prev = parent.ids[-1] if parent.ids else BOS_ID
            logprobs, s, c, entry = searcher.advance(y_prev, parent.s,
                                                     parent.c)
            for token in range(len(logprobs)):
                lp = logprobs[token]
                if lp == -np.inf:
                    continue
                total = parent.logprob + lp
                key = _candidate_key(total, token) + (parent_idx,)
                candidates.append((key, total, token, parent, s, c, entry))
        candidates.sort(key=lambda item: item[0])
        live = []
        for _, total, token, parent, s, c, entry in candidates[:beam]:
            traces = parent.traces
            if traces is not None:
                stamped = StepTrace(token_id=token, beta=entry.beta,
                                    alpha=entry.alpha)
                traces = traces + [stamped]
            child = _Beam(ids=parent.ids + [token], logprob=total, s=s, c=c,
                          traces=traces)
            if token == EOS_ID:
                finished.append(child)
            else:
                live.append(child)
        if not live:
            break
    pool = finished if finished else live
    best = min(pool, key=lambda h: (-_mean(h), h.ids))
    return Hypothesis(ids=best.ids, logprob=best.logprob, traces=best.traces)


def _mean(hyp) -> float:
    return hyp.logprob / len(hyp.ids) if hyp.ids else 0.0
