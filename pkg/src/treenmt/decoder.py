"""Attention decoder over words and phrases with a learned gating scalar.

Per output step: the recurrent state consumes the previous target embedding
concatenated with the previous composite state (input feeding); attention
scores e_t = V_a' tanh(U_a s + W_a h_t + b_a) are normalized jointly over
all annotations (leaves, phrases, eos); the context is

    d = (1-β) Σ_lex α h  +  β Σ_phrase α h

with β = σ(W_β c_prev + b_β) in gating mode, a constant in the fixed modes,
and the plain two-group sum in unweighted mode. The composite state
c = tanh(W_c [s; d] + b_c) feeds both the output logits and the next step.

The eos annotation belongs to the lexical group: it is a word-level state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tape as T
from .encoder import EncodedSource, _gate_vars, encode, gru_cell
from .model import UnknownTokenIdError, beta_fixed_value
from .subword import BOS_ID, EOS_ID
from .tape import Tape


class EmptyTargetError(ValueError):
    pass


class AnnotationGroups:
    """Stacked lexical (leaves + eos) and phrase annotation matrices."""

    def __init__(self, leaf_states, phrase_states, eos_state):
        leaves = list(leaf_states)
        phrases = list(phrase_states)
        self.n_leaves = len(leaves)
        self.n_phrases = len(phrases)
        self.has_eos = eos_state is not None
        self.size = self.n_leaves + self.n_phrases + (1 if self.has_eos else 0)
        lex = leaves + ([eos_state] if self.has_eos else [])
        self.H_lex = T.stack_rows(lex)
        self.H_phr = T.stack_rows(phrases) if phrases else None


class AttentionCache(AnnotationGroups):
    """Per-sentence annotation stack with W_a h_t precomputed for all nodes.

    Annotation order is fixed: leaves left-to-right, internals bottom-up,
    eos last.
    """

    def __init__(self, tape, encoded: EncodedSource, params):
        super().__init__(encoded.leaf_states, encoded.phrase_states,
                         encoded.eos_state)
        nodes = list(encoded.leaf_states) + list(encoded.phrase_states)
        if encoded.eos_state is not None:
            nodes.append(encoded.eos_state)
        self.H = T.stack_rows(nodes)
        self.A = T.matmul_nt(self.H, tape.param(params["dec.att.W_a"]))


def _scores(tape, A, s, params):
    u = T.affine(tape.param(params["dec.att.U_a"]), s,
                 tape.param(params["dec.att.b_a"]))
    hidden = T.tanh(T.add_rowvec(A, u))
    return T.matvec(hidden, tape.param(params["dec.att.V_a"]))


def attention_scores(tape, s, annotations, params):
    """One scalar score per annotation, in the given order."""
    H = T.stack_rows(annotations)
    A = T.matmul_nt(H, tape.param(params["dec.att.W_a"]))
    return _scores(tape, A, s, params)


def attention_weights(scores):
    """Joint softmax across all annotations at once."""
    return T.softmax(scores)


def gating_scalar(tape, c_prev, params):
    """β = σ(W_β c_prev + b_β), a scalar in (0,1)."""
    w = tape.param(params["dec.beta.W"])
    b = tape.param(params["dec.beta.b"])
    return T.sigmoid(T.add(T.dot(w, c_prev), b))


def _lex_weights(alpha, groups):
    n, k = groups.n_leaves, groups.n_phrases
    if groups.has_eos:
        return T.concat([T.slice_vec(alpha, 0, n),
                         T.slice_vec(alpha, n + k, n + k + 1)])
    return T.slice_vec(alpha, 0, n)


def _combine_context(alpha, groups, beta_mode, beta):
    lex = T.vecmat(_lex_weights(alpha, groups), groups.H_lex)
    phr = None
    if groups.n_phrases:
        a_phr = T.slice_vec(alpha, groups.n_leaves,
                            groups.n_leaves + groups.n_phrases)
        phr = T.vecmat(a_phr, groups.H_phr)

    if beta_mode == "unweighted":
        return T.add(lex, phr) if phr is not None else lex
    if isinstance(beta, T.Var):  # gating: β is on the tape
        lex_part = T.smul(T.rsub_const(1.0, beta), lex)
        if phr is None:
            return lex_part
        return T.add(lex_part, T.smul(beta, phr))
    b = float(beta)
    lex_part = T.scale(lex, 1.0 - b)
    if phr is None:
        return lex_part
    return T.add(lex_part, T.scale(phr, b))


def context_vector(alpha, beta_mode, beta, leaf_states, phrase_states,
                   eos_state=None):
    """Combine annotation groups into the context d (standalone entry point
    sharing the cached path's arithmetic)."""
    groups = AnnotationGroups(leaf_states, phrase_states, eos_state)
    return _combine_context(alpha, groups, beta_mode, beta)


@dataclass
class DecoderStep:
    """Everything one step produces (all tape variables)."""

    s: T.Var
    d_ctx: T.Var
    c: T.Var
    beta: object  # Var in gating mode, float in fixed modes, None unweighted
    alpha: T.Var
    logits: T.Var

    def beta_value(self):
        if isinstance(self.beta, T.Var):
            return float(self.beta.value)
        return self.beta


def init_decoder_state(tape, encoded: EncodedSource, params, config):
    """s_0 = tanh(W_init h_up(root) + b_init); c_0 = 0; y_0 is <bos>."""
    s0 = T.tanh(T.affine(tape.param(params["dec.init.W"]), encoded.root_up,
                         tape.param(params["dec.init.b"])))
    c0 = tape.leaf(np.zeros(config.d_c))
    return s0, c0


def decoder_step(tape, y_prev, s_prev, c_prev, cache: AttentionCache, params,
                 config) -> DecoderStep:
    vocab_rows = params["dec.emb"].value.shape[0]
    if not 0 <= y_prev < vocab_rows:
        raise UnknownTokenIdError(f"target token id {y_prev} out of range")
    x = T.concat([T.embedding(tape.param(params["dec.emb"]), y_prev), c_prev])
    s = gru_cell(x, s_prev, _gate_vars(tape, params, "dec.gru"))

    alpha = attention_weights(_scores(tape, cache.A, s, params))

    mode = config.beta_mode
    if mode == "gating":
        beta = gating_scalar(tape, c_prev, params)
    else:
        beta = beta_fixed_value(mode)  # None in unweighted mode
    d_ctx = _combine_context(alpha, cache, mode, beta)

    c = T.tanh(T.affine(tape.param(params["dec.comp.W"]), T.concat([s, d_ctx]),
                        tape.param(params["dec.comp.b"])))
    logits = T.affine(tape.param(params["dec.out.W"]), c,
                      tape.param(params["dec.out.b"]))
    return DecoderStep(s=s, d_ctx=d_ctx, c=c, beta=beta, alpha=alpha,
                       logits=logits)


def nll_parts(tape, model, src_ids, tree, tgt_ids):
    """Total teacher-forced NLL and token count for one sentence pair."""
    tgt_ids = list(tgt_ids)
    if not tgt_ids:
        raise EmptyTargetError("empty target sentence")
    if tgt_ids[-1] != EOS_ID:
        raise ValueError("target must end with the <eos> id")
    encoded = encode(tape, src_ids, tree, model.params, model.config)
    cache = AttentionCache(tape, encoded, model.params)
    s, c = init_decoder_state(tape, encoded, model.params, model.config)
    y_prev = BOS_ID
    losses = []
    for y in tgt_ids:
        step = decoder_step(tape, y_prev, s, c, cache, model.params,
                            model.config)
        losses.append(T.cross_entropy(step.logits, y))
        s, c, y_prev = step.s, step.c, y
    total = losses[0] if len(losses) == 1 else T.add_n(*losses)
    return total, len(tgt_ids)


def sequence_nll(model, src_ids, tree, tgt_ids, tape=None):
    """Mean per-token negative log-likelihood under teacher forcing."""
    tape = tape if tape is not None else Tape()
    total, count = nll_parts(tape, model, src_ids, tree, tgt_ids)
    return T.scale(total, 1.0 / count)
