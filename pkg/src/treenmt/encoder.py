"""The bidirectional hierarchical encoder.

Three passes over one source sentence and its binary tree:

1. leaf pass — forward and backward GRUs over the token embeddings; each
   leaf state is the concatenation of the two half-size directions;
2. bottom-up pass — a tree-structured GRU with separate reset gates for the
   left and right child composes a phrase state h_up at every internal node;
3. top-down pass — starting from h_down(root) = h_up(root), a GRU with
   side-specific parameters pushes global context down every edge; the
   post-pass states are the final annotations for attention.

The `<eos>` marker joins the sequential pass and is exposed as an extra
attendable state, but it has no tree node, mirroring a layout where the
end marker has sequential edges only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tape as T
from .model import GATE_NAMES, UnknownTokenIdError
from .subword import AlignmentMismatchError, EOS_ID
from .trees import SyntaxTree, enumerate_nodes


def _gate_vars(tape, params, prefix):
    return {n: tape.param(params[f"{prefix}.{n}"]) for n in GATE_NAMES}


def gru_cell(x, h, g):
    """Standard GRU: h' = (1-z) ⊙ h + z ⊙ h̃."""
    z = T.sigmoid(T.add(T.affine(g["Wz"], x, g["bz"]), T.matvec(g["Uz"], h)))
    r = T.sigmoid(T.add(T.affine(g["Wr"], x, g["br"]), T.matvec(g["Ur"], h)))
    hbar = T.tanh(T.add(T.affine(g["Wh"], x, g["bh"]),
                        T.matvec(g["Uh"], T.mul(r, h))))
    return T.add(T.mul(T.rsub_const(1.0, z), h), T.mul(z, hbar))


def encode_leaves(tape, token_ids, params, config):
    """Sequential pass over the leaves (``<eos>`` already appended by the
    caller). Returns one state per position: [→h ; ←h], or →h alone with
    full width when the backward direction is disabled."""
    vocab_rows = params["enc.emb"].value.shape[0]
    for idx in token_ids:
        if not 0 <= idx < vocab_rows:
            raise UnknownTokenIdError(f"source token id {idx} out of range")
    emb = tape.param(params["enc.emb"])
    xs = [T.embedding(emb, i) for i in token_ids]

    fwd = _gate_vars(tape, params, "enc.fwd")
    leaf_dim = params["enc.fwd.bz"].value.shape[0]
    h = tape.leaf(np.zeros(leaf_dim))
    forward = []
    for x in xs:
        h = gru_cell(x, h, fwd)
        forward.append(h)

    if not config.backward_leaf:
        return forward

    bwd = _gate_vars(tape, params, "enc.bwd")
    h = tape.leaf(np.zeros(leaf_dim))
    backward = [None] * len(xs)
    for i in range(len(xs) - 1, -1, -1):
        h = gru_cell(xs[i], h, bwd)
        backward[i] = h
    return [T.concat([f, b]) for f, b in zip(forward, backward)]


def tree_gru_node(tape, h_left, h_right, params):
    """Bottom-up composition of two child states into the parent h_up:

    z   = σ(UL_z h_L + UR_z h_R + b_z)
    r_L = σ(UL_rl h_L + UR_rl h_R + b_rl)    r_R analogous
    h̃   = tanh(UL_h (r_L ⊙ h_L) + UR_h (r_R ⊙ h_R) + b_h)
    h_up = z ⊙ h̃ + (1−z) ⊙ (h_L + h_R)

    Note the mixing: (1−z) weights the *sum* of the children.
    """
    p = lambda n: tape.param(params[f"enc.tree.{n}"])
    z = T.sigmoid(T.add(T.affine(p("UL_z"), h_left, p("b_z")),
                        T.matvec(p("UR_z"), h_right)))
    r_l = T.sigmoid(T.add(T.affine(p("UL_rl"), h_left, p("b_rl")),
                          T.matvec(p("UR_rl"), h_right)))
    r_r = T.sigmoid(T.add(T.affine(p("UL_rr"), h_left, p("b_rr")),
                          T.matvec(p("UR_rr"), h_right)))
    hbar = T.tanh(T.add(T.affine(p("UL_h"), T.mul(r_l, h_left), p("b_h")),
                        T.matvec(p("UR_h"), T.mul(r_r, h_right))))
    return T.add(T.mul(z, hbar),
                 T.mul(T.rsub_const(1.0, z), T.add(h_left, h_right)))


def encode_bottom_up(tape, table, leaf_states, params):
    """h_up for every node, keyed by span; leaves start at their leaf state."""
    up = {}
    for leaf, state in zip(table.leaves, leaf_states):
        up[leaf.span] = state
    for node in table.internals:
        left, right = node.children
        up[node.span] = tree_gru_node(tape, up[left.span], up[right.span], params)
    return up


def top_down_child(tape, h_child_up, h_parent_down, side, params):
    """One top-down edge with the side-specific GRU parameter set."""
    g = _gate_vars(tape, params, f"enc.td.{side}")
    return gru_cell(h_child_up, h_parent_down, g)


def encode_top_down(tape, table, up, params):
    """h_down everywhere; the root reuses its h_up object, so root equality
    is bit-exact by construction. Parents are visited before children."""
    root_span = (table.internals[-1].span if table.internals
                 else table.leaves[0].span)
    down = {root_span: up[root_span]}
    for node in reversed(table.internals):
        for side, child in zip(("left", "right"), node.children):
            down[child.span] = top_down_child(
                tape, up[child.span], down[node.span], side, params)
    return down


@dataclass
class EncodedSource:
    """Final annotations of one sentence: per-leaf and per-phrase vectors
    (phrases in bottom-up order), the optional eos state, the node table,
    and the root's bottom-up state for decoder initialization."""

    leaf_states: list
    phrase_states: list
    eos_state: object
    node_table: object
    root_up: object

    @property
    def n_annotations(self):
        return (len(self.leaf_states) + len(self.phrase_states)
                + (1 if self.eos_state is not None else 0))


def encode(tape, token_ids, tree: SyntaxTree, params, config) -> EncodedSource:
    """Run all passes for one sentence. ``token_ids`` align with the tree
    leaves; the ``<eos>`` id is appended here for the sequential pass."""
    if len(token_ids) != tree.n_leaves:
        raise AlignmentMismatchError(
            f"{len(token_ids)} token ids vs {tree.n_leaves} tree leaves"
        )
    table = enumerate_nodes(tree)
    seq_states = encode_leaves(tape, list(token_ids) + [EOS_ID], params, config)
    leaf_states, eos_state = seq_states[:-1], seq_states[-1]

    up = encode_bottom_up(tape, table, leaf_states, params)
    root_span = (table.internals[-1].span if table.internals
                 else table.leaves[0].span)
    if config.top_down:
        down = encode_top_down(tape, table, up, params)
    else:
        down = up

    return EncodedSource(
        leaf_states=[down[leaf.span] for leaf in table.leaves],
        phrase_states=[down[node.span] for node in table.internals],
        eos_state=eos_state if config.attend_eos else None,
        node_table=table,
        root_up=up[root_span],
    )
