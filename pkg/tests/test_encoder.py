import numpy as np
import pytest

from gradcheck import fd_param_grads, max_rel_err
from treenmt import tape as T
from treenmt.encoder import (
    EncodedSource,
    encode,
    encode_bottom_up,
    encode_leaves,
    encode_top_down,
    gru_cell,
    top_down_child,
    tree_gru_node,
)
from modelutil import (
    make_model,
    np_sigmoid,
    oracle_gru,
    oracle_tree_gru,
    tree_of,
)
from treenmt.model import UnknownTokenIdError
from treenmt.subword import AlignmentMismatchError, EOS_ID
from treenmt.tape import Tape, backward, param_grads
from treenmt.trees import enumerate_nodes


def test_encode_leaves_zero_params_zero_states():
    model = make_model().zero_params()
    tp = Tape()
    states = encode_leaves(tp, [4, 5, 6, EOS_ID], model.params, model.config)
    for s in states:
        assert np.array_equal(s.value, np.zeros(6))


def test_encode_leaves_single_token_dims():
    model = make_model(np.random.default_rng(0))
    tp = Tape()
    states = encode_leaves(tp, [7], model.params, model.config)
    assert len(states) == 1
    assert states[0].shape == (6,)


def test_encode_leaves_reversal_symmetry():
    rng = np.random.default_rng(1)
    model = make_model(rng)
    swapped = make_model()
    for name, p in model.params.items():
        if name.startswith("enc.fwd."):
            other = "enc.bwd." + name.removeprefix("enc.fwd.")
        elif name.startswith("enc.bwd."):
            other = "enc.fwd." + name.removeprefix("enc.bwd.")
        else:
            other = name
        swapped.params[other].value[...] = p.value

    ids = [4, 9, 6]
    tp = Tape()
    states = [s.value for s in encode_leaves(tp, ids, model.params, model.config)]
    tp2 = Tape()
    rev = [s.value for s in encode_leaves(tp2, ids[::-1], swapped.params,
                                          swapped.config)]
    half = 3
    for i in range(3):
        expect = np.concatenate([states[2 - i][half:], states[2 - i][:half]])
        assert np.array_equal(rev[i], expect)


def test_encode_leaves_matches_oracle():
    rng = np.random.default_rng(2)
    model = make_model(rng)
    ids = [3, 8, 2, 5]
    tp = Tape()
    states = encode_leaves(tp, ids, model.params, model.config)
    E = model.params["enc.emb"].value
    f = np.zeros(3)
    fs = []
    for i in ids:
        f = oracle_gru(E[i], f, model.params, "enc.fwd")
        fs.append(f)
    b = np.zeros(3)
    bs = [None] * 4
    for j in range(3, -1, -1):
        b = oracle_gru(E[ids[j]], b, model.params, "enc.bwd")
        bs[j] = b
    for i in range(4):
        assert np.abs(states[i].value - np.concatenate([fs[i], bs[i]])).max() < 1e-12


def test_encode_leaves_rejects_bad_id():
    model = make_model()
    with pytest.raises(UnknownTokenIdError):
        encode_leaves(Tape(), [4, 99], model.params, model.config)


def test_no_backward_leaf_full_width():
    rng = np.random.default_rng(3)
    model = make_model(rng, backward_leaf=False)
    assert "enc.bwd.Wz" not in model.params
    tp = Tape()
    states = encode_leaves(tp, [1, 2], model.params, model.config)
    assert states[0].shape == (6,)


def test_tree_gru_zero_params_averages_child_sum():
    model = make_model().zero_params()
    tp = Tape()
    hl = tp.leaf(np.ones(6))
    hr = tp.leaf(np.ones(6))
    out = tree_gru_node(tp, hl, hr, model.params)
    assert np.array_equal(out.value, np.ones(6))


def test_tree_gru_zero_children_bias_algebra():
    rng = np.random.default_rng(4)
    model = make_model().zero_params()
    bz = rng.normal(size=6)
    bh = rng.normal(size=6)
    model.params["enc.tree.b_z"].value[...] = bz
    model.params["enc.tree.b_h"].value[...] = bh
    tp = Tape()
    zero = tp.leaf(np.zeros(6))
    out = tree_gru_node(tp, zero, zero, model.params)
    assert np.abs(out.value - np_sigmoid(bz) * np.tanh(bh)).max() < 1e-15


def test_tree_gru_matches_oracle():
    rng = np.random.default_rng(5)
    model = make_model(rng)
    for _ in range(25):
        hl = rng.normal(size=6)
        hr = rng.normal(size=6)
        tp = Tape()
        out = tree_gru_node(tp, tp.leaf(hl), tp.leaf(hr), model.params)
        assert np.abs(out.value - oracle_tree_gru(hl, hr, model.params)).max() < 1e-12


def test_tree_gru_is_order_sensitive():
    rng = np.random.default_rng(6)
    model = make_model(rng)
    hl, hr = rng.normal(size=6), rng.normal(size=6)
    tp = Tape()
    ab = tree_gru_node(tp, tp.leaf(hl), tp.leaf(hr), model.params)
    ba = tree_gru_node(tp, tp.leaf(hr), tp.leaf(hl), model.params)
    assert not np.allclose(ab.value, ba.value)


def test_bottom_up_single_leaf_is_identity():
    model = make_model(np.random.default_rng(7))
    tree = tree_of("(X only)")
    table = enumerate_nodes(tree)
    tp = Tape()
    leaf = tp.leaf(np.arange(6.0))
    up = encode_bottom_up(tp, table, [leaf], model.params)
    assert up[(1, 1)] is leaf


def test_bottom_up_child_precedes_parent():
    tree = tree_of("(S (A (B x) (C y)) (D z))")
    table = enumerate_nodes(tree)
    order = [n.span for n in table.internals]
    assert order.index((1, 2)) < order.index((1, 3))


def test_top_down_zero_params_halves_parent():
    model = make_model().zero_params()
    tp = Tape()
    parent = tp.leaf(np.arange(6.0))
    child_up = tp.leaf(np.ones(6))
    out = top_down_child(tp, child_up, parent, "left", model.params)
    assert np.array_equal(out.value, 0.5 * np.arange(6.0))


def test_top_down_saturated_gate_follows_candidate():
    rng = np.random.default_rng(8)
    model = make_model(rng)
    model.params["enc.td.left.bz"].value[...] = 20.0
    tp = Tape()
    child_up = tp.leaf(rng.normal(size=6))
    parent = tp.leaf(rng.normal(size=6))
    out = top_down_child(tp, child_up, parent, "left", model.params)
    g = lambda n: model.params[f"enc.td.left.{n}"].value
    r = np_sigmoid(g("Wr") @ child_up.value + g("Ur") @ parent.value + g("br"))
    hbar = np.tanh(g("Wh") @ child_up.value + g("Uh") @ (r * parent.value) + g("bh"))
    assert np.abs(out.value - hbar).max() < 1e-6


def test_top_down_sides_differ():
    rng = np.random.default_rng(9)
    model = make_model(rng)
    tp = Tape()
    child_up = tp.leaf(rng.normal(size=6))
    parent = tp.leaf(rng.normal(size=6))
    left = top_down_child(tp, child_up, parent, "left", model.params)
    right = top_down_child(tp, child_up, parent, "right", model.params)
    assert not np.allclose(left.value, right.value)


def test_top_down_matches_oracle():
    rng = np.random.default_rng(10)
    model = make_model(rng)
    for side in ("left", "right"):
        for _ in range(10):
            cu, pd = rng.normal(size=6), rng.normal(size=6)
            tp = Tape()
            out = top_down_child(tp, tp.leaf(cu), tp.leaf(pd), side, model.params)
            ref = oracle_gru(cu, pd, model.params, f"enc.td.{side}")
            assert np.abs(out.value - ref).max() < 1e-12


def test_top_down_root_reuses_up_state():
    model = make_model(np.random.default_rng(11))
    tree = tree_of("(S (A a b) c)")
    table = enumerate_nodes(tree)
    tp = Tape()
    leaves = [tp.leaf(np.random.default_rng(i).normal(size=6)) for i in range(3)]
    up = encode_bottom_up(tp, table, leaves, model.params)
    down = encode_top_down(tp, table, up, model.params)
    root = table.internals[-1].span
    assert down[root] is up[root]


def test_top_down_halving_cascade():
    # inject synthetic up states; zero parameters halve the parent each edge
    model = make_model().zero_params()
    tree = tree_of("(S (A a b) (B c d))")
    table = enumerate_nodes(tree)
    tp = Tape()
    root_vec = np.arange(6.0) + 1.0
    up = {n.span: tp.leaf(np.ones(6)) for n in table.leaves}
    for node in table.internals:
        up[node.span] = tp.leaf(np.ones(6))
    up[(1, 4)] = tp.leaf(root_vec)
    down = encode_top_down(tp, table, up, model.params)
    assert np.array_equal(down[(1, 2)].value, 0.5 * root_vec)
    assert np.array_equal(down[(3, 4)].value, 0.5 * root_vec)
    for span in [(1, 1), (2, 2), (3, 3), (4, 4)]:
        assert np.array_equal(down[span].value, 0.25 * root_vec)


def test_encode_shape_counts():
    model = make_model(np.random.default_rng(12))
    leaves = " ".join(f"t{i}" for i in range(8))
    tree = tree_of(f"(S {leaves})")
    tp = Tape()
    enc = encode(tp, [4] * 8, tree, model.params, model.config)
    assert len(enc.leaf_states) == 8
    assert len(enc.phrase_states) == 7
    assert enc.eos_state is not None
    assert enc.n_annotations == 16
    for s in enc.leaf_states + enc.phrase_states + [enc.eos_state]:
        assert s.shape == (6,)


def test_encode_zero_model_all_zero():
    model = make_model().zero_params()
    tree = tree_of("(S a (B b c))")
    tp = Tape()
    enc = encode(tp, [4, 5, 6], tree, model.params, model.config)
    for s in enc.leaf_states + enc.phrase_states + [enc.eos_state, enc.root_up]:
        assert np.array_equal(s.value, np.zeros(6))


def test_encode_alignment_check():
    model = make_model()
    tree = tree_of("(S a b)")
    with pytest.raises(AlignmentMismatchError):
        encode(Tape(), [4, 5, 6], tree, model.params, model.config)


def test_encode_root_equality_bit_exact():
    rng = np.random.default_rng(13)
    model = make_model(rng)
    tree = tree_of("(S (A a b) (B (C c d) e))")
    tp = Tape()
    enc = encode(tp, [4, 5, 6, 7, 8], tree, model.params, model.config)
    # root is the last internal in bottom-up order
    assert enc.phrase_states[-1] is enc.root_up


def test_encode_attend_eos_off():
    model = make_model(np.random.default_rng(14), attend_eos=False)
    tree = tree_of("(S a b)")
    tp = Tape()
    enc = encode(tp, [4, 5], tree, model.params, model.config)
    assert enc.eos_state is None
    assert enc.n_annotations == 3


def test_global_sensitivity_leaf1_to_leafN():
    rng = np.random.default_rng(15)
    for trial in range(5):
        model = make_model(np.random.default_rng(100 + trial))
        tree = tree_of("(S a (B b (C c (D d (E e f)))))")
        ids = [4, 5, 6, 7, 8, 9]

        def last_leaf_state():
            tp = Tape()
            enc = encode(tp, ids, tree, model.params, model.config)
            return enc.leaf_states[-1].value.copy()

        base = last_leaf_state()
        model.params["enc.emb"].value[ids[0]] += 0.1
        assert np.abs(last_leaf_state() - base).max() > 0


def test_bottom_up_locality_without_feedback_passes():
    # forward-only leaves, no top-down: a perturbation of the last leaf
    # cannot reach subtrees that exclude it
    model = make_model(np.random.default_rng(16), backward_leaf=False,
                       top_down=False)
    tree = tree_of("(S (A a b) (B c d))")
    ids = [4, 5, 6, 7]

    def snapshot():
        tp = Tape()
        enc = encode(tp, ids, tree, model.params, model.config)
        return ([s.value.copy() for s in enc.leaf_states],
                {n.span: s.value.copy()
                 for n, s in zip(enc.node_table.internals, enc.phrase_states)})

    leaves_before, phrases_before = snapshot()
    model.params["enc.emb"].value[7] += 0.25
    leaves_after, phrases_after = snapshot()
    for i in range(3):
        assert np.array_equal(leaves_before[i], leaves_after[i])
    assert np.array_equal(phrases_before[(1, 2)], phrases_after[(1, 2)])
    assert not np.array_equal(phrases_before[(3, 4)], phrases_after[(3, 4)])


def test_gate_ranges_on_random_input():
    rng = np.random.default_rng(17)
    model = make_model(rng, scale=1.5)
    tree = tree_of("(S (A a b) c)")
    tp = Tape()
    enc = encode(tp, [4, 5, 6], tree, model.params, model.config)
    for s in enc.leaf_states + enc.phrase_states:
        assert np.all(np.abs(s.value) < 10)  # states stay bounded


def test_encode_gradients_match_fd():
    rng = np.random.default_rng(18)
    model = make_model(rng, scale=0.5)
    tree = tree_of("(S (A a b) c)")
    ids = [4, 5, 6]
    probe = rng.normal(size=6)

    def loss_value():
        tp = Tape()
        enc = encode(tp, ids, tree, model.params, model.config)
        total = T.add_n(*enc.leaf_states, *enc.phrase_states, enc.eos_state)
        return float(T.dot(total, tp.leaf(probe)).value)

    tp = Tape()
    enc = encode(tp, ids, tree, model.params, model.config)
    total = T.add_n(*enc.leaf_states, *enc.phrase_states, enc.eos_state)
    loss = T.dot(total, tp.leaf(probe))
    grads = param_grads(tp, backward(loss))
    fd = fd_param_grads(lambda: loss_value(), model.params)
    assert max_rel_err(grads, fd) < 1e-4
