"""Reverse-mode autodiff over numpy arrays.

A :class:`Tape` records every primitive as it runs, in creation order, which
is already a topological order. ``backward`` sweeps the record once in
reverse; ``replay`` re-executes the forward closures in place, which must
reproduce bit-identical values. Tapes are rebuilt per sentence because tree
shapes change the computation graph.

All values are float64 ndarrays; scalars are 0-d arrays so every op stays
uniform. Gradients of non-parameter leaves are kept too, for checks.
"""

from __future__ import annotations

import numpy as np


class ShapeMismatchError(ValueError):
    pass


class NotScalarLossError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class Param:
    """A named trainable array shared across tapes."""

    __slots__ = ("name", "value")

    def __init__(self, name, value):
        self.name = name
        self.value = np.asarray(value, dtype=np.float64)

    def __repr__(self):
        return f"Param({self.name!r}, shape={self.value.shape})"


class Var:
    """Handle to one tape node."""

    __slots__ = ("tape", "idx")

    def __init__(self, tape, idx):
        self.tape = tape
        self.idx = idx

    @property
    def value(self):
        return self.tape.vals[self.idx]

    @property
    def shape(self):
        return self.tape.vals[self.idx].shape

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __repr__(self):
        return f"Var(idx={self.idx}, shape={self.shape})"


class Tape:
    def __init__(self, debug=False):
        self.vals = []
        self.ops = []  # per node: None for leaves, else (parent idxs, fwd, back)
        self.debug = debug
        self._param_vars = {}
        self.param_names = {}  # node idx -> param name

    def __len__(self):
        return len(self.vals)

    def _append(self, value, op):
        value = np.asarray(value, dtype=np.float64)
        if self.debug and not np.all(np.isfinite(value)):
            raise NonFiniteError("non-finite value produced on tape")
        self.vals.append(value)
        self.ops.append(op)
        return Var(self, len(self.vals) - 1)

    def leaf(self, value) -> Var:
        return self._append(value, None)

    def param(self, p: Param) -> Var:
        """The (cached) leaf for a parameter on this tape."""
        var = self._param_vars.get(p.name)
        if var is None:
            var = self.leaf(p.value)
            self._param_vars[p.name] = var
            self.param_names[var.idx] = p.name
        return var

    def push(self, value, parents, fwd, back) -> Var:
        return self._append(value, (tuple(p.idx for p in parents), fwd, back))

    def replay(self):
        """Re-run every forward closure in place."""
        for idx, op in enumerate(self.ops):
            if op is None:
                continue
            parents, fwd, _ = op
            self.vals[idx] = np.asarray(
                fwd(*(self.vals[p] for p in parents)), dtype=np.float64
            )


def backward(loss: Var):
    """Reverse accumulation from a scalar loss; returns one gradient slot
    per tape node (None where the loss does not depend on the node)."""
    tape = loss.tape
    if loss.value.size != 1:
        raise NotScalarLossError(f"loss has shape {loss.value.shape}")
    grads = [None] * len(tape.vals)
    owned = [False] * len(tape.vals)
    grads[loss.idx] = np.ones_like(loss.value)
    for idx in range(loss.idx, -1, -1):
        g = grads[idx]
        op = tape.ops[idx]
        if g is None or op is None:
            continue
        parents, _, back = op
        parent_vals = tuple(tape.vals[p] for p in parents)
        parent_grads = back(g, tape.vals[idx], *parent_vals)
        for p, gp in zip(parents, parent_grads):
            if gp is None:
                continue
            if grads[p] is None:
                grads[p] = gp  # may alias a shared buffer; not owned yet
            elif not owned[p]:
                grads[p] = grads[p] + gp
                owned[p] = True
            else:
                grads[p] += gp
    return grads


def param_grads(tape: Tape, grads) -> dict:
    """Collect gradients for the parameters touched by this tape."""
    out = {}
    for idx, name in tape.param_names.items():
        if grads[idx] is not None:
            out[name] = grads[idx]
    return out


def _same_tape(*vars_):
    tape = vars_[0].tape
    for v in vars_[1:]:
        if v.tape is not tape:
            raise ValueError("operands live on different tapes")
    return tape


# ---------------------------------------------------------------- primitives


def add(a: Var, b: Var) -> Var:
    tape = _same_tape(a, b)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"add: {a.shape} vs {b.shape}")
    return tape.push(a.value + b.value, (a, b),
                     lambda x, y: x + y,
                     lambda g, out, x, y: (g, g))


def sub(a: Var, b: Var) -> Var:
    tape = _same_tape(a, b)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"sub: {a.shape} vs {b.shape}")
    return tape.push(a.value - b.value, (a, b),
                     lambda x, y: x - y,
                     lambda g, out, x, y: (g, -g))


def mul(a: Var, b: Var) -> Var:
    """Hadamard product."""
    tape = _same_tape(a, b)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"mul: {a.shape} vs {b.shape}")
    return tape.push(a.value * b.value, (a, b),
                     lambda x, y: x * y,
                     lambda g, out, x, y: (g * y, g * x))


def add_n(*vars_) -> Var:
    tape = _same_tape(*vars_)
    shape = vars_[0].shape
    for v in vars_[1:]:
        if v.shape != shape:
            raise ShapeMismatchError("add_n: mixed shapes")
    k = len(vars_)
    return tape.push(sum(v.value for v in vars_), vars_,
                     lambda *xs: sum(xs),
                     lambda g, out, *xs: (g,) * k)


def scale(a: Var, c: float) -> Var:
    c = float(c)
    return a.tape.push(c * a.value, (a,),
                       lambda x: c * x,
                       lambda g, out, x: (c * g,))


def rsub_const(c: float, a: Var) -> Var:
    """c - a, used for the (1 - z) and (1 - β) mixes."""
    c = float(c)
    return a.tape.push(c - a.value, (a,),
                       lambda x: c - x,
                       lambda g, out, x: (-g,))


def smul(s: Var, v: Var) -> Var:
    """Scalar (0-d) times vector, both differentiable."""
    tape = _same_tape(s, v)
    if s.value.ndim != 0:
        raise ShapeMismatchError("smul expects a 0-d scalar first")
    return tape.push(s.value * v.value, (s, v),
                     lambda x, y: x * y,
                     lambda g, out, x, y: (np.asarray((g * y).sum()), x * g))


def dot(a: Var, b: Var) -> Var:
    tape = _same_tape(a, b)
    if a.shape != b.shape or a.value.ndim != 1:
        raise ShapeMismatchError(f"dot: {a.shape} vs {b.shape}")
    return tape.push(np.asarray(a.value @ b.value), (a, b),
                     lambda x, y: np.asarray(x @ y),
                     lambda g, out, x, y: (g * y, g * x))


def matvec(W: Var, x: Var) -> Var:
    tape = _same_tape(W, x)
    if W.value.ndim != 2 or x.value.ndim != 1 or W.shape[1] != x.shape[0]:
        raise ShapeMismatchError(f"matvec: {W.shape} @ {x.shape}")
    return tape.push(W.value @ x.value, (W, x),
                     lambda w, v: w @ v,
                     lambda g, out, w, v: (np.outer(g, v), w.T @ g))


def affine(W: Var, x: Var, b: Var) -> Var:
    """W @ x + b, the building block of every gate."""
    tape = _same_tape(W, x, b)
    if (W.value.ndim != 2 or x.value.ndim != 1 or b.value.ndim != 1
            or W.shape[1] != x.shape[0] or W.shape[0] != b.shape[0]):
        raise ShapeMismatchError(f"affine: {W.shape} @ {x.shape} + {b.shape}")
    return tape.push(W.value @ x.value + b.value, (W, x, b),
                     lambda w, v, c: w @ v + c,
                     lambda g, out, w, v, c: (np.outer(g, v), w.T @ g, g))


def matmul_nt(H: Var, W: Var) -> Var:
    """H @ W.T for precomputing attention projections of all nodes at once."""
    tape = _same_tape(H, W)
    if H.value.ndim != 2 or W.value.ndim != 2 or H.shape[1] != W.shape[1]:
        raise ShapeMismatchError(f"matmul_nt: {H.shape} @ {W.shape}.T")
    return tape.push(H.value @ W.value.T, (H, W),
                     lambda h, w: h @ w.T,
                     lambda g, out, h, w: (g @ w, g.T @ h))


def add_rowvec(A: Var, v: Var) -> Var:
    """Broadcast-add a vector to every row of a matrix."""
    tape = _same_tape(A, v)
    if A.value.ndim != 2 or v.value.ndim != 1 or A.shape[1] != v.shape[0]:
        raise ShapeMismatchError(f"add_rowvec: {A.shape} + {v.shape}")
    return tape.push(A.value + v.value, (A, v),
                     lambda a, x: a + x,
                     lambda g, out, a, x: (g, g.sum(axis=0)))


def vecmat(a: Var, H: Var) -> Var:
    """Row vector times matrix: the attention-weighted sum a @ H."""
    tape = _same_tape(a, H)
    if a.value.ndim != 1 or H.value.ndim != 2 or a.shape[0] != H.shape[0]:
        raise ShapeMismatchError(f"vecmat: {a.shape} @ {H.shape}")
    return tape.push(a.value @ H.value, (a, H),
                     lambda x, h: x @ h,
                     lambda g, out, x, h: (h @ g, np.outer(x, g)))


def stack_rows(vars_) -> Var:
    vars_ = tuple(vars_)
    tape = _same_tape(*vars_)
    shape = vars_[0].shape
    for v in vars_[1:]:
        if v.shape != shape:
            raise ShapeMismatchError("stack_rows: mixed shapes")
    return tape.push(np.stack([v.value for v in vars_]), vars_,
                     lambda *xs: np.stack(xs),
                     lambda g, out, *xs: tuple(g[i] for i in range(len(xs))))


def concat(vars_) -> Var:
    vars_ = tuple(vars_)
    tape = _same_tape(*vars_)
    sizes = [v.value.shape[0] for v in vars_]
    offsets = np.cumsum([0] + sizes)

    def back(g, out, *xs):
        return tuple(g[offsets[i]:offsets[i + 1]] for i in range(len(xs)))

    return tape.push(np.concatenate([v.value for v in vars_]), vars_,
                     lambda *xs: np.concatenate(xs), back)


def slice_vec(v: Var, start, stop) -> Var:
    def back(g, out, x):
        gx = np.zeros_like(x)
        gx[start:stop] = g
        return (gx,)

    return v.tape.push(v.value[start:stop].copy(), (v,),
                       lambda x: x[start:stop].copy(), back)


def pick(v: Var, i) -> Var:
    def back(g, out, x):
        gx = np.zeros_like(x)
        gx[i] = g
        return (gx,)

    return v.tape.push(np.asarray(v.value[i]), (v,),
                       lambda x: np.asarray(x[i]), back)


def sum_vec(v: Var) -> Var:
    return v.tape.push(np.asarray(v.value.sum()), (v,),
                       lambda x: np.asarray(x.sum()),
                       lambda g, out, x: (np.full_like(x, float(g)),))


def embedding(E: Var, idx) -> Var:
    """Row lookup in an embedding matrix."""
    idx = int(idx)

    def back(g, out, e):
        ge = np.zeros_like(e)
        ge[idx] = g
        return (ge,)

    return E.tape.push(E.value[idx].copy(), (E,),
                       lambda e: e[idx].copy(), back)


def sigmoid(x: Var) -> Var:
    def fwd(v):
        out = np.empty_like(v)
        pos = v >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
        ev = np.exp(v[~pos])
        out[~pos] = ev / (1.0 + ev)
        return out

    return x.tape.push(fwd(x.value), (x,), fwd,
                       lambda g, out, v: (g * out * (1.0 - out),))


def tanh(x: Var) -> Var:
    return x.tape.push(np.tanh(x.value), (x,),
                       np.tanh,
                       lambda g, out, v: (g * (1.0 - out * out),))


def softmax(x: Var) -> Var:
    """Stable softmax over a score vector; output sums to 1."""
    def fwd(v):
        e = np.exp(v - v.max())
        return e / e.sum()

    return x.tape.push(fwd(x.value), (x,), fwd,
                       lambda g, out, v: (out * (g - (g * out).sum()),))


def cross_entropy(logits: Var, target) -> Var:
    """Negative log-softmax probability of one target id, fused for
    stability."""
    target = int(target)

    def fwd(v):
        m = v.max()
        lse = m + np.log(np.exp(v - m).sum())
        return np.asarray(lse - v[target])

    def back(g, out, v):
        m = v.max()
        p = np.exp(v - (m + np.log(np.exp(v - m).sum())))
        p[target] -= 1.0
        return (float(g) * p,)

    return logits.tape.push(fwd(logits.value), (logits,), fwd, back)
