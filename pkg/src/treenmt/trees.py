"""Bracketed constituency trees: parsing, binarization, serialization, traversal.

Trees are immutable once built. Leaves carry the sentence tokens left to
right and are spanned (1,1)..(N,N); an internal node covering leaves i..j
has span (i,j). Repair of n-ary input is left-binarization, so introduced
structure composes leftwards like the lexical subword trees.
"""

from __future__ import annotations

from dataclasses import dataclass, field


class TreeError(ValueError):
    """Base class for malformed or misused trees."""


class UnbalancedBracketsError(TreeError):
    pass


class EmptyNodeError(TreeError):
    pass


class MultipleRootsError(TreeError):
    pass


class NonBinaryTreeError(TreeError):
    pass


class InvalidLeafIndexError(TreeError):
    pass


BINARIZE_LABEL = "<BIN>"
SUBWORD_LABEL = "<SUB>"

_ESCAPES = (("(", "-LRB-"), (")", "-RRB-"))


def _escape(text: str) -> str:
    for raw, esc in _ESCAPES:
        text = text.replace(raw, esc)
    return text


def _unescape(text: str) -> str:
    for raw, esc in _ESCAPES:
        text = text.replace(esc, raw)
    return text


class TreeNode:
    """One tree node. A leaf holds a token; an internal node holds children.

    ``span`` is filled in by :class:`SyntaxTree` and is 1-based inclusive.
    """

    __slots__ = ("label", "token", "children", "span")

    def __init__(self, label, children=(), token=None):
        self.label = label
        self.children = tuple(children)
        self.token = token
        self.span = None
        if self.children and token is not None:
            raise TreeError("a node holds either children or a token, not both")

    @property
    def is_leaf(self) -> bool:
        return not self.children

    def __eq__(self, other):
        if not isinstance(other, TreeNode):
            return NotImplemented
        return (
            self.label == other.label
            and self.token == other.token
            and self.children == other.children
        )

    def __hash__(self):
        return hash((self.label, self.token, self.children))

    def __repr__(self):
        if self.is_leaf:
            return f"TreeNode(label={self.label!r}, token={self.token!r})"
        return f"TreeNode(label={self.label!r}, arity={len(self.children)})"


class SyntaxTree:
    """A rooted tree with spans assigned and leaves cached."""

    __slots__ = ("root", "leaves")

    def __init__(self, root: TreeNode):
        self.root = root
        self.leaves: list[TreeNode] = []
        self._assign_spans(root)

    def _assign_spans(self, node: TreeNode):
        if node.is_leaf:
            self.leaves.append(node)
            i = len(self.leaves)
            node.span = (i, i)
            return
        for child in node.children:
            self._assign_spans(child)
        node.span = (node.children[0].span[0], node.children[-1].span[1])

    @property
    def n_leaves(self) -> int:
        return len(self.leaves)

    def tokens(self) -> list[str]:
        return [leaf.token for leaf in self.leaves]

    def is_binary(self) -> bool:
        def check(node):
            if node.is_leaf:
                return True
            return len(node.children) == 2 and all(check(c) for c in node.children)

        return check(self.root)

    def __eq__(self, other):
        if not isinstance(other, SyntaxTree):
            return NotImplemented
        return self.root == other.root

    def __hash__(self):
        return hash(self.root)

    def __repr__(self):
        return f"SyntaxTree({serialize(self)!r})"


def _tokenize(text: str) -> list[str]:
    out = []
    atom = []
    for ch in text:
        if ch in "()":
            if atom:
                out.append("".join(atom))
                atom = []
            out.append(ch)
        elif ch.isspace():
            if atom:
                out.append("".join(atom))
                atom = []
        else:
            atom.append(ch)
    if atom:
        out.append("".join(atom))
    return out


def _parse_node(toks: list[str], pos: int) -> tuple[TreeNode, int]:
    # caller guarantees toks[pos] == "("
    pos += 1
    label = None
    if pos < len(toks) and toks[pos] not in "()":
        label = _unescape(toks[pos])
        pos += 1
    items: list = []
    while True:
        if pos >= len(toks):
            raise UnbalancedBracketsError("unexpected end of input inside a node")
        tok = toks[pos]
        if tok == ")":
            pos += 1
            break
        if tok == "(":
            child, pos = _parse_node(toks, pos)
            items.append(child)
        else:
            items.append(_unescape(tok))
            pos += 1
    if not items:
        if label is not None:
            # "(x)": a bare unlabeled leaf
            return TreeNode(None, token=label), pos
        raise EmptyNodeError("node has no children and no token")
    if len(items) == 1 and isinstance(items[0], str):
        return TreeNode(label, token=items[0]), pos
    children = [
        it if isinstance(it, TreeNode) else TreeNode(None, token=it) for it in items
    ]
    return TreeNode(label, children), pos


def parse_bracketed(text: str) -> SyntaxTree:
    """Parse one bracketed tree, e.g. ``(S (NP I) (VP run))``.

    Nodes of any arity are accepted; ``binarize`` repairs n-ary structure.
    A node holding a single bare token becomes a labeled leaf. ``-LRB-`` and
    ``-RRB-`` in tokens or labels are unescaped to parentheses.
    """
    toks = _tokenize(text)
    if not toks:
        raise UnbalancedBracketsError("empty input")
    if toks[0] != "(":
        raise UnbalancedBracketsError("tree must start with '('")
    root, pos = _parse_node(toks, 0)
    if pos != len(toks):
        raise MultipleRootsError("content after the first complete tree")
    return SyntaxTree(root)


def _binarize_node(node: TreeNode) -> TreeNode:
    if node.is_leaf:
        return TreeNode(node.label, token=node.token)
    children = [_binarize_node(c) for c in node.children]
    if len(children) == 1:
        # unary chain: keep the child (tree composition has no unary rule)
        return children[0]
    while len(children) > 2:
        merged = TreeNode(BINARIZE_LABEL, children[:2])
        children = [merged] + children[2:]
    return TreeNode(node.label, children)


def binarize(tree: SyntaxTree) -> SyntaxTree:
    """Left-binarize n-ary nodes and collapse unary chains onto the child.

    The leaf token sequence is preserved; introduced nodes get the label
    ``<BIN>``.
    """
    return SyntaxTree(_binarize_node(tree.root))


Span = tuple[int, int]


@dataclass
class NodeTable:
    """Deterministic traversal orders for a binary tree.

    ``internals`` is in bottom-up (post-order) topological order: every
    child precedes its parent, so the reversed list visits parents first.
    Parent and side lookups are keyed by span, which is unique per node in
    a binary tree.
    """

    leaves: list[TreeNode] = field(default_factory=list)
    internals: list[TreeNode] = field(default_factory=list)
    parent: dict[Span, Span] = field(default_factory=dict)
    side: dict[Span, str] = field(default_factory=dict)

    @property
    def n_leaves(self) -> int:
        return len(self.leaves)

    def attention_size(self, include_eos: bool = True) -> int:
        """Number of attendable states: leaves plus phrases (2N-1), plus eos."""
        return len(self.leaves) + len(self.internals) + (1 if include_eos else 0)


def enumerate_nodes(tree: SyntaxTree) -> NodeTable:
    """Index a binary tree for bottom-up and top-down sweeps."""
    table = NodeTable()

    def visit(node: TreeNode):
        if node.is_leaf:
            table.leaves.append(node)
            return
        if len(node.children) != 2:
            raise NonBinaryTreeError(
                f"node {node.label!r} spanning {node.span} has arity "
                f"{len(node.children)}"
            )
        left, right = node.children
        visit(left)
        visit(right)
        table.internals.append(node)
        table.parent[left.span] = node.span
        table.parent[right.span] = node.span
        table.side[left.span] = "left"
        table.side[right.span] = "right"

    visit(tree.root)
    return table


def _serialize_node(node: TreeNode, top: bool = False) -> str:
    if node.is_leaf:
        token = _escape(node.token)
        if node.label is None:
            # bare token inside a node; at top level it needs brackets
            return f"({token})" if top else token
        return f"({_escape(node.label)} {token})"
    parts = [_serialize_node(c) for c in node.children]
    if node.label is None:
        first = node.children[0]
        if first.is_leaf and first.label is None:
            # "(a b)" would parse as a labeled leaf; bracket the first token
            parts[0] = f"({parts[0]})"
        return f"({' '.join(parts)})"
    return f"({_escape(node.label)} {' '.join(parts)})"


def serialize(tree: SyntaxTree) -> str:
    """Render a tree so that ``parse_bracketed(serialize(t)) == t``."""
    return _serialize_node(tree.root, top=True)


def read_tree_file(path) -> list[SyntaxTree]:
    """Read one bracketed tree per line (UTF-8), skipping blank lines is an
    error: the file must align line-by-line with the tokenized source."""
    trees = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                raise TreeError(f"{path}:{lineno}: blank line in tree file")
            try:
                trees.append(parse_bracketed(line))
            except TreeError as exc:
                raise type(exc)(f"{path}:{lineno}: {exc}") from exc
    return trees
