"""Vocabulary building, token generalization, byte-pair encoding, and
grafting of sub-word lexical trees onto constituency trees.

Byte-pair merges are learned over the whole (generalized) corpus but applied
only to out-of-vocabulary words: frequent words stay whole, rare words are
replaced by their sub-word units, and on the source side the covering leaf
is extended downwards with a left-composed binary tree over those units.
"""

from __future__ import annotations

import re
from collections import Counter

from .trees import InvalidLeafIndexError, SUBWORD_LABEL, SyntaxTree, TreeNode

PAD, BOS, EOS, UNK = "<pad>", "<bos>", "<eos>", "<unk>"
PAD_ID, BOS_ID, EOS_ID, UNK_ID = 0, 1, 2, 3
RESERVED = (PAD, BOS, EOS, UNK)

WORD_END = "</w>"
CONTINUATION = "@@"
MERGES_VERSION = "#version: treenmt-bpe-1"

_NUMBER_RE = re.compile(r"^\d+([.,]\d+)*$")
_TIME_RE = re.compile(r"^\d{1,2}:\d{2}(:\d{2})?$")
_DATE_RE = re.compile(r"^(\d{1,2}/\d{1,2}/\d{2,4}|\d{4}-\d{2}-\d{2})$")


class SubwordError(ValueError):
    pass


class EmptyCorpusError(SubwordError):
    pass


class AlignmentMismatchError(SubwordError):
    pass


class VocabFileError(SubwordError):
    pass


class MergeFileError(SubwordError):
    pass


def generalize_tokens(tokens):
    """Replace numeric/time/date tokens with `$number`/`$time`/`$date`."""
    out = []
    for tok in tokens:
        if _TIME_RE.match(tok):
            out.append("$time")
        elif _DATE_RE.match(tok):
            out.append("$date")
        elif _NUMBER_RE.match(tok):
            out.append("$number")
        else:
            out.append(tok)
    return out


class Vocab:
    """Bijective token/id maps with four fixed reserved entries.

    Ids 0..3 are ``<pad>``, ``<bos>``, ``<eos>``, ``<unk>``; regular tokens
    start at id 4. ``max_size`` bounds the total entry count, reserved
    entries included.
    """

    def __init__(self, tokens=(), max_size=None):
        self.max_size = max_size
        self.token_to_id = {tok: i for i, tok in enumerate(RESERVED)}
        self.id_to_token = {i: tok for i, tok in enumerate(RESERVED)}
        for tok in tokens:
            self._add(tok)

    def _add(self, token):
        if token in self.token_to_id:
            return
        if self.max_size is not None and len(self.token_to_id) >= self.max_size:
            raise SubwordError(f"vocab full (max_size={self.max_size})")
        idx = len(self.token_to_id)
        self.token_to_id[token] = idx
        self.id_to_token[idx] = token

    def id(self, token) -> int:
        """Map a token to its id; unknown tokens map to the <unk> id."""
        return self.token_to_id.get(token, UNK_ID)

    def token(self, idx) -> str:
        return self.id_to_token[idx]

    def __contains__(self, token):
        return token in self.token_to_id

    def __len__(self):
        return len(self.token_to_id)

    def __eq__(self, other):
        if not isinstance(other, Vocab):
            return NotImplemented
        return self.token_to_id == other.token_to_id

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for idx in range(len(self.id_to_token)):
                fh.write(f"{self.id_to_token[idx]}\t{idx}\n")

    @classmethod
    def load(cls, path) -> "Vocab":
        entries = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != 2:
                    raise VocabFileError(f"{path}:{lineno}: expected token<TAB>id")
                token, raw_id = parts
                try:
                    idx = int(raw_id)
                except ValueError:
                    raise VocabFileError(
                        f"{path}:{lineno}: id {raw_id!r} is not an integer"
                    ) from None
                if idx in entries or token in entries.values():
                    raise VocabFileError(f"{path}:{lineno}: duplicate entry")
                entries[idx] = token
        for idx, tok in enumerate(RESERVED):
            if entries.get(idx) != tok:
                raise VocabFileError(f"{path}: reserved id {idx} must be {tok!r}")
        if sorted(entries) != list(range(len(entries))):
            raise VocabFileError(f"{path}: ids must be dense from 0")
        vocab = cls(max_size=len(entries))
        for idx in range(4, len(entries)):
            vocab._add(entries[idx])
        return vocab


def build_vocab(corpus, max_size) -> Vocab:
    """Keep the ``max_size - 4`` most frequent tokens plus the reserved four.

    Ties break lexicographically. ``corpus`` is an iterable of token lists.
    """
    if max_size < 4:
        raise SubwordError("max_size must leave room for the reserved tokens")
    counts = Counter()
    for sent in corpus:
        counts.update(sent)
    for tok in RESERVED:
        counts.pop(tok, None)
    if not counts:
        raise EmptyCorpusError("no tokens in corpus")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    kept = [tok for tok, _ in ranked[: max_size - 4]]
    return Vocab(kept, max_size=max_size)


class MergeTable:
    """Ordered byte-pair merges; rank equals list position."""

    def __init__(self, pairs=()):
        self.pairs = list(pairs)
        self.rank = {}
        for i, pair in enumerate(self.pairs):
            if pair in self.rank:
                raise SubwordError(f"duplicate merge pair {pair!r}")
            self.rank[pair] = i

    def __len__(self):
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    def __eq__(self, other):
        if not isinstance(other, MergeTable):
            return NotImplemented
        return self.pairs == other.pairs

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(MERGES_VERSION + "\n")
            for left, right in self.pairs:
                fh.write(f"{left} {right}\n")

    @classmethod
    def load(cls, path) -> "MergeTable":
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().rstrip("\n")
            if header != MERGES_VERSION:
                raise MergeFileError(f"{path}: bad header {header!r}")
            pairs = []
            for lineno, line in enumerate(fh, 2):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split(" ")
                if len(parts) != 2:
                    raise MergeFileError(f"{path}:{lineno}: expected 'left right'")
                pairs.append(tuple(parts))
        return cls(pairs)


def _merge_pair(symbols, pair):
    """Fuse non-overlapping occurrences of ``pair``, scanning left to right."""
    left, right = pair
    out = []
    i = 0
    n = len(symbols)
    while i < n:
        if i + 1 < n and symbols[i] == left and symbols[i + 1] == right:
            out.append(left + right)
            i += 2
        else:
            out.append(symbols[i])
            i += 1
    return out


def learn_bpe(corpus, num_merges) -> MergeTable:
    """Greedy most-frequent-pair merges over word-frequency-weighted
    character sequences, each word terminated by the ``</w>`` marker.

    Ties break by lexicographic pair order; learning stops early once the
    best pair occurs fewer than 2 times.
    """
    if num_merges < 0:
        raise SubwordError("num_merges must be >= 0")
    word_freqs = Counter()
    for sent in corpus:
        word_freqs.update(sent)
    if not word_freqs:
        raise EmptyCorpusError("no tokens in corpus")
    words = [(list(word) + [WORD_END], freq) for word, freq in sorted(word_freqs.items())]
    pairs = []
    for _ in range(num_merges):
        counts = Counter()
        for symbols, freq in words:
            for a, b in zip(symbols, symbols[1:]):
                counts[(a, b)] += freq
        if not counts:
            break
        best = min(counts, key=lambda p: (-counts[p], p))
        if counts[best] < 2:
            break
        pairs.append(best)
        words = [(_merge_pair(symbols, best), freq) for symbols, freq in words]
    return MergeTable(pairs)


class Segmentation:
    """A word split into sub-word units.

    ``units`` keep the internal ``</w>`` marker fused onto the final unit;
    ``as_tokens`` yields the emitted-text convention where non-final units
    carry an ``@@`` continuation suffix and the marker is stripped.
    """

    __slots__ = ("word", "units")

    def __init__(self, word, units):
        self.word = word
        self.units = list(units)

    @property
    def is_trivial(self) -> bool:
        return len(self.units) == 1

    def as_tokens(self):
        toks = [u + CONTINUATION for u in self.units[:-1]]
        toks.append(self.units[-1].removesuffix(WORD_END))
        return toks

    def __repr__(self):
        return f"Segmentation({self.word!r}, {self.units!r})"


def segment_word(word, merges: MergeTable) -> Segmentation:
    """Split a word by repeatedly applying the lowest-rank applicable merge.

    A trailing bare ``</w>`` fuses onto the preceding unit at the end, so
    the final unit always carries the marker.
    """
    if not word:
        raise SubwordError("cannot segment an empty word")
    symbols = list(word) + [WORD_END]
    while len(symbols) > 1:
        best = None
        for pair in zip(symbols, symbols[1:]):
            r = merges.rank.get(pair)
            if r is not None and (best is None or r < best[0]):
                best = (r, pair)
        if best is None:
            break
        symbols = _merge_pair(symbols, best[1])
    if len(symbols) > 1 and symbols[-1] == WORD_END:
        symbols[-2:] = [symbols[-2] + WORD_END]
    return Segmentation(word, symbols)


def _rebuild_with_graft(node, target, units):
    """Return a copy of ``node`` with the ``target``-th leaf (0-based,
    counted via the mutable list) replaced by the unit tree."""
    if node.is_leaf:
        if target[0] == 0:
            target[0] -= 1
            return _lexical_tree(units, node.label)
        target[0] -= 1
        return TreeNode(node.label, token=node.token)
    return TreeNode(node.label, [
        _rebuild_with_graft(c, target, units) for c in node.children
    ])


def _lexical_tree(units, root_label):
    # left composition: (((u1 u2) u3) ... un); the top keeps the word's label
    node = TreeNode(None, token=units[0])
    for unit in units[1:]:
        node = TreeNode(SUBWORD_LABEL, (node, TreeNode(None, token=unit)))
    return TreeNode(root_label, node.children)


def graft_lexical_tree(tree: SyntaxTree, leaf_index, units) -> SyntaxTree:
    """Replace leaf ``leaf_index`` (1-based) with a left-composed binary
    tree over ``units``. Fewer than two units is a no-op."""
    if not 1 <= leaf_index <= tree.n_leaves:
        raise InvalidLeafIndexError(
            f"leaf index {leaf_index} out of range 1..{tree.n_leaves}"
        )
    if len(units) < 2:
        return tree
    root = _rebuild_with_graft(tree.root, [leaf_index - 1], list(units))
    return SyntaxTree(root)


def apply_rare_word_encoding(sentence, tree: SyntaxTree, vocab: Vocab,
                             merges: MergeTable):
    """Segment and graft every out-of-vocabulary token of a source sentence.

    Returns the new token list and tree; their leaves stay aligned. Tokens
    already in ``vocab`` are untouched.
    """
    if list(sentence) != tree.tokens():
        raise AlignmentMismatchError("sentence tokens do not match tree leaves")
    # graft right-to-left so pending leaf indices stay valid
    for idx in range(len(sentence), 0, -1):
        token = sentence[idx - 1]
        if token in vocab:
            continue
        seg = segment_word(token, merges)
        if seg.is_trivial:
            continue
        tree = graft_lexical_tree(tree, idx, seg.as_tokens())
    return tree.tokens(), tree


def segment_rare_tokens(sentence, vocab: Vocab, merges: MergeTable):
    """Flat rare-word segmentation for the (tree-less) target side."""
    out = []
    for token in sentence:
        if token in vocab:
            out.append(token)
        else:
            out.extend(segment_word(token, merges).as_tokens())
    return out


def join_subword_tokens(tokens):
    """Undo the ``@@`` convention in emitted text: 'po@@ sition' → 'position'."""
    return (" ".join(tokens)).replace(CONTINUATION + " ", "")
