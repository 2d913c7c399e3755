"""Corpus loading, batching, and the training loop.

Sentences in a batch have heterogeneous tree shapes, so a "batch" is
gradient accumulation: each sentence builds its own tape, per-sentence
total-NLL gradients are summed and divided by the batch's total target
token count, and one optimizer step is taken. Loss is normalized per
token throughout.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .decoder import nll_parts
from .subword import (
    EOS_ID,
    apply_rare_word_encoding,
    build_vocab,
    generalize_tokens,
    learn_bpe,
    segment_rare_tokens,
)
from .tape import Tape, backward, param_grads
from .trees import SyntaxTree, TreeNode, binarize, parse_bracketed


class CorpusError(ValueError):
    pass


class LineCountMismatchError(CorpusError):
    pass


class TreeLeafMismatchError(CorpusError):
    pass


class SentenceFailure(RuntimeError):
    """A numeric failure during training, tagged with the sentence index."""

    def __init__(self, index, cause):
        self.index = index
        super().__init__(f"sentence {index}: {cause}")


@dataclass
class TrainConfig:
    batch_size: int = 4
    max_epochs: int = 10
    shuffle_seed: int = 0
    max_sentence_length: int = 40
    checkpoint_every: int = 0  # epochs; 0 disables periodic checkpoints
    threads: int = 1

    def validate(self):
        problems = []
        if self.batch_size < 1:
            problems.append("batch_size must be >= 1")
        if self.max_sentence_length < 1:
            problems.append("max_sentence_length must be >= 1")
        if self.max_epochs < 0:
            problems.append("max_epochs must be >= 0")
        if self.threads < 1:
            problems.append("threads must be >= 1")
        if problems:
            from .model import ConfigError

            raise ConfigError(problems)
        return self


@dataclass
class ParallelDataset:
    items: list = field(default_factory=list)  # (src_ids, tree, tgt_ids)
    src_vocab: object = None
    tgt_vocab: object = None
    n_dropped: int = 0

    def __len__(self):
        return len(self.items)


def _read_lines(path):
    with open(path, encoding="utf-8") as fh:
        return [line.rstrip("\n") for line in fh]


def _regeneralized_tree(tree: SyntaxTree) -> SyntaxTree:
    """Rewrite leaf tokens through the same classifier as the sentence."""

    def rebuild(node):
        if node.is_leaf:
            token = generalize_tokens([node.token])[0]
            return TreeNode(node.label, token=token)
        return TreeNode(node.label, [rebuild(c) for c in node.children])

    return SyntaxTree(rebuild(tree.root))


@dataclass
class SideResources:
    """Everything one language side needs: final vocab, merges, stats."""

    vocab: object
    merges: object
    n_types_before: int
    n_types_after: int
    processed: list

    @property
    def covered(self) -> bool:
        """True when the final vocab holds every processed token, which
        makes re-encoding at load time a no-op."""
        return all(t in self.vocab for sent in self.processed for t in sent)


def learn_subword_side(corpus, max_vocab, num_merges) -> SideResources:
    """Two-stage vocabulary compression for one side of the corpus.

    A word-level vocabulary decides which tokens are rare, BPE merges
    are learned over the whole side, rare tokens are segmented, and the
    final vocabulary is rebuilt over the segmented corpus so sub-word
    units get ids.
    """
    corpus = [generalize_tokens(sent) for sent in corpus]
    word_vocab = build_vocab(corpus, max_vocab)
    merges = learn_bpe(corpus, num_merges)
    processed = [segment_rare_tokens(sent, word_vocab, merges)
                 for sent in corpus]
    final_vocab = build_vocab(processed, max_vocab)
    return SideResources(
        vocab=final_vocab,
        merges=merges,
        n_types_before=len({t for sent in corpus for t in sent}),
        n_types_after=len({t for sent in processed for t in sent}),
        processed=processed,
    )


def prepare_source(tokens, tree, src_vocab, src_merges):
    """Generalize, then segment-and-graft the out-of-vocabulary leaves.

    Idempotent on already-processed input whose tokens the vocab covers.
    """
    tokens = generalize_tokens(tokens)
    tree = binarize(_regeneralized_tree(tree))
    if tree.tokens() != tokens:
        raise TreeLeafMismatchError(
            f"tree leaves {tree.tokens()} != source tokens {tokens}"
        )
    tokens, tree = apply_rare_word_encoding(tokens, tree, src_vocab,
                                            src_merges)
    ids = [src_vocab.id(t) for t in tokens]
    return ids, tree, tokens


def prepare_target(tokens, tgt_vocab, tgt_merges):
    """Generalize and flatly segment the target side; appends `<eos>`."""
    tokens = generalize_tokens(tokens)
    tokens = segment_rare_tokens(tokens, tgt_vocab, tgt_merges)
    return [tgt_vocab.id(t) for t in tokens] + [EOS_ID], tokens


def load_parallel_corpus(src_path, tree_path, tgt_path, src_vocab, tgt_vocab,
                         src_merges, tgt_merges,
                         max_sentence_length=40) -> ParallelDataset:
    """Build a training dataset from three aligned files.

    The length filter (on word-level token counts, before sub-word
    splitting) drops over-long pairs; ``max_sentence_length=None`` keeps
    everything.
    """
    src_lines = _read_lines(src_path)
    tree_lines = _read_lines(tree_path)
    tgt_lines = _read_lines(tgt_path)
    if not len(src_lines) == len(tree_lines) == len(tgt_lines):
        raise LineCountMismatchError(
            f"line counts differ: src={len(src_lines)} tree={len(tree_lines)}"
            f" tgt={len(tgt_lines)}"
        )
    dataset = ParallelDataset(src_vocab=src_vocab, tgt_vocab=tgt_vocab)
    for lineno, (src, tr, tgt) in enumerate(
            zip(src_lines, tree_lines, tgt_lines), 1):
        src_tokens = src.split()
        tgt_tokens = tgt.split()
        if max_sentence_length is not None and (
                len(src_tokens) > max_sentence_length
                or len(tgt_tokens) > max_sentence_length):
            dataset.n_dropped += 1
            continue
        try:
            tree = parse_bracketed(tr)
            src_ids, tree, _ = prepare_source(src_tokens, tree, src_vocab,
                                              src_merges)
        except CorpusError as exc:
            raise type(exc)(f"line {lineno}: {exc}") from exc
        tgt_ids, _ = prepare_target(tgt_tokens, tgt_vocab, tgt_merges)
        dataset.items.append((src_ids, tree, tgt_ids))
    return dataset


def load_source_corpus(src_path, tree_path, src_vocab, src_merges):
    """Source-side loading for translation: never drops or reorders lines."""
    src_lines = _read_lines(src_path)
    tree_lines = _read_lines(tree_path)
    if len(src_lines) != len(tree_lines):
        raise LineCountMismatchError(
            f"line counts differ: src={len(src_lines)} tree={len(tree_lines)}"
        )
    out = []
    for src, tr in zip(src_lines, tree_lines):
        tree = parse_bracketed(tr)
        src_ids, tree, _ = prepare_source(src.split(), tree, src_vocab,
                                          src_merges)
        out.append((src_ids, tree))
    return out


def make_batches(dataset: ParallelDataset, batch_size, epoch_seed):
    """A seeded permutation chunked into consecutive batches."""
    rng = np.random.default_rng(epoch_seed)
    order = rng.permutation(len(dataset.items))
    return [
        [dataset.items[j] for j in order[i:i + batch_size]]
        for i in range(0, len(order), batch_size)
    ]


@dataclass
class EpochStats:
    loss: float  # mean NLL per target token over the epoch
    tokens: int
    seconds: float

    def format_line(self, epoch):
        return f"{epoch}\t{self.loss:.6f}\t{self.tokens}\t{self.seconds:.3f}"


def _sentence_grads(model, item):
    src_ids, tree, tgt_ids = item
    tape = Tape()
    total, count = nll_parts(tape, model, src_ids, tree, tgt_ids)
    grads = param_grads(tape, backward(total))
    return grads, float(total.value), count


def train_epoch(model, batches, optimizer, threads=1) -> EpochStats:
    """One pass over the given batches; updates parameters in place."""
    start = time.perf_counter()
    loss_sum = 0.0
    token_sum = 0
    offset = 0
    pool = ThreadPoolExecutor(threads) if threads > 1 else None

    def worker(pair):
        index, item = pair
        try:
            return _sentence_grads(model, item)
        except (FloatingPointError, ValueError) as exc:
            raise SentenceFailure(index, exc) from exc

    try:
        for batch in batches:
            indexed = list(enumerate(batch, offset))
            offset += len(batch)
            if pool is not None:
                results = list(pool.map(worker, indexed))
            else:
                results = [worker(pair) for pair in indexed]
            acc = {}
            batch_tokens = 0
            batch_loss = 0.0
            for grads, total, count in results:
                batch_tokens += count
                batch_loss += total
                for name, g in grads.items():
                    if name in acc:
                        acc[name] += g
                    else:
                        acc[name] = g.copy()
            for name in acc:
                acc[name] /= batch_tokens
            optimizer.step(acc)
            loss_sum += batch_loss
            token_sum += batch_tokens
    finally:
        if pool is not None:
            pool.shutdown()
    seconds = time.perf_counter() - start
    mean = loss_sum / token_sum if token_sum else 0.0
    return EpochStats(loss=mean, tokens=token_sum, seconds=seconds)


def epoch_shuffle_seed(shuffle_seed, epoch) -> int:
    """Per-epoch shuffling reproducibly derived from one seed."""
    return int(shuffle_seed) ^ int(epoch)
