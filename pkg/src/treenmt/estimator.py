"""Scikit-learn style wrappers around the translation pipeline.

`TreeTranslator.fit` takes bracketed constituency trees (the source
side, tokens on the leaves) and target sentences; `predict` returns
detokenized translations and `score` reports corpus BLEU.
`SubwordEncoder` is the standalone rare-word compressor for flat text.
"""

from __future__ import annotations

from sklearn.base import BaseEstimator, TransformerMixin

from .metrics import bleu
from .model import Model, ModelConfig
from .optim import AdaDelta
from .search import beam_search
from .subword import (
    EOS_ID,
    generalize_tokens,
    join_subword_tokens,
    segment_rare_tokens,
)
from .training import (
    ParallelDataset,
    epoch_shuffle_seed,
    learn_subword_side,
    make_batches,
    prepare_source,
    prepare_target,
    train_epoch,
)
from .trees import parse_bracketed
from .validation import as_tokens, check_is_fitted, check_paired_corpora


class SubwordEncoder(TransformerMixin, BaseEstimator):
    """Learns token generalization + BPE compression over flat text."""

    def __init__(self, max_vocab=1000, num_merges=100):
        self.max_vocab = max_vocab
        self.num_merges = num_merges

    def fit(self, X, y=None):
        corpus = [as_tokens(sent) for sent in X]
        side = learn_subword_side(corpus, self.max_vocab, self.num_merges)
        self.vocab_ = side.vocab
        self.merges_ = side.merges
        self.n_types_before_ = side.n_types_before
        self.n_types_after_ = side.n_types_after
        return self

    def transform(self, X):
        check_is_fitted(self)
        return [
            segment_rare_tokens(generalize_tokens(as_tokens(sent)),
                                self.vocab_, self.merges_)
            for sent in X
        ]

    def inverse_transform(self, X):
        return [join_subword_tokens(as_tokens(sent)) for sent in X]


class TreeTranslator(BaseEstimator):
    """Tree-to-sequence translator with a hierarchical tree encoder.

    Constructor arguments mirror the command-line options; desk-scale
    defaults keep fits in the seconds-to-minutes range.
    """

    def __init__(self, d_emb=32, d=64, a=None, d_c=None, beta_mode="gating",
                 attend_eos=True, backward_leaf=True, top_down=True,
                 max_vocab=1000, num_merges=100, batch_size=4, max_epochs=50,
                 max_sentence_length=40, beam=5, max_len=50, seed=0,
                 shuffle_seed=0, threads=1):
        self.d_emb = d_emb
        self.d = d
        self.a = a
        self.d_c = d_c
        self.beta_mode = beta_mode
        self.attend_eos = attend_eos
        self.backward_leaf = backward_leaf
        self.top_down = top_down
        self.max_vocab = max_vocab
        self.num_merges = num_merges
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.max_sentence_length = max_sentence_length
        self.beam = beam
        self.max_len = max_len
        self.seed = seed
        self.shuffle_seed = shuffle_seed
        self.threads = threads

    def _model_config(self):
        return ModelConfig(
            d_emb=self.d_emb, d=self.d,
            a=0 if self.a is None else self.a,
            d_c=0 if self.d_c is None else self.d_c,
            beta_mode=self.beta_mode, attend_eos=self.attend_eos,
            backward_leaf=self.backward_leaf, top_down=self.top_down,
        ).validate()

    def fit(self, X, y):
        X, y = check_paired_corpora(X, y)
        config = self._model_config()
        trees = [parse_bracketed(s) for s in X]
        src_side = learn_subword_side([t.tokens() for t in trees],
                                      self.max_vocab, self.num_merges)
        tgt_side = learn_subword_side([as_tokens(sent) for sent in y],
                                      self.max_vocab, self.num_merges)

        dataset = ParallelDataset(src_vocab=src_side.vocab,
                                  tgt_vocab=tgt_side.vocab)
        for tree, sent in zip(trees, y):
            src_tokens = tree.tokens()
            tgt_tokens = as_tokens(sent)
            if (len(src_tokens) > self.max_sentence_length
                    or len(tgt_tokens) > self.max_sentence_length):
                dataset.n_dropped += 1
                continue
            src_ids, src_tree, _ = prepare_source(
                src_tokens, tree, src_side.vocab, src_side.merges)
            tgt_ids, _ = prepare_target(tgt_tokens, tgt_side.vocab,
                                        tgt_side.merges)
            dataset.items.append((src_ids, src_tree, tgt_ids))
        if not dataset.items:
            raise ValueError("every sentence pair exceeded"
                             " max_sentence_length")

        self.model_ = Model(config, len(src_side.vocab), len(tgt_side.vocab),
                            seed=self.seed)
        optimizer = AdaDelta(self.model_.params)
        history = []
        for epoch in range(1, self.max_epochs + 1):
            batches = make_batches(
                dataset, self.batch_size,
                epoch_shuffle_seed(self.shuffle_seed, epoch))
            history.append(train_epoch(self.model_, batches, optimizer,
                                       threads=self.threads))
        self.src_vocab_ = src_side.vocab
        self.tgt_vocab_ = tgt_side.vocab
        self.src_merges_ = src_side.merges
        self.tgt_merges_ = tgt_side.merges
        self.history_ = history
        self.n_dropped_ = dataset.n_dropped
        return self

    def _translate_ids(self, tree_string):
        tree = parse_bracketed(tree_string)
        src_ids, src_tree, _ = prepare_source(tree.tokens(), tree,
                                              self.src_vocab_,
                                              self.src_merges_)
        hyp = beam_search(self.model_, src_ids, src_tree, beam=self.beam,
                          max_len=self.max_len)
        return [i for i in hyp.ids if i != EOS_ID]

    def predict(self, X):
        check_is_fitted(self)
        out = []
        for tree_string in X:
            ids = self._translate_ids(tree_string)
            tokens = [self.tgt_vocab_.token(i) for i in ids]
            out.append(join_subword_tokens(tokens))
        return out

    def score(self, X, y):
        """Corpus BLEU of the predictions against generalized references."""
        X, y = check_paired_corpora(X, y)
        hypotheses = [hyp.split() for hyp in self.predict(X)]
        references = [generalize_tokens(as_tokens(sent)) for sent in y]
        return bleu(hypotheses, references)
