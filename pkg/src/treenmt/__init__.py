"""Tree-to-sequence neural machine translation on constituency trees.

The package couples a bidirectional hierarchical encoder (a sequential
bidirectional GRU over leaves, a tree-structured GRU composing phrases
bottom-up, and a top-down GRU propagating global context back to every
node) with an attention decoder that attends jointly over words and
phrases and learns, per output step, how much weight the phrase side
deserves. Rare words are replaced by subword units whose left-composed
lexical trees are grafted into the parse, so the encoder sees a single
fully covered tree.
"""

__version__ = "0.1.0"

__all__ = ["TreeTranslator", "SubwordEncoder", "__version__"]


def __getattr__(name):
    # deferred so that light-weight submodules import without pulling sklearn
    if name in ("TreeTranslator", "SubwordEncoder"):
        from . import estimator

        return getattr(estimator, name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
