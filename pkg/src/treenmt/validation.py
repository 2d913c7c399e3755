"""Input checking shared by the estimator classes."""

from sklearn.utils.validation import check_is_fitted

__all__ = ["check_is_fitted", "check_paired_corpora", "as_tokens"]


def check_paired_corpora(X, y):
    """Materialize and length-check an aligned pair of corpora."""
    X = list(X)
    y = list(y)
    if len(X) != len(y):
        raise ValueError(f"X has {len(X)} sentences but y has {len(y)}")
    if not X:
        raise ValueError("need at least one sentence pair")
    return X, y


def as_tokens(sentence):
    """Accept either a whitespace-joined string or a token sequence."""
    if isinstance(sentence, str):
        return sentence.split()
    return [str(t) for t in sentence]
