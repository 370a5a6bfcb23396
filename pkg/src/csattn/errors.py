"""Shared exception types. The CLI maps these to exit codes."""


class ShapeError(ValueError):
    """Tensor/matrix dimensions do not agree."""


class NumericError(RuntimeError):
    """NaN/Inf appeared, or a numeric run aborted."""


class VocabError(KeyError):
    """Unknown token id or out-of-range target."""


class DataError(ValueError):
    """Bad corpus, manifest, config, or file contents."""
