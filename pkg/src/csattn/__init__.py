"""Language-related decoder self-attention for code-switched transduction."""

from .vocab import Lang, Vocab, build_vocab  # noqa: F401
from .model import Model, ModelConfig  # noqa: F401

__version__ = "0.1.0"
