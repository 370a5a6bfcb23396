import numpy as np
import pytest

from csattn.model import Model, ModelConfig, make_batch
from csattn.vocab import Vocab


@pytest.fixture(scope="session")
def tiny_vocab():
    return Vocab(["a1", "a2", "a3"], ["bb_x", "bb_y"])


def tiny_config(vocab, variant="baseline", **kw):
    base = dict(
        vocab_size=len(vocab), d_model=8, heads=2, d_ff=16, n_enc=1, n_dec=1,
        d_f=4, dropout=0.0, variant=variant, seed=0,
    )
    base.update(kw)
    return ModelConfig(**base)


def tiny_batch(vocab, lines, seed=0):
    rng = np.random.default_rng(seed)
    feats = [rng.standard_normal((2 * len(l.split()) + 2, 4)) for l in lines]
    targets = [vocab.encode(l) for l in lines]
    return make_batch(feats, targets, vocab)
