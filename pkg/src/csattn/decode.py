"""Autoregressive beam search with real-time language-mask expansion.

Language tags for the mask come only from already-emitted tokens; no
language identification happens up front. unk is never emitted (its score
is pinned at NEG_INF) because its language is undefined.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import DataError
from .langmask import NEG_INF, MaskState, extend_incremental
from .model import Model
from .vocab import EOS, SOS, UNK, Vocab


@dataclass
class Hypothesis:
    ids: tuple  # token prefix, starts with sos
    logp: float
    state: MaskState  # mask state for the prefix, grown incrementally
    finished: bool = False

    def extended(self, token: int, logp_tok: float, vocab: Vocab) -> "Hypothesis":
        return Hypothesis(
            ids=self.ids + (token,),
            logp=self.logp + logp_tok,
            state=extend_incremental(self.state, vocab.token_language(token)),
            finished=(token == EOS),
        )


def log_softmax(row: np.ndarray) -> np.ndarray:
    m = row.max()
    return row - (m + np.log(np.exp(row - m).sum()))


def score_hypothesis_step(hyp: Hypothesis, logprob_row: np.ndarray, k: int):
    """Top-k extensions of one hypothesis by cumulative log-probability.

    Ties break toward the lower token id. Returns [(cum_logp, token_id)]
    sorted best-first."""
    v = len(logprob_row)
    k = min(k, v)
    order = np.lexsort((np.arange(v), -logprob_row))[:k]
    return [(hyp.logp + float(logprob_row[t]), int(t)) for t in order]


def _initial(model: Model, vocab: Vocab) -> Hypothesis:
    cfg = model.cfg
    state = MaskState(w_same=cfg.w_same, w_diff=cfg.w_diff, alpha=cfg.alpha)
    state = extend_incremental(state, vocab.token_language(SOS))
    return Hypothesis(ids=(SOS,), logp=0.0, state=state)


def _step_logprobs(model: Model, enc_out, enc_valid, alive: list[Hypothesis]):
    """Score the next token for every alive hypothesis in one batched
    forward. All alive hypotheses share the same prefix length."""
    n = len(alive)
    L = len(alive[0].ids)
    tgt_in = np.array([h.ids for h in alive], dtype=np.int64)
    langs = [h.state.langs for h in alive]
    w = np.stack([h.state.w for h in alive])
    scale_a = np.stack([h.state.scale_a for h in alive])
    scale_b = np.stack([h.state.scale_b for h in alive])
    enc_b = _tile(enc_out, n)
    valid_b = np.repeat(enc_valid, n, axis=0)
    logits = model.decode(
        enc_b, valid_b, tgt_in, langs, w=w, scale_a=scale_a, scale_b=scale_b
    )
    rows = logits.data[:, L - 1, :].copy()
    rows[:, UNK] = NEG_INF
    return np.stack([log_softmax(r) for r in rows])


def _tile(enc_out, n):
    from .autodiff import Tensor

    return Tensor(np.repeat(enc_out.data, n, axis=0))


def beam_search(model: Model, vocab: Vocab, features: np.ndarray,
                beam_width: int = 10, max_len: int = 32):
    """Length-bounded beam search over one utterance.

    Returns (best, nbest). Finished hypotheses are frozen when they emit
    eos; the best finished one wins, falling back to the best unfinished
    hypothesis at max_len. Fully deterministic: ties break by token id,
    then by expansion order.
    """
    if beam_width < 1 or max_len < 1:
        raise DataError("beam_width and max_len must be >= 1")
    if features.ndim != 2 or features.shape[0] == 0:
        raise DataError("beam_search: empty or misshaped feature input")
    enc_out, enc_valid = model.encode(
        features[None], np.ones((1, features.shape[0]), dtype=bool)
    )
    alive = [_initial(model, vocab)]
    finished: list[Hypothesis] = []
    for _ in range(max_len):
        logprobs = _step_logprobs(model, enc_out, enc_valid, alive)
        candidates = []
        for hi, hyp in enumerate(alive):
            for logp, tok in score_hypothesis_step(hyp, logprobs[hi], beam_width):
                candidates.append((-logp, tok, hi))
        candidates.sort()
        alive_next = []
        for neg_logp, tok, hi in candidates[:beam_width]:
            new = alive[hi].extended(tok, -neg_logp - alive[hi].logp, vocab)
            if new.finished:
                finished.append(new)
            else:
                alive_next.append(new)
        alive = alive_next
        if not alive:
            break
    pool = finished if finished else alive
    ranked = sorted(pool, key=lambda h: (-h.logp, h.ids))
    best = ranked[0]
    return best, ranked


def decode_manifest(model: Model, vocab: Vocab, utterances, featurize_fn,
                    beam_width: int = 10, max_len: int = 32):
    """Decode (utt_id, ...) entries; yields (utt_id, token line, logp)."""
    for utt_id, *rest in utterances:
        feats = featurize_fn(utt_id, *rest)
        best, _ = beam_search(model, vocab, feats, beam_width, max_len)
        yield utt_id, vocab.decode(list(best.ids)), best.logp
