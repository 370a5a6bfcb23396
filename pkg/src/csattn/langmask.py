"""Language re-weighting matrix, per-language stream scalers, causal mask.

All three are pure functions of the language-tag sequence. MaskState
supports token-by-token extension during autoregressive decoding; the
extended state is always bit-identical to a batch rebuild on the prefix.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError
from .vocab import Lang

NEG_INF = -1e9


def build_reweight(langs, w_same: float = 1.0, w_diff: float = 0.1) -> np.ndarray:
    """Eq-style L x L re-weighting: w_same for same-language pairs, w_diff
    for cross-language pairs, 1.0 wherever a special token is involved."""
    _check_weights(w_same, w_diff)
    langs = list(langs)
    if not langs:
        raise ShapeError("build_reweight: empty language sequence")
    L = len(langs)
    w = np.ones((L, L), dtype=np.float64)
    real = [l is not Lang.SPECIAL for l in langs]
    for i in range(L):
        if not real[i]:
            continue
        for j in range(L):
            if not real[j]:
                continue
            w[i, j] = w_same if langs[i] is langs[j] else w_diff
    return w


def build_scalers(langs, alpha: float = 0.1) -> tuple[np.ndarray, np.ndarray]:
    """Row scalers for the two language streams: own language and specials
    stay at 1.0, the other language is attenuated to alpha."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0,1), got {alpha}")
    langs = list(langs)
    L = len(langs)
    scale_a = np.ones(L, dtype=np.float64)
    scale_b = np.ones(L, dtype=np.float64)
    for i, l in enumerate(langs):
        if l is Lang.A:
            scale_b[i] = alpha
        elif l is Lang.B:
            scale_a[i] = alpha
    return scale_a, scale_b


def causal_mask(L: int) -> np.ndarray:
    """Boolean admissibility: query i may attend keys j <= i."""
    return np.tril(np.ones((L, L), dtype=bool))


def combine_causal(w: np.ndarray, causal: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split the masked score transform into a multiplicative and an
    additive part: s' = s * mul + addmask, where admissible entries keep
    s * W and inadmissible entries are pinned at NEG_INF. The two
    mechanisms never act on the same entry."""
    if w.shape != causal.shape:
        raise ShapeError(f"combine_causal: {w.shape} vs {causal.shape}")
    mul = np.where(causal, w, 0.0)
    addm = np.where(causal, 0.0, NEG_INF)
    return mul, addm


def _check_weights(w_same, w_diff):
    if not (w_same >= 1.0 >= w_diff > 0.0):
        raise ValueError(f"need w_same >= 1 >= w_diff > 0, got {w_same}, {w_diff}")


@dataclass
class MaskState:
    """Incrementally extensible per-prefix mask state for decoding."""

    w_same: float = 1.0
    w_diff: float = 0.1
    alpha: float = 0.1
    langs: list = field(default_factory=list)
    w: np.ndarray = None
    scale_a: np.ndarray = None
    scale_b: np.ndarray = None

    def __post_init__(self):
        L = len(self.langs)
        if self.w is None:
            self.w = np.ones((L, L), dtype=np.float64)
        if self.scale_a is None:
            self.scale_a = np.ones(L, dtype=np.float64)
            self.scale_b = np.ones(L, dtype=np.float64)

    def __len__(self):
        return len(self.langs)


def extend_incremental(state: MaskState, new_lang: Lang) -> MaskState:
    """State for prefix+1 token; the leading block is bit-identical to the
    input state."""
    L = len(state)
    w = np.ones((L + 1, L + 1), dtype=np.float64)
    w[:L, :L] = state.w
    if new_lang is not Lang.SPECIAL:
        for j, lj in enumerate(state.langs):
            if lj is Lang.SPECIAL:
                continue
            val = state.w_same if lj is new_lang else state.w_diff
            w[L, j] = val
            w[j, L] = val
        w[L, L] = state.w_same
    sa = np.append(state.scale_a, state.alpha if new_lang is Lang.B else 1.0)
    sb = np.append(state.scale_b, state.alpha if new_lang is Lang.A else 1.0)
    return MaskState(
        w_same=state.w_same,
        w_diff=state.w_diff,
        alpha=state.alpha,
        langs=state.langs + [new_lang],
        w=w,
        scale_a=sa,
        scale_b=sb,
    )


def batch_state(langs, w_same=1.0, w_diff=0.1, alpha=0.1) -> MaskState:
    """Build the full state for a prefix in one shot (oracle counterpart of
    extend_incremental)."""
    _check_weights(w_same, w_diff)
    langs = list(langs)
    sa, sb = build_scalers(langs, alpha) if langs else (np.zeros(0), np.zeros(0))
    w = (
        build_reweight(langs, w_same, w_diff)
        if langs
        else np.ones((0, 0), dtype=np.float64)
    )
    return MaskState(
        w_same=w_same, w_diff=w_diff, alpha=alpha, langs=langs,
        w=w, scale_a=sa, scale_b=sb,
    )
