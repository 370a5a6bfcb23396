"""Four interchangeable decoder self-attention schemes.

baseline          scaled dot-product with causal masking
score_reweighted  pre-softmax scores multiplied by the language matrix W
split_shared      two language streams, one parameter bank
split_independent two language streams, one bank per language

Stream outputs are merged by selecting, per row, the stream of that row's
language. Special rows average the streams of the languages actually
present in the sequence, so a monolingual sequence uses only its own
stream (this keeps the monolingual case exactly equal to baseline and
keeps the idle bank out of the graph entirely).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ShapeError
from .langmask import NEG_INF
from .vocab import Lang

VARIANTS = ("baseline", "score-reweight", "shared", "independent")


@dataclass
class AttentionParams:
    """One multi-head attention parameter bank (concatenated-head layout)."""

    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    bq: Tensor
    bv: Tensor
    bo: Tensor
    heads: int
    reads: int = 0  # forward-pass access counter, used by isolation tests

    @classmethod
    def init(cls, d: int, heads: int, rng: np.random.Generator, prefix: str = "attn"):
        if d % heads != 0:
            raise ShapeError(f"model width {d} not divisible by {heads} heads")
        s = 1.0 / np.sqrt(d)
        mk = lambda n: Tensor(rng.uniform(-s, s, (d, d)), name=f"{prefix}.{n}")
        vk = lambda n: Tensor(np.zeros(d), name=f"{prefix}.{n}")
        # no key bias: it shifts every score in a softmax row equally,
        # so it would be an exactly-redundant parameter
        return cls(
            wq=mk("wq"), wk=mk("wk"), wv=mk("wv"), wo=mk("wo"),
            bq=vk("bq"), bv=vk("bv"), bo=vk("bo"),
            heads=heads,
        )

    def tensors(self) -> list[Tensor]:
        return [self.wq, self.wk, self.wv, self.wo, self.bq, self.bv, self.bo]

    def copy_from(self, other: "AttentionParams"):
        for dst, src in zip(self.tensors(), other.tensors()):
            dst.data[...] = src.data


def _split_heads(x: Tensor, h: int) -> Tensor:
    B, L, d = x.shape
    return ad.transpose(ad.reshape(x, (B, L, h, d // h)), (0, 2, 1, 3))


def _attend(xq: Tensor, xkv: Tensor, params: AttentionParams,
            mul_mask: np.ndarray, add_mask: np.ndarray) -> Tensor:
    """Generic multi-head attention. Masks broadcast against scores of
    shape (B, h, Lq, Lk); mul_mask scales admissible scores, add_mask pins
    inadmissible ones at NEG_INF."""
    params.reads += 1
    h = params.heads
    B, Lq, d = xq.shape
    q = _split_heads(ad.add(ad.matmul(xq, params.wq), params.bq), h)
    k = _split_heads(ad.matmul(xkv, params.wk), h)
    v = _split_heads(ad.add(ad.matmul(xkv, params.wv), params.bv), h)
    dk = d // h
    scores = ad.cmul(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dk))
    scores = ad.cadd(ad.cmul(scores, mul_mask), add_mask)
    attn = ad.softmax_rows(scores)
    ctx = ad.matmul(attn, v)
    ctx = ad.reshape(ad.transpose(ctx, (0, 2, 1, 3)), (B, Lq, d))
    return ad.add(ad.matmul(ctx, params.wo), params.bo)


def _causal_masks(causal: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mul = causal.astype(np.float64)
    addm = np.where(causal, 0.0, NEG_INF)
    return mul[None, None], addm[None, None]


def attend_baseline(x: Tensor, params: AttentionParams, causal: np.ndarray) -> Tensor:
    mul, addm = _causal_masks(causal)
    return _attend(x, x, params, mul, addm)


def attend_reweighted(x: Tensor, params: AttentionParams, causal: np.ndarray,
                      w: np.ndarray) -> Tensor:
    """Scores multiplied elementwise by W (shared across heads) on
    admissible entries; causality stays additive."""
    if w.shape[-1] != x.shape[1]:
        raise ShapeError(f"reweight matrix {w.shape} vs sequence length {x.shape[1]}")
    if w.ndim == 2:
        w = w[None]
    mul = np.where(causal, w, 0.0)[:, None]  # (B,1,L,L)
    addm = np.where(causal, 0.0, NEG_INF)[None, None]
    return _attend(x, x, params, mul, addm)


def merge_weights(langs) -> tuple[np.ndarray, np.ndarray]:
    """Per-row stream selection weights (wA, wB), each in {0, 0.5, 1}.

    Language rows select their own stream. Special rows average the
    streams of the languages present among the non-special tokens; with
    both (or neither) present they take the plain mean."""
    langs = list(langs)
    has_a = any(l is Lang.A for l in langs)
    has_b = any(l is Lang.B for l in langs)
    if has_a == has_b:
        special = (0.5, 0.5)
    elif has_a:
        special = (1.0, 0.0)
    else:
        special = (0.0, 1.0)
    wa = np.empty(len(langs))
    wb = np.empty(len(langs))
    for i, l in enumerate(langs):
        if l is Lang.A:
            wa[i], wb[i] = 1.0, 0.0
        elif l is Lang.B:
            wa[i], wb[i] = 0.0, 1.0
        else:
            wa[i], wb[i] = special
    return wa, wb


def merge_streams(out_a: Tensor, out_b: Tensor, langs) -> Tensor:
    """Recombine stream outputs row-wise by language."""
    if out_a.shape != out_b.shape:
        raise ShapeError(f"stream shapes differ: {out_a.shape} vs {out_b.shape}")
    wa, wb = _batch_merge_weights(langs, out_a.shape)
    return ad.add(ad.cmul(out_a, wa), ad.cmul(out_b, wb))


def _batch_merge_weights(langs, shape):
    """langs: one tag sequence, or a list of B tag sequences."""
    if langs and isinstance(langs[0], Lang):
        langs = [langs]
    if len(langs) != shape[0] or any(len(row) != shape[1] for row in langs):
        raise ShapeError(f"language tags do not match stream shape {shape}")
    wa = np.empty((len(langs), shape[1], 1))
    wb = np.empty_like(wa)
    for b, row in enumerate(langs):
        a_row, b_row = merge_weights(row)
        wa[b, :, 0] = a_row
        wb[b, :, 0] = b_row
    return wa, wb


def attend_split(x: Tensor, params_a: AttentionParams, params_b: AttentionParams,
                 causal: np.ndarray, scale_a: np.ndarray, scale_b: np.ndarray,
                 langs) -> Tensor:
    """Two full-length language streams with row-wise merge.

    Shared parameters: pass the same bank twice. A stream whose merge
    weight is zero everywhere is skipped, so its bank is neither read nor
    pulled into the gradient graph.
    """
    wa, wb = _batch_merge_weights(langs, (x.shape[0], x.shape[1]))
    mul, addm = _causal_masks(causal)
    if scale_a.ndim == 1:
        scale_a = scale_a[None]
        scale_b = scale_b[None]
    out = None
    if np.any(wa > 0.0):
        xa = ad.cmul(x, scale_a[:, :, None])
        out = ad.cmul(_attend(xa, xa, params_a, mul, addm), wa)
    if np.any(wb > 0.0):
        xb = ad.cmul(x, scale_b[:, :, None])
        stream_b = _attend(xb, xb, params_b, mul, addm)
        term_b = ad.cmul(stream_b, wb)
        out = term_b if out is None else ad.add(out, term_b)
    return out


def attend_cross(x_dec: Tensor, enc_out: Tensor, params: AttentionParams,
                 key_valid: np.ndarray) -> Tensor:
    """Decoder-to-encoder attention; identical for every variant."""
    B, Lq, _ = x_dec.shape
    T = enc_out.shape[1]
    kv = np.asarray(key_valid, dtype=bool)
    if kv.shape != (B, T):
        raise ShapeError(f"key validity {kv.shape} vs encoder output (B={B}, T={T})")
    mul = np.ones((B, 1, 1, T))
    addm = np.where(kv, 0.0, NEG_INF)[:, None, None, :]
    return _attend(x_dec, enc_out, params, mul, addm)
