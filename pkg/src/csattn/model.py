"""Encoder-decoder assembly, training step, checkpoint serialization."""
from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, Tape
from .attention import (
    VARIANTS,
    AttentionParams,
    attend_baseline,
    attend_cross,
    attend_reweighted,
    attend_split,
)
from .errors import DataError, NumericError, ShapeError
from .langmask import build_reweight, build_scalers, causal_mask
from .vocab import PAD, Lang, Vocab

CKPT_MAGIC = b"CSATTN"
CKPT_VERSION = 1


@dataclass
class ModelConfig:
    vocab_size: int
    d_model: int = 64
    heads: int = 4
    d_ff: int = 128
    n_enc: int = 2
    n_dec: int = 2
    d_f: int = 16
    dropout: float = 0.1
    eps_ls: float = 0.1
    variant: str = "baseline"
    w_same: float = 1.0
    w_diff: float = 0.1
    alpha: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.998
    eps_opt: float = 1e-8
    warmup: int = 400
    lr_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.d_model % self.heads != 0:
            raise ShapeError(f"d_model {self.d_model} not divisible by heads {self.heads}")
        if self.variant not in VARIANTS:
            raise DataError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        for name in ("dropout", "eps_ls"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise DataError(f"{name} must be in [0,1), got {v}")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class Batch:
    features: np.ndarray  # (B, T, d_f)
    feat_valid: np.ndarray  # (B, T) bool
    tgt_in: np.ndarray  # (B, L) int, row starts with sos
    tgt_out: np.ndarray  # (B, L) int
    tgt_valid: np.ndarray  # (B, L) bool
    langs: list  # per row: language tags of tgt_in tokens


def make_batch(features_list, target_ids_list, vocab: Vocab) -> Batch:
    """Pad features and [sos, ..., eos] target rows into one batch.

    target_ids_list rows must already include sos and eos.
    """
    B = len(features_list)
    if B == 0 or B != len(target_ids_list):
        raise DataError("make_batch: empty batch or mismatched lengths")
    T = max(f.shape[0] for f in features_list)
    d_f = features_list[0].shape[1]
    L = max(len(t) for t in target_ids_list) - 1
    feats = np.zeros((B, T, d_f))
    fvalid = np.zeros((B, T), dtype=bool)
    tin = np.full((B, L), PAD, dtype=np.int64)
    tout = np.full((B, L), PAD, dtype=np.int64)
    tvalid = np.zeros((B, L), dtype=bool)
    langs = []
    for b, (f, ids) in enumerate(zip(features_list, target_ids_list)):
        feats[b, : f.shape[0]] = f
        fvalid[b, : f.shape[0]] = True
        n = len(ids) - 1
        tin[b, :n] = ids[:-1]
        tout[b, :n] = ids[1:]
        tvalid[b, :n] = True
        row = [vocab.token_language(int(t)) for t in ids[:-1]]
        row += [Lang.SPECIAL] * (L - n)
        langs.append(row)
    return Batch(feats, fvalid, tin, tout, tvalid, langs)


def sinusoidal(L: int, d: int) -> np.ndarray:
    pos = np.arange(L)[:, None]
    i = np.arange(d // 2)[None, :]
    ang = pos / np.power(10000.0, 2.0 * i / d)
    pe = np.zeros((L, d))
    pe[:, 0::2] = np.sin(ang)
    pe[:, 1::2] = np.cos(ang)
    return pe


def _dropout(x: Tensor, rate: float, rng) -> Tensor:
    if rng is None or rate <= 0.0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return ad.cmul(x, keep)


class Model:
    """Transformer encoder-decoder with a configurable decoder
    self-attention variant. Parameters live in an ordered name->Tensor
    registry shared by the optimizer and the checkpoint format."""

    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        self.params: dict[str, Tensor] = {}
        rng = np.random.default_rng(cfg.seed)
        d, h = cfg.d_model, cfg.heads

        self._mat("enc.in_proj.w", (2 * cfg.d_f, d), rng)
        self._vec("enc.in_proj.b", d)
        self.enc_blocks = []
        for i in range(cfg.n_enc):
            blk = {
                "attn": self._bank(f"enc.{i}.attn", d, h, rng),
                "ln1": self._ln(f"enc.{i}.ln1", d),
                "ffn": self._ffn(f"enc.{i}.ffn", d, cfg.d_ff, rng),
                "ln2": self._ln(f"enc.{i}.ln2", d),
            }
            self.enc_blocks.append(blk)

        self._mat("dec.emb", (cfg.vocab_size, d), rng)
        self.dec_blocks = []
        for i in range(cfg.n_dec):
            blk = {
                "self_a": self._bank(f"dec.{i}.self_a", d, h, rng),
                "ln1": self._ln(f"dec.{i}.ln1", d),
                "cross": self._bank(f"dec.{i}.cross", d, h, rng),
                "ln2": self._ln(f"dec.{i}.ln2", d),
                "ffn": self._ffn(f"dec.{i}.ffn", d, cfg.d_ff, rng),
                "ln3": self._ln(f"dec.{i}.ln3", d),
            }
            if cfg.variant == "independent":
                blk["self_b"] = self._bank(f"dec.{i}.self_b", d, h, rng)
            self.dec_blocks.append(blk)
        self._mat("out.w", (d, cfg.vocab_size), rng)
        self._vec("out.b", cfg.vocab_size)

    # -- parameter construction ---------------------------------------------

    def _reg(self, t: Tensor) -> Tensor:
        if t.name in self.params:
            raise DataError(f"duplicate parameter name {t.name}")
        self.params[t.name] = t
        return t

    def _mat(self, name, shape, rng):
        s = 1.0 / np.sqrt(shape[0])
        return self._reg(Tensor(rng.uniform(-s, s, shape), name=name))

    def _vec(self, name, n, fill=0.0):
        return self._reg(Tensor(np.full(n, fill), name=name))

    def _ln(self, prefix, d):
        return (self._vec(f"{prefix}.g", d, 1.0), self._vec(f"{prefix}.b", d))

    def _ffn(self, prefix, d, d_ff, rng):
        return {
            "w1": self._mat(f"{prefix}.w1", (d, d_ff), rng),
            "b1": self._vec(f"{prefix}.b1", d_ff),
            "w2": self._mat(f"{prefix}.w2", (d_ff, d), rng),
            "b2": self._vec(f"{prefix}.b2", d),
        }

    def _bank(self, prefix, d, h, rng) -> AttentionParams:
        bank = AttentionParams.init(d, h, rng, prefix=prefix)
        for t in bank.tensors():
            self._reg(t)
        return bank

    # -- forward pieces ------------------------------------------------------

    def _sublayer(self, x, y, ln, rate, rng):
        g, b = ln
        return ad.layer_norm(ad.add(x, _dropout(y, rate, rng)), g, b)

    def _ffn_fwd(self, x, ffn):
        hdn = ad.relu(ad.add(ad.matmul(x, ffn["w1"]), ffn["b1"]))
        return ad.add(ad.matmul(hdn, ffn["w2"]), ffn["b2"])

    def encode(self, features: np.ndarray, feat_valid: np.ndarray,
               train: bool = False, rng=None):
        """Stride-2 downsampling projection, positions, encoder blocks.

        Returns (enc_out Tensor (B,T2,d), enc_valid (B,T2))."""
        rate = self.cfg.dropout if train else 0.0
        B, T, d_f = features.shape
        if d_f != self.cfg.d_f:
            raise ShapeError(f"feature dim {d_f}, expected {self.cfg.d_f}")
        if T % 2:
            features = np.concatenate([features, np.zeros((B, 1, d_f))], axis=1)
            feat_valid = np.concatenate(
                [feat_valid, np.zeros((B, 1), dtype=bool)], axis=1
            )
            T += 1
        T2 = T // 2
        stacked = Tensor(features.reshape(B, T2, 2 * d_f))
        x = ad.add(ad.matmul(stacked, self.params["enc.in_proj.w"]),
                   self.params["enc.in_proj.b"])
        x = ad.cadd(x, sinusoidal(T2, self.cfg.d_model)[None])
        x = _dropout(x, rate, rng)
        enc_valid = feat_valid.reshape(B, T2, 2).any(axis=2)
        for blk in self.enc_blocks:
            y = attend_cross(x, x, blk["attn"], enc_valid)
            x = self._sublayer(x, y, blk["ln1"], rate, rng)
            y = self._ffn_fwd(x, blk["ffn"])
            x = self._sublayer(x, y, blk["ln2"], rate, rng)
        return x, enc_valid

    def decode(self, enc_out: Tensor, enc_valid: np.ndarray, tgt_in: np.ndarray,
               langs, w=None, scale_a=None, scale_b=None,
               train: bool = False, rng=None) -> Tensor:
        """Teacher-forced decoder pass returning logits (B, L, V).

        Language masks default to a batch build from `langs`; decoding
        passes the incrementally grown w/scalers instead.
        """
        cfg = self.cfg
        rate = cfg.dropout if train else 0.0
        B, L = tgt_in.shape
        causal = causal_mask(L)
        variant = cfg.variant
        if variant == "score-reweight" and w is None:
            w = np.stack([build_reweight(row, cfg.w_same, cfg.w_diff) for row in langs])
        if variant in ("shared", "independent") and scale_a is None:
            pairs = [build_scalers(row, cfg.alpha) for row in langs]
            scale_a = np.stack([p[0] for p in pairs])
            scale_b = np.stack([p[1] for p in pairs])

        x = ad.cmul(ad.embedding(self.params["dec.emb"], tgt_in), np.sqrt(cfg.d_model))
        x = ad.cadd(x, sinusoidal(L, cfg.d_model)[None])
        x = _dropout(x, rate, rng)
        for blk in self.dec_blocks:
            if variant == "baseline":
                y = attend_baseline(x, blk["self_a"], causal)
            elif variant == "score-reweight":
                y = attend_reweighted(x, blk["self_a"], causal, w)
            else:
                bank_b = blk["self_b"] if variant == "independent" else blk["self_a"]
                y = attend_split(x, blk["self_a"], bank_b, causal,
                                 scale_a, scale_b, langs)
            x = self._sublayer(x, y, blk["ln1"], rate, rng)
            y = attend_cross(x, enc_out, blk["cross"], enc_valid)
            x = self._sublayer(x, y, blk["ln2"], rate, rng)
            y = self._ffn_fwd(x, blk["ffn"])
            x = self._sublayer(x, y, blk["ln3"], rate, rng)
        return ad.add(ad.matmul(x, self.params["out.w"]), self.params["out.b"])

    def forward(self, batch: Batch, train: bool = False, rng=None) -> Tensor:
        enc_out, enc_valid = self.encode(batch.features, batch.feat_valid, train, rng)
        return self.decode(enc_out, enc_valid, batch.tgt_in, batch.langs,
                           train=train, rng=rng)

    def loss(self, batch: Batch, train: bool = False, rng=None) -> Tensor:
        logits = self.forward(batch, train, rng)
        return ad.cross_entropy_smoothed(
            logits, batch.tgt_out, batch.tgt_valid, self.cfg.eps_ls
        )

    def param_count(self) -> int:
        return sum(t.size for t in self.params.values())

    def zero_grads(self):
        for t in self.params.values():
            t.zero_grad()


# -- optimizer ---------------------------------------------------------------


class AdamState:
    def __init__(self, model: Model):
        self.m = {n: np.zeros_like(t.data) for n, t in model.params.items()}
        self.v = {n: np.zeros_like(t.data) for n, t in model.params.items()}


def warmup_lr(cfg: ModelConfig, step: int) -> float:
    return (cfg.lr_scale * cfg.d_model ** -0.5
            * min(step ** -0.5, step * cfg.warmup ** -1.5))


def train_step(model: Model, batch: Batch, opt: AdamState, step: int,
               rng=None, probe_prefix: str | None = None):
    """One forward/backward/update; returns the loss (and, when
    probe_prefix is given, the max absolute pre-update gradient over
    parameters whose name contains it). Gradients are zeroed after the
    apply. Aborts on non-finite loss or gradients."""
    if step < 1:
        raise DataError("step must be >= 1")
    cfg = model.cfg
    with Tape() as tape:
        loss = model.loss(batch, train=True, rng=rng)
        if not np.isfinite(loss.data):
            raise NumericError(f"non-finite loss at step {step}")
        tape.backward(loss)
    probe_max = None
    if probe_prefix is not None:
        probe_max = max(
            (float(np.abs(t.grad).max()) if t.grad is not None else 0.0)
            for n, t in model.params.items()
            if probe_prefix in n
        )
    lr = warmup_lr(cfg, step)
    bc1 = 1.0 - cfg.beta1 ** step
    bc2 = 1.0 - cfg.beta2 ** step
    for name, t in model.params.items():
        if t.grad is None:
            continue
        if not np.isfinite(t.grad).all():
            raise NumericError(f"non-finite gradient in {name} at step {step}")
        m = opt.m[name]
        v = opt.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * t.grad
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * t.grad ** 2
        t.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps_opt)
    model.zero_grads()
    if probe_prefix is not None:
        return loss.item(), probe_max
    return loss.item()


# -- checkpoint format -------------------------------------------------------
# magic "CSATTN", version byte, u64 step, u32 json-config length + bytes,
# u32 param count, then per parameter: u32 name length, name (utf-8),
# u32 rank, u32 dims..., row-major little-endian float64 values.


def save_checkpoint(path, model: Model, step: int = 0):
    buf = io.BytesIO()
    buf.write(CKPT_MAGIC)
    buf.write(struct.pack("<BQ", CKPT_VERSION, step))
    cfg_bytes = json.dumps(model.cfg.to_dict(), sort_keys=True).encode()
    buf.write(struct.pack("<I", len(cfg_bytes)))
    buf.write(cfg_bytes)
    buf.write(struct.pack("<I", len(model.params)))
    for name, t in model.params.items():
        nb = name.encode()
        buf.write(struct.pack("<I", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<I", t.data.ndim))
        buf.write(struct.pack(f"<{t.data.ndim}I", *t.data.shape))
        buf.write(t.data.astype("<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def _read(fh, n, what):
    b = fh.read(n)
    if len(b) != n:
        raise DataError(f"truncated checkpoint while reading {what}")
    return b


def load_checkpoint(path) -> tuple[Model, int]:
    with open(path, "rb") as fh:
        if _read(fh, 6, "magic") != CKPT_MAGIC:
            raise DataError(f"{path}: not a CSATTN checkpoint (bad magic)")
        version, step = struct.unpack("<BQ", _read(fh, 9, "header"))
        if version != CKPT_VERSION:
            raise DataError(f"{path}: unsupported checkpoint version {version}")
        (clen,) = struct.unpack("<I", _read(fh, 4, "config length"))
        cfg = ModelConfig.from_dict(json.loads(_read(fh, clen, "config")))
        model = Model(cfg)
        (n,) = struct.unpack("<I", _read(fh, 4, "param count"))
        if n != len(model.params):
            raise DataError(
                f"{path}: has {n} parameters, config implies {len(model.params)}"
            )
        for _ in range(n):
            (ln,) = struct.unpack("<I", _read(fh, 4, "name length"))
            name = _read(fh, ln, "name").decode()
            if name not in model.params:
                raise DataError(f"{path}: unknown parameter name {name!r}")
            (rank,) = struct.unpack("<I", _read(fh, 4, "rank"))
            dims = struct.unpack(f"<{rank}I", _read(fh, 4 * rank, "dims"))
            t = model.params[name]
            if dims != t.data.shape:
                raise DataError(f"{path}: {name} has shape {dims}, expected {t.data.shape}")
            vals = np.frombuffer(
                _read(fh, 8 * t.size, f"values of {name}"), dtype="<f8"
            )
            t.data[...] = vals.reshape(dims)
        if fh.read(1):
            raise DataError(f"{path}: trailing bytes after last parameter")
    return model, step
