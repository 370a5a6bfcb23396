"""Dense float64 tensors with tape-based reverse-mode differentiation.

Everything runs in double precision so finite-difference gradient checks
are meaningful. Ops record a backward closure on the active tape; with no
tape active (eval/decode) they are plain numpy calls.
"""
from __future__ import annotations

import math

import numpy as np

from .errors import DataError, NumericError, ShapeError, VocabError

_TAPE: "Tape | None" = None


def _finite(arr, op: str):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values produced by {op}")


class Tensor:
    """Row-major float64 array with an optional gradient slot."""

    __slots__ = ("data", "grad", "name")

    def __init__(self, data, name: str | None = None):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def zero_grad(self):
        self.grad = None

    def accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def item(self) -> float:
        return np.asarray(self.data).item()

    def __repr__(self):
        tag = f" {self.name}" if self.name else ""
        return f"Tensor{tag}(shape={self.data.shape})"


class Tape:
    """Ordered op record; backward replays it in exact reverse order."""

    def __init__(self):
        self._ops: list = []

    def __enter__(self):
        global _TAPE
        self._prev = _TAPE
        _TAPE = self
        return self

    def __exit__(self, *exc):
        global _TAPE
        _TAPE = self._prev
        return False

    def backward(self, loss: Tensor):
        if loss.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        _finite(loss.data, "loss")
        loss.grad = np.ones_like(loss.data)
        for bwd in reversed(self._ops):
            bwd()


def _rec(bwd):
    if _TAPE is not None:
        _TAPE._ops.append(bwd)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Reduce a broadcast gradient back to the original shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# primitives


def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data)
    _finite(out.data, "add")

    def bwd():
        if out.grad is None:
            return
        a.accumulate(_unbroadcast(out.grad, a.shape))
        b.accumulate(_unbroadcast(out.grad, b.shape))

    _rec(bwd)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data * b.data)
    _finite(out.data, "mul")

    def bwd():
        if out.grad is None:
            return
        a.accumulate(_unbroadcast(out.grad * b.data, a.shape))
        b.accumulate(_unbroadcast(out.grad * a.data, b.shape))

    _rec(bwd)
    return out


def cmul(a: Tensor, c) -> Tensor:
    """Multiply by a constant scalar or ndarray (no gradient through c)."""
    c = np.asarray(c, dtype=np.float64)
    out = Tensor(a.data * c)
    _finite(out.data, "cmul")

    def bwd():
        if out.grad is None:
            return
        a.accumulate(_unbroadcast(out.grad * c, a.shape))

    _rec(bwd)
    return out


def cadd(a: Tensor, c) -> Tensor:
    """Add a constant scalar or ndarray (no gradient through c)."""
    c = np.asarray(c, dtype=np.float64)
    out = Tensor(a.data + c)
    _finite(out.data, "cadd")

    def bwd():
        if out.grad is None:
            return
        a.accumulate(_unbroadcast(out.grad, a.shape))

    _rec(bwd)
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim < 2 or b.data.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    if b.data.ndim > 2 and a.data.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul batch mismatch: {a.shape} x {b.shape}")
    out = Tensor(np.matmul(a.data, b.data))
    _finite(out.data, "matmul")

    def bwd():
        if out.grad is None:
            return
        g = out.grad
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        a.accumulate(_unbroadcast(ga, a.shape))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        b.accumulate(_unbroadcast(gb, b.shape))

    _rec(bwd)
    return out


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    out = Tensor(np.transpose(a.data, axes))
    inv = tuple(np.argsort(axes))

    def bwd():
        if out.grad is None:
            return
        a.accumulate(np.transpose(out.grad, inv))

    _rec(bwd)
    return out


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    out = Tensor(a.data.reshape(shape))

    def bwd():
        if out.grad is None:
            return
        a.accumulate(out.grad.reshape(a.shape))

    _rec(bwd)
    return out


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0.0))

    def bwd():
        if out.grad is None:
            return
        a.accumulate(out.grad * (a.data > 0.0))

    _rec(bwd)
    return out


def softmax_rows(x: Tensor) -> Tensor:
    """Softmax over the last axis, stabilized by per-row max subtraction."""
    _finite(x.data, "softmax input")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(y)

    def bwd():
        if out.grad is None:
            return
        g = out.grad
        dot = np.sum(g * y, axis=-1, keepdims=True)
        x.accumulate(y * (g - dot))

    _rec(bwd)
    return out


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    n = x.shape[-1]
    if n < 2:
        raise ShapeError("layer_norm needs at least 2 features")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = Tensor(xhat * gain.data + bias.data)
    _finite(out.data, "layer_norm")

    def bwd():
        if out.grad is None:
            return
        g = out.grad
        gain.accumulate(_unbroadcast(g * xhat, gain.shape))
        bias.accumulate(_unbroadcast(g, bias.shape))
        dxh = g * gain.data
        m1 = dxh.mean(axis=-1, keepdims=True)
        m2 = (dxh * xhat).mean(axis=-1, keepdims=True)
        x.accumulate(inv * (dxh - m1 - xhat * m2))

    _rec(bwd)
    return out


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise VocabError(f"embedding id out of range 0..{table.shape[0] - 1}")
    out = Tensor(table.data[ids])

    def bwd():
        if out.grad is None:
            return
        g = np.zeros_like(table.data)
        np.add.at(g, ids, out.grad)
        table.accumulate(g)

    _rec(bwd)
    return out


def sum_all(a: Tensor) -> Tensor:
    out = Tensor(np.sum(a.data))

    def bwd():
        if out.grad is None:
            return
        a.accumulate(np.full_like(a.data, np.asarray(out.grad).item()))

    _rec(bwd)
    return out


def cross_entropy_smoothed(logits: Tensor, targets, valid, eps_ls: float) -> Tensor:
    """Label-smoothed cross entropy, averaged over valid positions.

    The smoothed target puts 1-eps_ls on the gold id and eps_ls/(V-1) on
    every other id. Positions with valid == False are excluded.
    """
    if not 0.0 <= eps_ls < 1.0:
        raise ValueError(f"eps_ls must be in [0,1), got {eps_ls}")
    targets = np.asarray(targets, dtype=np.int64)
    valid = np.asarray(valid, dtype=bool)
    if targets.shape != logits.shape[:-1] or valid.shape != targets.shape:
        raise ShapeError(
            f"targets {targets.shape} / valid {valid.shape} do not match logits {logits.shape}"
        )
    V = logits.shape[-1]
    if targets.size and (targets.min() < 0 or targets.max() >= V):
        raise VocabError(f"target id out of range 0..{V - 1}")
    nvalid = int(valid.sum())
    if nvalid == 0:
        raise DataError("cross_entropy_smoothed: no valid positions to average over")

    flat = logits.data.reshape(-1, V)
    tflat = targets.reshape(-1)
    vflat = valid.reshape(-1)

    m = flat.max(axis=-1, keepdims=True)
    logz = m[:, 0] + np.log(np.exp(flat - m).sum(axis=-1))
    # expected logit under the smoothed target distribution
    gold = flat[np.arange(flat.shape[0]), tflat]
    off = (flat.sum(axis=-1) - gold) * (eps_ls / (V - 1)) if V > 1 else 0.0
    qlogit = (1.0 - eps_ls) * gold + off
    per_pos = (logz - qlogit) * vflat
    out = Tensor(per_pos.sum() / nvalid)
    _finite(out.data, "cross_entropy_smoothed")

    def bwd():
        if out.grad is None:
            return
        p = np.exp(flat - m)
        p /= p.sum(axis=-1, keepdims=True)
        q = np.full_like(flat, eps_ls / (V - 1) if V > 1 else 0.0)
        q[np.arange(flat.shape[0]), tflat] = 1.0 - eps_ls
        g = (p - q) * vflat[:, None] * (np.asarray(out.grad).item() / nvalid)
        logits.accumulate(g.reshape(logits.shape))

    _rec(bwd)
    return out


def grad_check(loss_fn, params, eps: float = 1e-5) -> float:
    """Central-difference check of recorded gradients.

    loss_fn builds and returns the scalar loss Tensor from the current
    parameter values. Returns the max relative error with denominator
    max(|analytic|, |numeric|, 1e-8).
    """
    if not 1e-7 <= eps <= 1e-4:
        raise ValueError(f"eps must lie in [1e-7, 1e-4], got {eps}")
    for p in params:
        p.zero_grad()  # stale gradients would corrupt the comparison
    with Tape() as tape:
        loss = loss_fn()
        if not np.isfinite(loss.data).all():
            raise NumericError("grad_check: non-finite loss at base point")
        tape.backward(loss)
    analytic = [
        p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params
    ]
    for p in params:
        p.zero_grad()

    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.data.reshape(-1)
        gflat = ga.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = np.asarray(loss_fn().data).item()
            flat[i] = orig - eps
            f_minus = np.asarray(loss_fn().data).item()
            flat[i] = orig
            if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
                raise NumericError(
                    f"grad_check: non-finite loss perturbing {p.name or 'param'}[{i}]"
                )
            num = (f_plus - f_minus) / (2.0 * eps)
            rel = abs(gflat[i] - num) / max(abs(gflat[i]), abs(num), 1e-8)
            worst = max(worst, rel)
    return worst
