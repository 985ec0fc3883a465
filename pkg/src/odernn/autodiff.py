"""Tape-based reverse-mode differentiation over :mod:`odernn.tensor` ops.

Every function here accepts :class:`Var` or :class:`~odernn.tensor.Tensor`
arguments. When no argument is a ``Var`` the plain tensor result is returned
and nothing is recorded, so model code runs unchanged with or without a tape.

Reverse rules live in :data:`RULES`, keyed by op tag. A record stores the
forward values its rule needs; nothing is recomputed during the sweep.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .errors import DimensionError, UsageError
from .tensor import Tensor

__all__ = [
    "Var",
    "Tape",
    "OpRule",
    "RULES",
    "value",
    "is_var",
    "add",
    "sub",
    "mul",
    "scale",
    "matmul",
    "sigmoid",
    "tanh",
    "exp",
    "log",
    "reshape",
    "sum_",
    "mean",
    "cross_entropy",
]

_ids = itertools.count()


class Var:
    """A tensor value tracked on a :class:`Tape`."""

    __slots__ = ("value", "_grad", "id", "tape", "parents", "_gen")

    def __init__(self, value: Tensor, tape: "Tape", parents=()):
        self.value = value
        self._grad = None
        self.id = next(_ids)
        self.tape = tape
        # (parent node-id, rule tag) pairs; empty for leaves.
        self.parents = list(parents)
        self._gen = tape._gen

    @property
    def shape(self):
        return self.value.shape

    @property
    def grad(self) -> Tensor:
        if self._grad is None:
            return T.zeros(*self.shape)
        return self._grad

    def __repr__(self):
        return f"Var(id={self.id}, shape={self.shape})"


@dataclass(frozen=True)
class OpRule:
    # forward(values, aux) -> Tensor
    forward: Callable
    # backward(g, input_arrays, out_array, aux, needs) -> per-input grads
    backward: Callable


class _Record:
    __slots__ = ("tag", "out", "inputs", "aux")

    def __init__(self, tag, out, inputs, aux):
        self.tag = tag
        self.out = out
        self.inputs = inputs
        self.aux = aux


def value(x) -> Tensor:
    return x.value if isinstance(x, Var) else x


def is_var(x) -> bool:
    return isinstance(x, Var)


class Tape:
    """Ordered log of recorded operations."""

    def __init__(self):
        self._records: list[_Record] = []
        self._gen = 0

    def __len__(self):
        return len(self._records)

    def var(self, v) -> Var:
        """Create a leaf variable on this tape."""
        if isinstance(v, Var):
            raise UsageError("leaf value must be a Tensor, not a Var")
        return Var(T.tensor(v), self)

    def clear(self) -> None:
        """Drop every record; Vars created before the clear become unusable."""
        self._records = []
        self._gen += 1

    def _own(self, v: Var) -> None:
        if v.tape is not self:
            raise UsageError("inputs live on different tapes")
        if v._gen != self._gen:
            raise UsageError("Var belongs to a cleared tape")

    def record(self, tag: str, inputs: Sequence, aux=None) -> Var:
        rule = RULES[tag]
        for x in inputs:
            if isinstance(x, Var):
                self._own(x)
        out_value = rule.forward([value(x) for x in inputs], aux)
        out = Var(out_value, self,
                  [(x.id, tag) for x in inputs if isinstance(x, Var)])
        self._records.append(_Record(tag, out, tuple(inputs), aux))
        return out

    def backward(self, loss: Var, retain_intermediate: bool = True) -> dict[int, Tensor]:
        """Reverse sweep from a scalar ``loss``.

        Returns ``{node-id: gradient}`` for every reached Var (leaves only when
        ``retain_intermediate`` is false) and stores each into ``Var.grad``.
        """
        if not isinstance(loss, Var):
            raise UsageError("backward needs a Var")
        self._own(loss)
        if loss.shape != (1,):
            raise UsageError(f"loss must be scalar-shaped, got {loss.shape}")
        grads: dict[int, np.ndarray] = {loss.id: np.ones(1)}
        result: dict[int, Tensor] = {}
        produced: set[int] = set()
        for rec in reversed(self._records):
            g = grads.pop(rec.out.id, None) if not retain_intermediate else grads.get(rec.out.id)
            produced.add(rec.out.id)
            if g is None:
                continue
            if retain_intermediate or rec.out is loss:
                result[rec.out.id] = Tensor._wrap(np.array(g, dtype=np.float64), "backward")
                rec.out._grad = result[rec.out.id]
            needs = tuple(isinstance(x, Var) for x in rec.inputs)
            ins = [value(x).array for x in rec.inputs]
            local = RULES[rec.tag].backward(g, ins, rec.out.value.array, rec.aux, needs)
            for x, need, gx in zip(rec.inputs, needs, local):
                if not need:
                    continue
                prev = grads.get(x.id)
                grads[x.id] = gx if prev is None else prev + gx
        # Whatever remains was never produced by a record: leaves (or the loss).
        for vid, g in grads.items():
            if vid not in result:
                result[vid] = Tensor._wrap(np.array(g, dtype=np.float64), "backward")
        for leaf in self._leaf_vars():
            if leaf.id in result:
                leaf._grad = result[leaf.id]
        if loss.id in result:
            loss._grad = result[loss.id]
        return result

    def _leaf_vars(self):
        seen = set()
        for rec in self._records:
            for x in rec.inputs:
                if isinstance(x, Var) and not x.parents and x.id not in seen:
                    seen.add(x.id)
                    yield x

    def replay(self) -> bool:
        """Recompute every record forward and compare bitwise to the stored value."""
        for rec in self._records:
            again = RULES[rec.tag].forward([value(x) for x in rec.inputs], rec.aux)
            if again.shape != rec.out.shape or not np.array_equal(
                    again.array, rec.out.value.array):
                return False
        return True


def _apply(tag: str, *inputs, aux=None):
    tape = None
    for x in inputs:
        if isinstance(x, Var):
            if tape is None:
                tape = x.tape
            elif x.tape is not tape:
                raise UsageError("inputs live on different tapes")
    if tape is None:
        return RULES[tag].forward(list(inputs), aux)
    return tape.record(tag, inputs, aux)


# ---------------------------------------------------------------------------
# reverse rules

def _mm_back(g, ins, out, aux, needs):
    a, b = ins
    A = a if a.ndim == 2 else a[None, :]
    B = b if b.ndim == 2 else b[:, None]
    G = g.reshape(A.shape[0], B.shape[1])
    ga = (G @ B.T).reshape(a.shape) if needs[0] else None
    gb = (A.T @ G).reshape(b.shape) if needs[1] else None
    return ga, gb


def _ce_forward(vals, labels):
    (logits,) = vals
    z = logits.array if logits.rank == 2 else logits.array[:, None]
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    k, n = z.shape
    if labels.shape[0] != n:
        raise DimensionError(f"{labels.shape[0]} labels for {n} logit columns")
    if (labels < 0).any() or (labels >= k).any():
        raise UsageError(f"label out of range [0, {k})")
    m = z.max(axis=0)
    shifted = z - m
    lse = np.log(np.exp(shifted).sum(axis=0))
    nll = lse - shifted[labels, np.arange(n)]
    return Tensor._wrap(np.array([nll.mean()]), "cross_entropy")


def _ce_backward(g, ins, out, labels, needs):
    (logits,) = ins
    z = logits if logits.ndim == 2 else logits[:, None]
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    n = z.shape[1]
    p = np.exp(z - z.max(axis=0))
    p /= p.sum(axis=0)
    p[labels, np.arange(n)] -= 1.0
    return ((p * (g[0] / n)).reshape(logits.shape),)


RULES: dict[str, OpRule] = {
    "add": OpRule(lambda v, _: T.add(*v),
                  lambda g, ins, out, aux, nd: (g, g)),
    "sub": OpRule(lambda v, _: T.sub(*v),
                  lambda g, ins, out, aux, nd: (g, -g)),
    "mul": OpRule(lambda v, _: T.mul(*v),
                  lambda g, ins, out, aux, nd: (g * ins[1] if nd[0] else None,
                                                g * ins[0] if nd[1] else None)),
    "scale": OpRule(lambda v, k: T.scale(v[0], k),
                    lambda g, ins, out, k, nd: (g * k,)),
    "matmul": OpRule(lambda v, _: T.matmul(*v), _mm_back),
    "sigmoid": OpRule(lambda v, _: T.sigmoid(v[0]),
                      lambda g, ins, out, aux, nd: (g * out * (1.0 - out),)),
    "tanh": OpRule(lambda v, _: T.tanh(v[0]),
                   lambda g, ins, out, aux, nd: (g * (1.0 - out * out),)),
    "exp": OpRule(lambda v, _: T.exp(v[0]),
                  lambda g, ins, out, aux, nd: (g * out,)),
    "log": OpRule(lambda v, _: T.log(v[0]),
                  lambda g, ins, out, aux, nd: (g / ins[0],)),
    "reshape": OpRule(lambda v, shape: T.reshape(v[0], shape),
                      lambda g, ins, out, aux, nd: (g.reshape(ins[0].shape),)),
    "sum": OpRule(lambda v, _: Tensor._wrap(np.array([v[0].array.sum()]), "sum"),
                  lambda g, ins, out, aux, nd: (np.full(ins[0].shape, g[0]),)),
    "mean": OpRule(lambda v, _: Tensor._wrap(np.array([v[0].array.mean()]), "mean"),
                   lambda g, ins, out, aux, nd: (np.full(ins[0].shape, g[0] / ins[0].size),)),
    "cross_entropy": OpRule(_ce_forward, _ce_backward),
}


# ---------------------------------------------------------------------------
# public op surface

def add(a, b):
    return _apply("add", a, b)


def sub(a, b):
    return _apply("sub", a, b)


def mul(a, b):
    return _apply("mul", a, b)


def scale(a, k: float):
    return _apply("scale", a, aux=float(k))


def matmul(a, b):
    return _apply("matmul", a, b)


def sigmoid(a):
    return _apply("sigmoid", a)


def tanh(a):
    return _apply("tanh", a)


def exp(a):
    return _apply("exp", a)


def log(a):
    return _apply("log", a)


def reshape(a, shape):
    return _apply("reshape", a, aux=tuple(int(s) for s in shape))


def sum_(a):
    """Sum of all elements as a shape-(1,) value."""
    return _apply("sum", a)


def mean(a):
    """Mean of all elements as a shape-(1,) value."""
    return _apply("mean", a)


def cross_entropy(logits, labels):
    """Mean of ``-log softmax(logits)[label]`` over logit columns.

    ``logits`` is ``[k]`` with a single label or ``[k x B]`` with B labels.
    Max-subtraction keeps the log-sum-exp finite.
    """
    if np.ndim(labels) == 0:
        labels = (int(labels),)
    return _apply("cross_entropy", logits, aux=tuple(int(v) for v in labels))
