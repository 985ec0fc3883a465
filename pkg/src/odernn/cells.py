"""GRU/LSTM gates, the continuous-time ODE-GRU/ODE-LSTM vector fields and
discrete baseline steps.

Inputs may be vectors (one series) or ``[d x B]`` matrices (B series as
columns). For the batched form, bias and peephole vectors must first be
tiled with :func:`expand_batch`; there is no implicit broadcasting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from typing import NamedTuple, Optional

import numpy as np

from . import autodiff as ad
from .errors import DimensionError, UsageError
from .odesolve import OdeState
from .tensor import Tensor

FIELD_VARIANTS = ("paper_literal", "contractive")


class _Params:
    """Shared plumbing for the parameter records."""

    # names of vector-valued fields that expand_batch tiles
    _vectors: tuple = ()

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)
                if getattr(self, f.name) is not None}

    @classmethod
    def from_dict(cls, d: dict):
        p = cls(**d)
        p.check()
        return p

    def map(self, fn):
        return replace(self, **{k: fn(k, v) for k, v in self.as_dict().items()})

    @property
    def d_obs(self) -> int:
        raise NotImplementedError

    @property
    def d_h(self) -> int:
        raise NotImplementedError

    @property
    def n_classes(self) -> Optional[int]:
        W = getattr(self, "W_cls", None)
        return None if W is None else ad.value(W).shape[0]

    def check(self) -> None:
        """Verify every shape against (d_obs, d_h) and every entry is finite."""
        o, h = self.d_obs, self.d_h
        for name, v in self.as_dict().items():
            want = self._expected_shape(name, o, h)
            got = ad.value(v).shape
            if got != want:
                raise DimensionError(f"{name}: expected shape {want}, got {got}")

    def _expected_shape(self, name, o, h):
        n = self.n_classes
        if name == "W_cls":
            return (n, h)
        if name == "b_cls":
            return (n,)
        return self._shapes(o, h)[name]


@dataclass(frozen=True)
class GruParams(_Params):
    W_r: object
    W_z: object
    W_h: object
    U_r: object
    U_z: object
    U_h: object
    b_r: object
    b_z: object
    b_h: object
    W_o: object
    b_o: object
    W_cls: object = None
    b_cls: object = None

    _vectors = ("b_r", "b_z", "b_h", "b_o", "b_cls")

    @property
    def d_obs(self):
        return ad.value(self.W_r).shape[1]

    @property
    def d_h(self):
        return ad.value(self.W_r).shape[0]

    @staticmethod
    def _shapes(o, h):
        s = {n: (h, o) for n in ("W_r", "W_z", "W_h")}
        s.update({n: (h, h) for n in ("U_r", "U_z", "U_h")})
        s.update({n: (h,) for n in ("b_r", "b_z", "b_h")})
        s.update(W_o=(o, h), b_o=(o,))
        return s


@dataclass(frozen=True)
class LstmParams(_Params):
    W_xi: object
    W_xf: object
    W_xc: object
    W_xo: object
    W_hi: object
    W_hf: object
    W_hc: object
    W_ho: object
    w_ci: object
    w_cf: object
    w_co: object
    b_i: object
    b_f: object
    b_c: object
    b_o: object
    W_out: object
    b_out: object
    W_cls: object = None
    b_cls: object = None

    _vectors = ("w_ci", "w_cf", "w_co", "b_i", "b_f", "b_c", "b_o", "b_out", "b_cls")
    PEEPHOLES = ("w_ci", "w_cf", "w_co")

    @property
    def d_obs(self):
        return ad.value(self.W_xi).shape[1]

    @property
    def d_h(self):
        return ad.value(self.W_xi).shape[0]

    @staticmethod
    def _shapes(o, h):
        s = {n: (h, o) for n in ("W_xi", "W_xf", "W_xc", "W_xo")}
        s.update({n: (h, h) for n in ("W_hi", "W_hf", "W_hc", "W_ho")})
        s.update({n: (h,) for n in ("w_ci", "w_cf", "w_co", "b_i", "b_f", "b_c", "b_o")})
        s.update(W_out=(o, h), b_out=(o,))
        return s


def expand_batch(p, batch: int):
    """Tile every bias/peephole vector to ``[d x batch]`` (gradients flow back)."""
    ones = Tensor._wrap(np.ones((1, batch)))

    def tile(name, v):
        if name not in p._vectors:
            return v
        d = ad.value(v).shape[0]
        return ad.matmul(ad.reshape(v, (d, 1)), ones)

    return p.map(tile)


# ---------------------------------------------------------------------------
# helpers

def _affine(W, x, b):
    return ad.add(ad.matmul(W, x), b)


def _one_minus(z):
    return ad.sub(Tensor._wrap(np.ones(ad.value(z).shape)), z)


def _is_zero_const(v) -> bool:
    return not ad.is_var(v) and not ad.value(v).array.any()


def _peep(pre, w, c):
    # Zero, untrained peepholes are skipped: adding exact zeros changes nothing.
    if _is_zero_const(w):
        return pre
    return ad.add(pre, ad.mul(w, c))


# ---------------------------------------------------------------------------
# GRU

class GruGates(NamedTuple):
    r: object
    z: object
    h_tilde: object
    o: object


def gru_gates(x, h, p: GruParams) -> GruGates:
    r = ad.sigmoid(ad.add(ad.matmul(p.W_r, x), _affine(p.U_r, h, p.b_r)))
    z = ad.sigmoid(ad.add(ad.matmul(p.W_z, x), _affine(p.U_z, h, p.b_z)))
    h_tilde = ad.tanh(ad.add(ad.matmul(p.W_h, x), _affine(p.U_h, ad.mul(r, h), p.b_h)))
    o = ad.sigmoid(_affine(p.W_o, h, p.b_o))
    return GruGates(r, z, h_tilde, o)


def ode_gru_field(s: OdeState, t, p: GruParams, variant: str = "paper_literal") -> OdeState:
    """ODE-GRU derivative ``(dy/dt, dh/dt)``.

    ``paper_literal``: dh/dt = (1 - z) * h_tilde.
    ``contractive``:   dh/dt = (1 - z) * (h_tilde - h), which relaxes h
    toward the candidate instead of accumulating it.
    dy/dt = sigmoid(W_o h + b_o) in both variants.
    """
    if s.c is not None:
        raise UsageError("ODE-GRU state has no cell component")
    g = gru_gates(s.y, s.h, p)
    if variant == "paper_literal":
        target = g.h_tilde
    elif variant == "contractive":
        target = ad.sub(g.h_tilde, s.h)
    else:
        raise UsageError(f"unknown field variant {variant!r}")
    return OdeState(g.o, ad.mul(_one_minus(g.z), target))


def discrete_gru_step(x, h, p: GruParams):
    g = gru_gates(x, h, p)
    return ad.add(ad.mul(_one_minus(g.z), h), ad.mul(g.z, g.h_tilde))


# ---------------------------------------------------------------------------
# LSTM

class LstmGates(NamedTuple):
    i: object
    f: object
    g: object
    o: object
    h_out: object
    c_new: object


def lstm_gates(x, h, c, p: LstmParams) -> LstmGates:
    i = ad.sigmoid(_peep(ad.add(ad.matmul(p.W_xi, x), _affine(p.W_hi, h, p.b_i)), p.w_ci, c))
    f = ad.sigmoid(_peep(ad.add(ad.matmul(p.W_xf, x), _affine(p.W_hf, h, p.b_f)), p.w_cf, c))
    g = ad.tanh(ad.add(ad.matmul(p.W_xc, x), _affine(p.W_hc, h, p.b_c)))
    c_new = ad.add(ad.mul(f, c), ad.mul(i, g))
    o = ad.sigmoid(_peep(ad.add(ad.matmul(p.W_xo, x), _affine(p.W_ho, h, p.b_o)), p.w_co, c_new))
    h_out = ad.mul(o, ad.tanh(c_new))
    return LstmGates(i, f, g, o, h_out, c_new)


def ode_lstm_field(s: OdeState, t, p: LstmParams, variant: str = "paper_literal") -> OdeState:
    """ODE-LSTM derivative: the gate activations act as instantaneous rates.

    dc/dt = f * c + i * g,  dh/dt = o * dc/dt,
    dy/dt = W_out (o * tanh(c)) + b_out.
    ``variant`` is accepted for signature parity with the GRU field.
    """
    if s.c is None:
        raise UsageError("ODE-LSTM state needs a cell component")
    gs = lstm_gates(s.y, s.h, s.c, p)
    dc = gs.c_new
    dh = ad.mul(gs.o, dc)
    dy = _affine(p.W_out, ad.mul(gs.o, ad.tanh(s.c)), p.b_out)
    return OdeState(dy, dh, dc)


def discrete_lstm_step(x, h, c, p: LstmParams):
    gs = lstm_gates(x, h, c, p)
    return gs.h_out, gs.c_new


# ---------------------------------------------------------------------------
# read-outs used by the training layer

def readout(h, p):
    """Linear map from hidden state to the observable (discrete baselines)."""
    if isinstance(p, GruParams):
        return _affine(p.W_o, h, p.b_o)
    return _affine(p.W_out, h, p.b_out)


def class_logits(h, p):
    if p.W_cls is None:
        raise UsageError("parameters have no classification head")
    return _affine(p.W_cls, h, p.b_cls)


# ---------------------------------------------------------------------------
# initialization

def _glorot(rng, rows, cols):
    a = math.sqrt(6.0 / (rows + cols))
    return Tensor(rng.uniform(-a, a, size=(rows, cols)))


def init_params(kind: str, d_obs: int, d_h: int, seed: int, n_classes: int | None = None):
    """Glorot-uniform weights, zero biases, zero peepholes; deterministic in seed."""
    if d_obs < 1 or d_h < 1:
        raise UsageError("d_obs and d_h must be >= 1")
    if n_classes is not None and n_classes < 2:
        raise UsageError("n_classes must be >= 2")
    rng = np.random.default_rng(seed)
    cls = {"gru": GruParams, "lstm": LstmParams}.get(kind)
    if cls is None:
        raise UsageError(f"unknown cell kind {kind!r}")
    vals = {}
    for name, shape in cls._shapes(d_obs, d_h).items():
        if len(shape) == 2:
            vals[name] = _glorot(rng, *shape)
        else:
            vals[name] = Tensor(np.zeros(shape))
    if n_classes is not None:
        vals["W_cls"] = _glorot(rng, n_classes, d_h)
        vals["b_cls"] = Tensor(np.zeros(n_classes))
    return cls.from_dict(vals)
