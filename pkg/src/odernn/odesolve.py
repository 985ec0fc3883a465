"""Explicit ODE integrators reporting the state at given query times.

States are :class:`OdeState` tuples whose components are either vectors
``[d]`` (one series) or matrices ``[d x B]`` holding B series column-wise.
In the batched case each column has its own query times; every interval is
traversed in a shared number of substeps, each column scaled by its own gap,
so all columns still land exactly on their query times.

All arithmetic goes through :mod:`odernn.autodiff`, so integrating taped
inputs records every solver step and gradients flow back through them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Callable, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .errors import BudgetError, UsageError
from .tensor import Tensor

METHODS = ("euler", "rk4", "rk45")


@dataclass(frozen=True)
class OdeState:
    """Integrated state ``(y, h[, c])``: observable, hidden and optional cell."""

    y: object
    h: object
    c: Optional[object] = None

    def parts(self) -> tuple:
        return (self.y, self.h) if self.c is None else (self.y, self.h, self.c)

    @classmethod
    def from_parts(cls, parts) -> "OdeState":
        return cls(*parts)

    def values(self) -> "OdeState":
        """Same state with every component as a plain Tensor."""
        return OdeState.from_parts([ad.value(p) for p in self.parts()])


VectorField = Callable[[OdeState, object, object], OdeState]


@dataclass(frozen=True)
class SolverConfig:
    method: str = "rk4"
    # None selects (smallest query gap) / 4.
    fixed_step: Optional[float] = None
    rtol: float = 1e-3
    atol: float = 1e-4
    max_steps: int = 100_000

    def __post_init__(self):
        if self.method not in METHODS:
            raise UsageError(f"unknown solver method {self.method!r}; choose from {METHODS}")
        if self.fixed_step is not None and not self.fixed_step > 0:
            raise UsageError("fixed_step must be > 0")
        if not (self.rtol > 0 and self.atol > 0):
            raise UsageError("rtol and atol must be > 0")
        if self.max_steps < 1:
            raise UsageError("max_steps must be >= 1")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class Trajectory:
    """States at each query time plus the number of solver steps taken."""

    states: list
    steps: int = 0

    def __len__(self):
        return len(self.states)

    def __getitem__(self, i):
        return self.states[i]

    def __iter__(self):
        return iter(self.states)


# ---------------------------------------------------------------------------
# state arithmetic

def _scaled(k, dt):
    # dt * k, where dt is a python float or a per-column array of length B.
    if isinstance(dt, float):
        return ad.scale(k, dt)
    shape = ad.value(k).shape
    return ad.mul(k, Tensor._wrap(np.broadcast_to(dt, shape).copy(), "step size"))


def _axpy(s: OdeState, k: OdeState, dt) -> OdeState:
    return OdeState.from_parts(
        [ad.add(a, _scaled(b, dt)) for a, b in zip(s.parts(), k.parts())])


def _combine(s: OdeState, ks: Sequence[OdeState], coeffs: Sequence[float], dt) -> OdeState:
    # s + dt * sum_i coeffs[i] * ks[i], skipping zero coefficients.
    out = []
    for j, base in enumerate(s.parts()):
        acc = None
        for c, k in zip(coeffs, ks):
            if c == 0.0:
                continue
            term = k.parts()[j] if c == 1.0 else ad.scale(k.parts()[j], c)
            acc = term if acc is None else ad.add(acc, term)
        out.append(base if acc is None else ad.add(base, _scaled(acc, dt)))
    return OdeState.from_parts(out)


def _call(f, s, t, params) -> OdeState:
    d = f(s, t, params)
    if len(d.parts()) != len(s.parts()):
        raise UsageError("vector field changed the state structure")
    for a, b in zip(d.parts(), s.parts()):
        if ad.value(a).shape != ad.value(b).shape:
            raise UsageError(
                f"vector field output shape {ad.value(a).shape} != state shape {ad.value(b).shape}")
    return d


def _check_dt(dt):
    if isinstance(dt, float):
        if not dt > 0:
            raise UsageError("dt must be > 0")
    elif not (np.asarray(dt) > 0).all():
        raise UsageError("dt must be > 0")


def _as_dt(dt):
    return float(dt) if np.ndim(dt) == 0 else np.asarray(dt, dtype=np.float64)


# ---------------------------------------------------------------------------
# single steps

def euler_step(f: VectorField, s: OdeState, t, dt, params=None) -> OdeState:
    dt = _as_dt(dt)
    _check_dt(dt)
    return _axpy(s, _call(f, s, t, params), dt)


def rk4_step(f: VectorField, s: OdeState, t, dt, params=None) -> OdeState:
    dt = _as_dt(dt)
    _check_dt(dt)
    half = dt * 0.5
    k1 = _call(f, s, t, params)
    k2 = _call(f, _axpy(s, k1, half), t + half, params)
    k3 = _call(f, _axpy(s, k2, half), t + half, params)
    k4 = _call(f, _axpy(s, k3, dt), t + dt, params)
    parts = []
    for j, base in enumerate(s.parts()):
        acc = ad.add(k1.parts()[j], ad.scale(k2.parts()[j], 2.0))
        acc = ad.add(acc, ad.scale(k3.parts()[j], 2.0))
        acc = ad.add(acc, k4.parts()[j])
        parts.append(ad.add(base, _scaled(acc, dt / 6.0)))
    return OdeState.from_parts(parts)


# Dormand-Prince 5(4) tableau.
_DP_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0)
_DP_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
)
_DP_B = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84)
# fifth-order minus embedded fourth-order weights (7th stage is FSAL)
_DP_E = (71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40)


def rk45_step(f: VectorField, s: OdeState, t, dt, params=None):
    """One Dormand-Prince step; returns ``(new_state, error_estimate_arrays)``."""
    dt = _as_dt(dt)
    _check_dt(dt)
    ks = [_call(f, s, t, params)]
    for i in range(1, 6):
        si = _combine(s, ks, _DP_A[i], dt)
        ks.append(_call(f, si, t + _DP_C[i] * dt, params))
    new = _combine(s, ks, _DP_B, dt)
    ks.append(_call(f, new, t + dt, params))
    err = []
    for j in range(len(s.parts())):
        e = sum(c * ad.value(k.parts()[j]).array for c, k in zip(_DP_E, ks) if c != 0.0)
        err.append(e * (dt if isinstance(dt, float) else dt[None, :]))
    return new, err


def _error_norm(err, old: OdeState, new: OdeState, rtol, atol) -> float:
    num = 0.0
    count = 0
    for e, a, b in zip(err, old.parts(), new.parts()):
        ya = np.abs(ad.value(a).array)
        yb = np.abs(ad.value(b).array)
        w = atol + rtol * np.maximum(ya, yb)
        num += float(np.sum((e / w) ** 2))
        count += e.size
    return math.sqrt(num / count)


# ---------------------------------------------------------------------------
# integration over a query grid

def _query_grid(query_times):
    q = np.asarray(query_times, dtype=np.float64)
    if q.ndim not in (1, 2) or q.shape[0] < 1:
        raise UsageError("query_times must be a non-empty 1-D sequence or an [n x B] array")
    if not np.isfinite(q).all():
        raise UsageError("query_times must be finite")
    if q.shape[0] > 1 and not (np.diff(q, axis=0) > 0).all():
        raise UsageError("query_times must be strictly increasing")
    return q


def _check_state(s0: OdeState, q: np.ndarray):
    for p in s0.parts():
        shape = ad.value(p).shape
        if q.ndim == 1 and len(shape) != 1:
            raise UsageError("1-D query times need vector state components")
        if q.ndim == 2 and (len(shape) != 2 or shape[1] != q.shape[1]):
            raise UsageError(
                f"batched query times with {q.shape[1]} columns need [d x {q.shape[1]}] state")


def default_fixed_step(query_times) -> float:
    q = np.asarray(query_times, dtype=np.float64)
    if q.shape[0] < 2:
        return 1.0
    return float(np.diff(q, axis=0).min()) / 4.0


def substep_count(gap: float, step: float) -> int:
    """Number of equal substeps covering ``gap`` with pieces no longer than ``step``."""
    # The small slack stops 0.3/0.1 = 2.9999999999999996 style noise from adding a step.
    return max(1, math.ceil(gap / step - 1e-9))


def integrate(f: VectorField, s0: OdeState, query_times, cfg: SolverConfig | None = None,
              params=None) -> Trajectory:
    """Integrate ``f`` from ``s0`` at ``query_times[0]`` and report every query time."""
    cfg = cfg or SolverConfig()
    q = _query_grid(query_times)
    _check_state(s0, q)
    out = [s0]
    if q.shape[0] == 1:
        return Trajectory(out, 0)
    if cfg.method == "rk45":
        return _integrate_adaptive(f, s0, q, cfg, params)
    step_fn = euler_step if cfg.method == "euler" else rk4_step
    step = cfg.fixed_step if cfg.fixed_step is not None else default_fixed_step(q)
    steps = 0
    s = s0
    for k in range(q.shape[0] - 1):
        t0 = q[k] if q.ndim == 2 else float(q[k])
        gap = q[k + 1] - q[k]
        m = substep_count(float(np.max(gap)), step)
        if steps + m > cfg.max_steps:
            raise BudgetError(f"step budget {cfg.max_steps} exceeded at interval {k}")
        dt = gap / m if q.ndim == 2 else float(gap) / m
        for i in range(m):
            s = step_fn(f, s, t0 + i * dt, dt, params)
        steps += m
        out.append(s)
    return Trajectory(out, steps)


def _integrate_adaptive(f, s0, q, cfg, params) -> Trajectory:
    out = [s0]
    s = s0
    steps = 0
    h_abs = None
    for k in range(q.shape[0] - 1):
        t0 = q[k] if q.ndim == 2 else float(q[k])
        gap = q[k + 1] - q[k]
        gmax = float(np.max(gap))
        if h_abs is None:
            h_abs = gmax
        tau = 0.0
        while tau < 1.0:
            dtau = min(h_abs / gmax, 1.0 - tau)
            if tau + dtau >= 1.0 - 1e-12:
                dtau = 1.0 - tau
            if steps >= cfg.max_steps:
                raise BudgetError(f"step budget {cfg.max_steps} exceeded at interval {k}")
            steps += 1
            dt = gap * dtau if q.ndim == 2 else float(gap) * dtau
            new, err = rk45_step(f, s, t0 + tau * gap, dt, params)
            norm = _error_norm(err, s, new, cfg.rtol, cfg.atol)
            factor = 5.0 if norm == 0.0 else min(5.0, max(0.2, 0.9 * norm ** -0.2))
            if norm <= 1.0:
                s = new
                tau = 1.0 if dtau == 1.0 - tau else tau + dtau
            h_abs = dtau * gmax * factor
        out.append(s)
    return Trajectory(out, steps)
