"""Losses, optimizers, the training loop and a finite-difference gradient checker.

A training step integrates the model from each series' first observation,
compares the trajectory against the observations, backpropagates through
every solver step and applies one optimizer update. Series of equal length
are integrated together as columns of one batch.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, fields, replace
from functools import partial
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .cells import (FIELD_VARIANTS, GruParams, LstmParams, class_logits, discrete_gru_step,
                    discrete_lstm_step, expand_batch, init_params, ode_gru_field,
                    ode_lstm_field, readout)
from .data import Dataset, TimeSeries, as_dataset
from .errors import DimensionError, NumericError, UsageError
from .odesolve import OdeState, SolverConfig, integrate
from .tensor import Tensor

MODELS = ("ode_gru", "ode_lstm", "discrete_gru", "discrete_lstm")
OPTIMIZERS = ("sgd", "adam")
LOSSES = ("mse", "cross_entropy")
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def normalize_model_name(model: str) -> str:
    name = model.replace("-", "_").lower()
    if name not in MODELS:
        raise UsageError(f"unknown model {model!r}; choose from {', '.join(MODELS)}")
    return name


def cell_kind(model: str) -> str:
    return "gru" if normalize_model_name(model).endswith("gru") else "lstm"


def is_ode(model: str) -> bool:
    return normalize_model_name(model).startswith("ode")


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 100
    optimizer: str = "adam"
    learning_rate: float = 1e-2
    loss: str = "mse"
    seed: int = 0
    field_variant: str = "paper_literal"
    solver: SolverConfig = field(default_factory=SolverConfig)
    log_every: int = 1
    peepholes: bool = False
    # series per optimizer step; None uses every series each step
    batch_size: Optional[int] = None

    def __post_init__(self):
        if self.iterations < 0:
            raise UsageError("iterations must be >= 0")
        if self.optimizer not in OPTIMIZERS:
            raise UsageError(f"unknown optimizer {self.optimizer!r}")
        if not self.learning_rate > 0:
            raise UsageError("learning_rate must be > 0")
        if self.loss not in LOSSES:
            raise UsageError(f"unknown loss {self.loss!r}")
        if self.field_variant not in FIELD_VARIANTS:
            raise UsageError(f"unknown field variant {self.field_variant!r}")
        if self.log_every < 1:
            raise UsageError("log_every must be >= 1")
        if self.batch_size is not None and self.batch_size < 1:
            raise UsageError("batch_size must be >= 1")

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["solver"] = self.solver.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if isinstance(d.get("solver"), dict):
            d["solver"] = SolverConfig(**d["solver"])
        return cls(**d)


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    loss: float
    wall_ms: float
    solver_steps: int


@dataclass
class TrainReport:
    model: str
    records: list
    params: object
    final_loss: Optional[float] = None

    @property
    def losses(self) -> list[float]:
        return [r.loss for r in self.records]

    @property
    def mean_abs_delta_loss(self) -> Optional[float]:
        """Mean |loss[k+1] - loss[k]| over the logged iterations."""
        ls = self.losses
        if len(ls) < 2:
            return None
        return float(np.mean(np.abs(np.diff(ls))))


# ---------------------------------------------------------------------------
# losses

def mse_loss(pred: Sequence, target: Sequence):
    """Mean over all elements of the squared difference, over every time step."""
    if len(pred) != len(target) or not pred:
        raise DimensionError(f"{len(pred)} predictions for {len(target)} targets")
    total = None
    count = 0
    for p, t in zip(pred, target):
        if ad.value(p).shape != ad.value(t).shape:
            raise DimensionError(f"prediction {ad.value(p).shape} vs target {ad.value(t).shape}")
        d = ad.sub(p, t)
        sq = ad.sum_(ad.mul(d, d))
        total = sq if total is None else ad.add(total, sq)
        count += ad.value(p).size
    return ad.scale(total, 1.0 / count)


def cross_entropy_loss(logits, label):
    """``-log softmax(logits)[label]``; batched logits take a label per column."""
    return ad.cross_entropy(logits, label)


# ---------------------------------------------------------------------------
# optimizers

def init_opt_state(params: dict) -> dict:
    return {"t": 0,
            "m": {k: np.zeros(ad.value(v).shape) for k, v in params.items()},
            "v": {k: np.zeros(ad.value(v).shape) for k, v in params.items()}}


def optimizer_step(params: dict, grads: dict, opt_state: dict | None, cfg: TrainConfig):
    """One sgd or adam update. Returns ``(new_params, new_opt_state)``."""
    missing = [k for k in params if k not in grads]
    if missing:
        raise UsageError(f"no gradient for {', '.join(missing)}")
    if opt_state is None:
        opt_state = init_opt_state(params)
    lr = cfg.learning_rate
    new = {}
    if cfg.optimizer == "sgd":
        for k, p in params.items():
            new[k] = Tensor._wrap(ad.value(p).array - lr * ad.value(grads[k]).array, "sgd")
        return new, opt_state
    t = opt_state["t"] + 1
    m_all, v_all = {}, {}
    for k, p in params.items():
        g = ad.value(grads[k]).array
        m = ADAM_BETA1 * opt_state["m"][k] + (1 - ADAM_BETA1) * g
        v = ADAM_BETA2 * opt_state["v"][k] + (1 - ADAM_BETA2) * g * g
        m_hat = m / (1 - ADAM_BETA1 ** t)
        v_hat = v / (1 - ADAM_BETA2 ** t)
        new[k] = Tensor._wrap(ad.value(p).array - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS), "adam")
        m_all[k], v_all[k] = m, v
    return new, {"t": t, "m": m_all, "v": v_all}


# ---------------------------------------------------------------------------
# batching

@dataclass
class Group:
    """Equal-length series stacked column-wise."""

    index: list          # positions in the dataset
    times: np.ndarray    # [n x B]
    obs: list            # n Tensors of shape [d_obs x B]
    labels: Optional[tuple] = None

    @property
    def batch(self) -> int:
        return self.times.shape[1]

    @property
    def n(self) -> int:
        return self.times.shape[0]


def make_groups(ds: Dataset, indices: Sequence[int] | None = None) -> list[Group]:
    idx = list(range(len(ds))) if indices is None else list(indices)
    by_len: dict[int, list[int]] = {}
    for i in idx:
        by_len.setdefault(ds[i].n, []).append(i)
    groups = []
    for n, members in by_len.items():
        times = np.stack([np.asarray(ds[i].timestamps) for i in members], axis=1)
        vals = np.stack([ds[i].values.array for i in members], axis=2)   # [n x d x B]
        obs = [Tensor._wrap(vals[k].copy(), "batch") for k in range(n)]
        labels = None
        if all(ds[i].label is not None for i in members):
            labels = tuple(ds[i].label for i in members)
        groups.append(Group(members, times, obs, labels))
    return groups


def _zeros(d, b):
    return Tensor._wrap(np.zeros((d, b)), "zeros")


def _field(model: str, cfg: TrainConfig):
    if cell_kind(model) == "gru":
        return partial(ode_gru_field, variant=cfg.field_variant)
    return ode_lstm_field


def _initial_state(model, p, y0, batch, init_state: OdeState | None):
    if init_state is not None:
        parts = [ad.reshape(x, (ad.value(x).shape[0], 1)) if len(ad.value(x).shape) == 1 else x
                 for x in init_state.parts()]
        s0 = OdeState.from_parts(parts)
        want = 3 if cell_kind(model) == "lstm" else 2
        if len(parts) != want:
            raise UsageError(f"{model} needs a {want}-part initial state")
        if ad.value(s0.y).shape[0] != p.d_obs or ad.value(s0.h).shape[0] != p.d_h:
            raise DimensionError("initial state shapes do not match the parameters")
        return s0
    h0 = _zeros(p.d_h, batch)
    c0 = _zeros(p.d_h, batch) if cell_kind(model) == "lstm" else None
    return OdeState(y0, h0, c0)


def forward(model: str, p, group: Group, cfg: TrainConfig, grid: np.ndarray | None = None,
            init_state: OdeState | None = None):
    """Predictions for one group.

    Returns ``(outputs, steps)``: for regression a list of ``[d_obs x B]``
    observables at each grid time, for classification the ``[k x B]`` logits.
    ``grid`` overrides the query times (ODE regression only); its first row
    must equal the series' first timestamps.
    """
    model = normalize_model_name(model)
    pb = expand_batch(p, group.batch)
    classify = cfg.loss == "cross_entropy"
    s = _initial_state(model, p, group.obs[0], group.batch, init_state)
    if is_ode(model):
        f = _field(model, cfg)
        if not classify:
            q = group.times if grid is None else grid
            traj = integrate(f, s, q, cfg.solver, params=pb)
            return [st.y for st in traj], traj.steps
        # Classification: the observable is reset to each new observation
        # while hidden (and cell) state flows through the gaps.
        steps = 0
        for k in range(group.n - 1):
            s = OdeState(group.obs[k], s.h, s.c)
            traj = integrate(f, s, group.times[k:k + 2], cfg.solver, params=pb)
            s = traj[-1]
            steps += traj.steps
        return class_logits(s.h, pb), steps
    if grid is not None:
        raise UsageError("discrete baselines only predict at the observation times")
    h, c = s.h, s.c
    preds = [group.obs[0]]
    n_in = group.n if classify else group.n - 1
    for k in range(n_in):
        # one-step-ahead with the true observation as input
        if c is None:
            h = discrete_gru_step(group.obs[k], h, pb)
        else:
            h, c = discrete_lstm_step(group.obs[k], h, c, pb)
        if not classify:
            preds.append(readout(h, pb))
    if classify:
        return class_logits(h, pb), n_in
    return preds, n_in


def objective(model: str, p, groups: Sequence[Group], cfg: TrainConfig,
              init_state: OdeState | None = None):
    """Loss over all groups (element-weighted mse or series-weighted CE)."""
    total = None
    weight = 0
    steps = 0
    for g in groups:
        out, n_steps = forward(model, p, g, cfg, init_state=init_state)
        steps += n_steps
        if cfg.loss == "mse":
            part = mse_loss(out, g.obs)
            w = sum(o.size for o in g.obs)
        else:
            if g.labels is None:
                raise UsageError("cross_entropy needs labelled series")
            part = cross_entropy_loss(out, g.labels)
            w = g.batch
        term = ad.scale(part, float(w))
        total = term if total is None else ad.add(total, term)
        weight += w
    return ad.scale(total, 1.0 / weight), steps


# ---------------------------------------------------------------------------
# training

def trainable_names(p, cfg: TrainConfig) -> list[str]:
    names = list(p.as_dict())
    if isinstance(p, LstmParams) and not cfg.peepholes:
        names = [n for n in names if n not in LstmParams.PEEPHOLES]
    return names


def make_params(model: str, ds: Dataset, hidden: int, cfg: TrainConfig):
    n_classes = ds.n_classes if cfg.loss == "cross_entropy" else None
    if cfg.loss == "cross_entropy" and n_classes is None:
        raise UsageError("cross_entropy needs a labelled dataset")
    return init_params(cell_kind(model), ds.d_obs, hidden, cfg.seed, n_classes)


def _check_dims(p, ds: Dataset):
    if p.d_obs != ds.d_obs:
        raise DimensionError(f"parameters expect d_obs={p.d_obs}, data has {ds.d_obs}")


def train(model: str, series, cfg: TrainConfig, *, hidden: int = 8, params=None,
          init_state: OdeState | None = None, progress=None) -> TrainReport:
    """Run ``cfg.iterations`` of integrate -> loss -> backward -> optimizer step.

    ``series`` is a TimeSeries, a Dataset or a list of series. ``init_state``
    (single series only) replaces the default ``(y_0, 0[, 0])``. ``progress``
    is called with each logged :class:`IterationRecord`.
    """
    model = normalize_model_name(model)
    ds = as_dataset(series)
    if init_state is not None and len(ds) != 1:
        raise UsageError("init_state applies to a single series")
    p = params if params is not None else make_params(model, ds, hidden, cfg)
    _check_dims(p, ds)
    names = trainable_names(p, cfg)
    rng = np.random.default_rng(cfg.seed)
    all_groups = make_groups(ds) if cfg.batch_size is None else None
    values = {k: v for k, v in p.as_dict().items()}
    opt_state = init_opt_state({k: values[k] for k in names})
    records = []
    tape = ad.Tape()
    for it in range(1, cfg.iterations + 1):
        start = time.perf_counter()
        if all_groups is None:
            pick = np.sort(rng.choice(len(ds), size=min(cfg.batch_size, len(ds)), replace=False))
            groups = make_groups(ds, pick.tolist())
        else:
            groups = all_groups
        leaves = {k: tape.var(values[k]) for k in names}
        pv = type(p).from_dict({k: leaves.get(k, v) for k, v in values.items()})
        try:
            loss, steps = objective(model, pv, groups, cfg, init_state)
            grads = tape.backward(loss, retain_intermediate=False)
        except NumericError as e:
            raise NumericError(f"iteration {it}: {e}") from e
        loss_value = loss.value.item()
        if not math.isfinite(loss_value):
            raise NumericError(f"iteration {it}: non-finite loss")
        g = {k: grads.get(leaves[k].id, Tensor._wrap(np.zeros(values[k].shape))) for k in names}
        try:
            updated, opt_state = optimizer_step({k: values[k] for k in names}, g, opt_state, cfg)
        except NumericError as e:
            raise NumericError(f"iteration {it}: {e}") from e
        values.update(updated)
        tape.clear()
        if it % cfg.log_every == 0:
            rec = IterationRecord(it, loss_value, (time.perf_counter() - start) * 1e3, steps)
            records.append(rec)
            if progress is not None:
                progress(rec)
    final = type(p).from_dict(values)
    final_loss = None
    if cfg.iterations > 0:
        pool = all_groups if all_groups is not None else make_groups(ds)
        final_loss = objective(model, final, pool, cfg, init_state)[0].item()
    return TrainReport(model, records, final, final_loss)


def evaluate(model: str, p, series, cfg: TrainConfig, init_state: OdeState | None = None) -> float:
    """Objective value of ``p`` on the data, with no tape."""
    ds = as_dataset(series)
    _check_dims(p, ds)
    return objective(normalize_model_name(model), p, make_groups(ds), cfg, init_state)[0].item()


def compare(models: Sequence[str], series, cfg: TrainConfig, *, hidden: int = 8,
            progress=None) -> dict[str, TrainReport]:
    """Train several models on the same data with the same seed."""
    out = {}
    for m in models:
        cb = None if progress is None else partial(progress, normalize_model_name(m))
        out[normalize_model_name(m)] = train(m, series, cfg, hidden=hidden, progress=cb)
    return out


# ---------------------------------------------------------------------------
# gradient check

@dataclass
class GradCheckResult:
    worst: float
    per_tensor: dict


def fd_check(loss_fn, values: dict, epsilon: float = 1e-6) -> GradCheckResult:
    """Check reverse-mode gradients of ``loss_fn`` against central differences.

    ``loss_fn`` maps ``{name: Var or Tensor}`` to a shape-(1,) loss. It is run
    once on a tape for the analytic gradient, then untaped twice per element.
    The per-element error is |analytic - numeric| / max(1, |analytic|).
    """
    if not epsilon > 0:
        raise UsageError("epsilon must be > 0")
    tape = ad.Tape()
    leaves = {k: tape.var(v) for k, v in values.items()}
    grads = tape.backward(loss_fn(leaves), retain_intermediate=False)

    def at(name, j, delta):
        pert = values[name].array.copy()
        pert.reshape(-1)[j] += delta
        return ad.value(loss_fn({**values, name: Tensor(pert)})).item()

    per = {}
    for name, v in values.items():
        g = grads.get(leaves[name].id)
        analytic = np.zeros(v.size) if g is None else g.array.reshape(-1)
        worst = 0.0
        for j in range(v.size):
            numeric = (at(name, j, epsilon) - at(name, j, -epsilon)) / (2 * epsilon)
            worst = max(worst, abs(analytic[j] - numeric) / max(1.0, abs(analytic[j])))
        per[name] = worst
    return GradCheckResult(max(per.values()) if per else 0.0, per)


def grad_check(model: str, series, cfg: TrainConfig, epsilon: float = 1e-6, *,
               hidden: int = 4, params=None, init_state: OdeState | None = None) -> GradCheckResult:
    """:func:`fd_check` of the full training objective w.r.t. every trainable parameter."""
    model = normalize_model_name(model)
    ds = as_dataset(series)
    p = params if params is not None else make_params(model, ds, hidden, cfg)
    _check_dims(p, ds)
    groups = make_groups(ds)
    fixed = p.as_dict()
    names = trainable_names(p, cfg)

    def loss_fn(vals):
        q = type(p).from_dict({**fixed, **vals})
        return objective(model, q, groups, cfg, init_state)[0]

    return fd_check(loss_fn, {k: fixed[k] for k in names}, epsilon)


# ---------------------------------------------------------------------------
# prediction at arbitrary times

@dataclass
class SeriesPrediction:
    series: TimeSeries
    times: list
    values: np.ndarray        # [len(times) x d_obs], or logits [k] for classification
    truth: list               # row of true values per time, or None where unobserved


def refine_grid(timestamps, factor: int) -> np.ndarray:
    """Insert ``factor - 1`` evenly spaced points in every gap."""
    t = np.asarray(timestamps, dtype=np.float64)
    if factor < 1:
        raise UsageError("refine factor must be >= 1")
    if factor == 1 or t.size == 1:
        return t
    pieces = [t[:1]]
    for a, b in zip(t[:-1], t[1:]):
        frac = np.arange(1, factor + 1) / factor
        seg = a + (b - a) * frac
        seg[-1] = b
        pieces.append(seg)
    return np.concatenate(pieces)


def predict(model: str, p, series, cfg: TrainConfig, *, query_times: Sequence[float] | None = None,
            refine: int = 1) -> list[SeriesPrediction]:
    """Trajectories from each series' first observation at requested times.

    With neither ``query_times`` nor ``refine`` the observation times are used
    and series are batched exactly as in training.
    """
    model = normalize_model_name(model)
    ds = as_dataset(series)
    _check_dims(p, ds)
    classify = cfg.loss == "cross_entropy"
    if (query_times is not None or refine != 1) and (classify or not is_ode(model)):
        raise UsageError("custom query grids need an ODE model in regression mode")
    out: list[Optional[SeriesPrediction]] = [None] * len(ds)
    if query_times is None:
        for g in make_groups(ds):
            grid = None
            if refine != 1:
                grid = np.stack([refine_grid(g.times[:, j], refine) for j in range(g.batch)], axis=1)
            res, _ = forward(model, p, g, cfg, grid=grid)
            for j, i in enumerate(g.index):
                s = ds[i]
                if classify:
                    out[i] = SeriesPrediction(s, [], ad.value(res).array[:, j].copy(), [])
                    continue
                times = (g.times[:, j] if grid is None else grid[:, j]).tolist()
                vals = np.stack([ad.value(r).array[:, j] for r in res])
                out[i] = SeriesPrediction(s, times, vals, _truth(s, times))
        return out
    req = sorted(float(t) for t in query_times)
    if any(b <= a for a, b in zip(req, req[1:])):
        raise UsageError("query times must be distinct")
    for i, s in enumerate(ds):
        t0 = s.timestamps[0]
        later = [t for t in req if t > t0]
        include_t0 = bool(req) and req[0] <= t0 and t0 in req
        grid = np.array([t0] + later)[:, None]
        g = make_groups(Dataset([s], d_obs=ds.d_obs, n_classes=ds.n_classes))[0]
        res, _ = forward(model, p, g, cfg, grid=grid)
        rows = [ad.value(r).array[:, 0] for r in res]
        times = [t0] + later
        if not include_t0:
            rows, times = rows[1:], times[1:]
        vals = np.stack(rows) if rows else np.zeros((0, ds.d_obs))
        out[i] = SeriesPrediction(s, times, vals, _truth(s, times))
    return out


def _truth(s: TimeSeries, times):
    lookup = {t: k for k, t in enumerate(s.timestamps)}
    arr = s.values.array
    return [arr[lookup[t]].tolist() if t in lookup else None for t in times]


def prediction_summary(preds: Sequence[SeriesPrediction], classify: bool) -> dict:
    if classify:
        hits = sum(int(np.argmax(pr.values)) == pr.series.label for pr in preds)
        return {"accuracy": hits / len(preds), "n_series": len(preds)}
    sse = 0.0
    count = 0
    for pr in preds:
        for row, truth in zip(pr.values, pr.truth):
            if truth is None:
                continue
            d = row - np.asarray(truth)
            sse += float(np.sum(d * d))
            count += d.size
    return {"mse": sse / count if count else None, "n_series": len(preds),
            "n_compared": count}
