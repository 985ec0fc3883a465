"""Irregularly sampled time series: synthetic generators, CSV I/O, normalization."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import DataError, FormatError, UsageError
from .tensor import Tensor

SPIRAL_SPAN = 6 * math.pi
CURVE_SPAN = 2 * math.pi


@dataclass(frozen=True)
class TimeSeries:
    timestamps: tuple
    values: Tensor
    label: Optional[int] = None
    name: str = ""

    def __post_init__(self):
        ts = tuple(float(t) for t in self.timestamps)
        object.__setattr__(self, "timestamps", ts)
        if not isinstance(self.values, Tensor):
            object.__setattr__(self, "values", Tensor(self.values))
        if self.values.rank != 2:
            raise DataError(f"series {self.name!r}: values must be [n x d_obs]")
        if len(ts) < 1 or len(ts) != self.values.shape[0]:
            raise DataError(
                f"series {self.name!r}: {len(ts)} timestamps for {self.values.shape[0]} rows")
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise DataError(f"series {self.name!r}: timestamps not strictly increasing")

    @property
    def n(self) -> int:
        return len(self.timestamps)

    @property
    def d_obs(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class Dataset:
    series: list = field(default_factory=list)
    d_obs: int = 1
    n_classes: Optional[int] = None

    def __post_init__(self):
        for s in self.series:
            if s.d_obs != self.d_obs:
                raise DataError(f"series {s.name!r} has d_obs {s.d_obs}, dataset {self.d_obs}")
            if s.label is not None:
                if self.n_classes is None or not 0 <= s.label < self.n_classes:
                    raise DataError(f"series {s.name!r}: label {s.label} outside n_classes")

    def __len__(self):
        return len(self.series)

    def __iter__(self):
        return iter(self.series)

    def __getitem__(self, i):
        return self.series[i]


# ---------------------------------------------------------------------------
# curves

def spiral_point(theta, clockwise: bool = False):
    """Archimedean spiral r = 0.2 + 0.1 theta."""
    theta = np.asarray(theta, dtype=np.float64)
    r = 0.2 + 0.1 * theta
    sign = -1.0 if clockwise else 1.0
    return np.stack([r * np.cos(theta), sign * r * np.sin(theta)], axis=-1)


def eight_curve(t):
    """Gerono lemniscate (sin t, sin t cos t)."""
    t = np.asarray(t, dtype=np.float64)
    return np.stack([np.sin(t), np.sin(t) * np.cos(t)], axis=-1)


def triknot(t):
    """Planar trefoil projection."""
    t = np.asarray(t, dtype=np.float64)
    return np.stack([np.sin(t) + 2 * np.sin(2 * t), np.cos(t) - 2 * np.cos(2 * t)], axis=-1)


def irregular_times(rng: np.random.Generator, n_points: int, span: float) -> np.ndarray:
    """Sorted uniform draws on [0, span], forced strictly increasing.

    Ties are broken by adding 1e-9 * index, which cannot reorder draws.
    """
    t = np.sort(rng.uniform(0.0, span, size=n_points))
    if n_points > 1 and not (np.diff(t) > 0).all():
        t = t + 1e-9 * np.arange(n_points)
    return t


def gen_spiral(n_series: int, n_points: int, seed: int, noise_sd: float = 0.0) -> Dataset:
    if n_series < 1 or n_points < 1:
        raise UsageError("n_series and n_points must be >= 1")
    if noise_sd < 0:
        raise UsageError("noise_sd must be >= 0")
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n_series):
        clockwise = bool(rng.integers(0, 2))
        t = irregular_times(rng, n_points, SPIRAL_SPAN)
        v = spiral_point(t, clockwise)
        if noise_sd > 0:
            v = v + rng.normal(0.0, noise_sd, size=v.shape)
        out.append(TimeSeries(tuple(t), Tensor(v), name=f"spiral{i}"))
    return Dataset(out, d_obs=2)


def _curve_series(fn, name, n_points, seed):
    if n_points < 2:
        raise UsageError("n_points must be >= 2")
    rng = np.random.default_rng(seed)
    t = irregular_times(rng, n_points, CURVE_SPAN)
    return TimeSeries(tuple(t), Tensor(fn(t)), name=name)


def gen_eight_curve(n_points: int, seed: int) -> TimeSeries:
    return _curve_series(eight_curve, "eight", n_points, seed)


def gen_triknot(n_points: int, seed: int) -> TimeSeries:
    return _curve_series(triknot, "triknot", n_points, seed)


def gen_sines(n_series: int, n_points: int, n_classes: int, seed: int,
              noise_sd: float = 0.05) -> Dataset:
    """Labelled toy classification set: class k is a sinusoid of frequency k + 1.

    Each series gets a random phase and irregular times on [0, 2 pi]; the two
    observed channels are (sin, cos) of the phase-shifted argument.
    """
    if n_series < 1 or n_points < 1 or n_classes < 2:
        raise UsageError("need n_series >= 1, n_points >= 1, n_classes >= 2")
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n_series):
        label = int(rng.integers(0, n_classes))
        phase = rng.uniform(0.0, 2 * math.pi)
        t = irregular_times(rng, n_points, CURVE_SPAN)
        arg = (label + 1) * t + phase
        v = np.stack([np.sin(arg), np.cos(arg)], axis=-1)
        v = v + rng.normal(0.0, noise_sd, size=v.shape)
        out.append(TimeSeries(tuple(t), Tensor(v), label=label, name=f"sine{i}"))
    return Dataset(out, d_obs=2, n_classes=n_classes)


def as_dataset(x) -> Dataset:
    if isinstance(x, Dataset):
        return x
    if isinstance(x, TimeSeries):
        return Dataset([x], d_obs=x.d_obs)
    series = list(x)
    if not series:
        raise UsageError("empty series list")
    labels = [s.label for s in series if s.label is not None]
    return Dataset(series, d_obs=series[0].d_obs,
                   n_classes=max(labels) + 1 if labels else None)


# ---------------------------------------------------------------------------
# subsampling

def subsample_irregular(ts: TimeSeries, keep_fraction: float, seed: int) -> TimeSeries:
    """Keep ceil(keep_fraction * n) points, always including the first."""
    if not 0 < keep_fraction <= 1:
        raise UsageError("keep_fraction must be in (0, 1]")
    n = ts.n
    k = max(1, math.ceil(keep_fraction * n - 1e-9))
    if k >= n:
        return ts
    rng = np.random.default_rng(seed)
    rest = rng.choice(np.arange(1, n), size=k - 1, replace=False)
    idx = np.sort(np.concatenate([[0], rest])).astype(int)
    t = np.asarray(ts.timestamps)[idx]
    return replace(ts, timestamps=tuple(t), values=Tensor(ts.values.array[idx]))


# ---------------------------------------------------------------------------
# CSV

def _fmt(x: float) -> str:
    return repr(float(x))


def write_csv(ds, path) -> None:
    """One row per observation: series_id, time, v1..vd[, label]."""
    ds = as_dataset(ds)
    labelled = any(s.label is not None for s in ds)
    header = ["series_id", "time"] + [f"v{j + 1}" for j in range(ds.d_obs)]
    if labelled:
        header.append("label")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for s in ds:
            vals = s.values.array
            for t, row in zip(s.timestamps, vals):
                rec = [s.name, _fmt(t)] + [_fmt(v) for v in row]
                if labelled:
                    rec.append("" if s.label is None else str(s.label))
                w.writerow(rec)


def load_csv(path, time_column: str = "time", value_columns: Sequence[str] | None = None,
             label_column: str | None = None, series_column: str = "series_id") -> Dataset:
    """Read a long-format CSV into one TimeSeries per distinct series id.

    ``value_columns`` defaults to every column other than the id, time and
    label columns, in file order. A column literally named ``label`` is used as
    the label column when ``label_column`` is not given.
    """
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty file, header row required") from None
        header = [h.strip() for h in header]
        if label_column is None and "label" in header:
            label_column = "label"
        for col in [series_column, time_column] + ([label_column] if label_column else []):
            if col not in header:
                raise FormatError(f"{path}: missing column {col!r}")
        skip = {series_column, time_column, label_column}
        if value_columns is None:
            value_columns = [h for h in header if h not in skip]
        for col in value_columns:
            if col not in header:
                raise FormatError(f"{path}: missing column {col!r}")
        if not value_columns:
            raise FormatError(f"{path}: no value columns")
        i_sid = header.index(series_column)
        i_t = header.index(time_column)
        i_v = [header.index(c) for c in value_columns]
        i_lab = header.index(label_column) if label_column else None

        order: list[str] = []
        times: dict[str, list] = {}
        rows: dict[str, list] = {}
        labels: dict[str, int] = {}
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(header):
                raise FormatError(f"{path}: row {lineno} has {len(rec)} cells, expected {len(header)}")
            sid = rec[i_sid]
            try:
                t = float(rec[i_t])
                v = [float(rec[j]) for j in i_v]
            except ValueError:
                raise FormatError(f"{path}: non-numeric cell in row {lineno}") from None
            if not all(math.isfinite(x) for x in [t, *v]):
                raise FormatError(f"{path}: non-finite cell in row {lineno}")
            if sid not in times:
                order.append(sid)
                times[sid], rows[sid] = [], []
            times[sid].append(t)
            rows[sid].append(v)
            if i_lab is not None:
                try:
                    lab = int(rec[i_lab])
                except ValueError:
                    raise FormatError(f"{path}: non-integer label in row {lineno}") from None
                if lab < 0:
                    raise FormatError(f"{path}: negative label in row {lineno}")
                if labels.setdefault(sid, lab) != lab:
                    raise DataError(f"{path}: series {sid!r} carries more than one label")
    if not order:
        raise FormatError(f"{path}: no data rows")
    series = []
    for sid in order:
        ts = times[sid]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise DataError(f"{path}: timestamps of series {sid!r} are not strictly increasing")
        series.append(TimeSeries(tuple(ts), Tensor(rows[sid]), label=labels.get(sid), name=sid))
    n_classes = max(labels.values()) + 1 if labels else None
    return Dataset(series, d_obs=len(value_columns), n_classes=n_classes)


# ---------------------------------------------------------------------------
# normalization

@dataclass(frozen=True)
class NormStats:
    mean: tuple
    sd: tuple


def normalize(ds) -> tuple[Dataset, NormStats]:
    """Per-dimension z-score over every observation of every series (population sd)."""
    ds = as_dataset(ds)
    allv = np.concatenate([s.values.array for s in ds], axis=0)
    mu = allv.mean(axis=0)
    sd = allv.std(axis=0)
    for j in range(ds.d_obs):
        if np.unique(allv[:, j]).size < 2 or sd[j] == 0:
            raise DataError(f"dimension {j} has zero variance")
    stats = NormStats(tuple(mu.tolist()), tuple(sd.tolist()))
    return apply_stats(ds, stats), stats


def apply_stats(ds, stats: NormStats) -> Dataset:
    """z-score with previously computed statistics."""
    ds = as_dataset(ds)
    if len(stats.mean) != ds.d_obs:
        raise DataError(f"statistics cover {len(stats.mean)} dimensions, data has {ds.d_obs}")
    mu = np.asarray(stats.mean)
    sd = np.asarray(stats.sd)
    return _affine_map(ds, lambda v: (v - mu) / sd)


def denormalize(ds, stats: NormStats) -> Dataset:
    mu = np.asarray(stats.mean)
    sd = np.asarray(stats.sd)
    return _affine_map(as_dataset(ds), lambda v: v * sd + mu)


def _affine_map(ds: Dataset, fn) -> Dataset:
    out = [replace(s, values=Tensor(fn(s.values.array))) for s in ds]
    return Dataset(out, d_obs=ds.d_obs, n_classes=ds.n_classes)
