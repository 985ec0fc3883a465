"""Command-line entry point: ``odernn generate|train|eval|gradcheck``.

Settings resolve in order: built-in defaults, ``ODERNN_SEED`` for the seed,
a JSON ``--config`` file whose keys mirror the long flag names, then flags
given on the command line.

Exit codes: 0 success, 1 gradient check above threshold, 2 usage/config or
data error, 3 numeric failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import data as D
from . import training as tr
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .errors import (BudgetError, DataError, DimensionError, FormatError, NumericError,
                     UsageError)
from .odesolve import SolverConfig
from .tensor import Tensor

EXIT_OK, EXIT_CHECK_FAILED, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3, 4
GENERATORS = ("spiral", "eight", "triknot", "sines")
GRADCHECK_MAX_HIDDEN = 8
GRADCHECK_MAX_POINTS = 10


def _default_seed() -> int:
    raw = os.environ.get("ODERNN_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"ODERNN_SEED must be an integer, got {raw!r}") from None


def _solver_defaults():
    return {"method": "rk4", "step": None, "rtol": 1e-3, "atol": 1e-4, "max_steps": 100_000}


DEFAULTS = {
    "generate": {"series": 100, "points": 100, "noise": 0.0, "classes": 6, "out": None},
    "train": {"model": "ode-gru", "data": None, "generator": None, "series": 100,
              "points": 100, "noise": 0.0, "classes": 6, "data_seed": None, "hidden": 8,
              "iters": 100, "optimizer": "adam", "lr": 1e-2, "loss": None,
              "variant": "paper_literal", "peepholes": False, "log_every": 1,
              "batch_size": None, "normalize": False, "compare": False, "out": "run",
              **_solver_defaults()},
    "eval": {"checkpoint": None, "data": None, "query_times": None, "refine": 1,
             "out": None},
    "gradcheck": {"model": "ode-gru", "hidden": 4, "points": 8, "epsilon": 1e-6,
                  "threshold": 1e-4, "variant": "paper_literal", "peepholes": False,
                  **_solver_defaults(), "step": 0.1},
}


# ---------------------------------------------------------------------------
# argument parsing

def _add_solver_flags(p):
    g = p.add_argument_group("solver")
    g.add_argument("--method", choices=["euler", "rk4", "rk45"])
    g.add_argument("--step", type=float, help="fixed step (euler/rk4); default min gap / 4")
    g.add_argument("--rtol", type=float)
    g.add_argument("--atol", type=float)
    g.add_argument("--max-steps", type=int, dest="max_steps")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="odernn", description="ODE-GRU / ODE-LSTM experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic dataset as CSV")
    g.add_argument("kind", choices=GENERATORS)
    g.add_argument("--series", type=int, help="number of series (spiral, sines)")
    g.add_argument("--points", type=int, help="points per series")
    g.add_argument("--seed", type=int)
    g.add_argument("--noise", type=float, help="Gaussian noise sd (spiral, sines)")
    g.add_argument("--classes", type=int, help="number of classes (sines)")
    g.add_argument("--out", help="output CSV path (default <kind>.csv)")
    g.add_argument("--config", help="JSON file with flag values")

    t = sub.add_parser("train", help="train a model and write checkpoint + metrics")
    t.add_argument("--config", help="JSON file with flag values")
    t.add_argument("--model", choices=["ode-gru", "ode-lstm", "discrete-gru", "discrete-lstm"])
    src = t.add_mutually_exclusive_group()
    src.add_argument("--data", help="CSV dataset (series_id, time, v1..vd[, label])")
    src.add_argument("--generator", choices=GENERATORS, help="generate the dataset in memory")
    t.add_argument("--series", type=int)
    t.add_argument("--points", type=int)
    t.add_argument("--noise", type=float)
    t.add_argument("--classes", type=int)
    t.add_argument("--data-seed", type=int, dest="data_seed",
                   help="generator seed (defaults to --seed)")
    t.add_argument("--hidden", type=int)
    t.add_argument("--iters", type=int)
    t.add_argument("--optimizer", choices=list(tr.OPTIMIZERS))
    t.add_argument("--lr", type=float)
    t.add_argument("--loss", choices=list(tr.LOSSES),
                   help="default: cross_entropy for labelled data, else mse")
    t.add_argument("--variant", choices=["paper_literal", "contractive"])
    t.add_argument("--peepholes", action="store_true", default=None)
    t.add_argument("--seed", type=int)
    t.add_argument("--log-every", type=int, dest="log_every")
    t.add_argument("--batch-size", type=int, dest="batch_size")
    t.add_argument("--normalize", action="store_true", default=None,
                   help="z-score the data; statistics are stored in the checkpoint")
    t.add_argument("--compare", action="store_true", default=None,
                   help="also train the discrete (or ODE) counterpart on the same data")
    t.add_argument("--out", help="output directory")
    _add_solver_flags(t)

    e = sub.add_parser("eval", help="predict from a checkpoint at arbitrary times")
    e.add_argument("--config", help="JSON file with flag values")
    e.add_argument("--checkpoint")
    e.add_argument("--data", help="CSV dataset; defaults to the training data")
    e.add_argument("--query-times", dest="query_times",
                   help="comma-separated times shared by every series")
    e.add_argument("--refine", type=int, help="insert refine-1 points into each gap")
    e.add_argument("--out", help="output directory; defaults to the checkpoint's")

    c = sub.add_parser("gradcheck", help="compare backward() with finite differences")
    c.add_argument("--config", help="JSON file with flag values")
    c.add_argument("--model", choices=["ode-gru", "ode-lstm", "discrete-gru", "discrete-lstm"])
    c.add_argument("--hidden", type=int)
    c.add_argument("--points", type=int)
    c.add_argument("--seed", type=int)
    c.add_argument("--epsilon", type=float)
    c.add_argument("--threshold", type=float)
    c.add_argument("--variant", choices=["paper_literal", "contractive"])
    c.add_argument("--peepholes", action="store_true", default=None)
    _add_solver_flags(c)
    return parser


def resolve(command: str, ns: argparse.Namespace) -> dict:
    """defaults < ODERNN_SEED < --config file < explicit flags."""
    opts = dict(DEFAULTS[command])
    opts["seed"] = _default_seed()
    cfg_path = getattr(ns, "config", None)
    if cfg_path:
        try:
            doc = json.loads(Path(cfg_path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise UsageError(f"config {cfg_path}: {e}") from None
        if not isinstance(doc, dict):
            raise UsageError(f"config {cfg_path}: top level must be an object")
        for k, v in doc.items():
            key = k.replace("-", "_")
            if key not in opts and key not in ("kind",):
                raise UsageError(f"config {cfg_path}: unknown key {k!r}")
            opts[key] = v
    for k, v in vars(ns).items():
        if k in ("command", "config") or v is None:
            continue
        opts[k] = v
    return opts


def _solver(opts) -> SolverConfig:
    return SolverConfig(method=opts["method"], fixed_step=opts["step"], rtol=opts["rtol"],
                        atol=opts["atol"], max_steps=opts["max_steps"])


# ---------------------------------------------------------------------------
# generate

def _generate(kind, points, seed, series=1, noise=0.0, classes=6):
    if points is None or points < 1 or (kind in ("eight", "triknot") and points < 2):
        raise UsageError(f"--points must be >= {2 if kind in ('eight', 'triknot') else 1}")
    if series is None or series < 1:
        raise UsageError("--series must be >= 1")
    if kind == "spiral":
        return D.gen_spiral(series, points, seed, noise)
    if kind == "eight":
        return D.as_dataset(D.gen_eight_curve(points, seed))
    if kind == "triknot":
        return D.as_dataset(D.gen_triknot(points, seed))
    if kind == "sines":
        return D.gen_sines(series, points, classes, seed, noise)
    raise UsageError(f"unknown generator {kind!r}")


def cmd_generate(opts) -> int:
    ds = _generate(opts["kind"], opts["points"], opts["seed"], opts["series"], opts["noise"],
                   opts["classes"])
    out = opts["out"] or f"{opts['kind']}.csv"
    D.write_csv(ds, out)
    rows = sum(s.n for s in ds)
    print(f"wrote {len(ds)} series, {rows} rows to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train

@dataclass
class RunConfig:
    model: str
    hidden: int
    train: tr.TrainConfig
    data: Optional[str] = None
    generator: Optional[dict] = None
    normalize: bool = False
    out_dir: str = "run"

    def to_dict(self) -> dict:
        # out_dir is left out so reruns into other directories stay byte-identical
        return {"model": self.model, "hidden": self.hidden, "data": self.data,
                "generator": self.generator, "normalize": self.normalize,
                "train": self.train.to_dict()}


def _run_config(opts) -> RunConfig:
    model = tr.normalize_model_name(opts["model"])
    if opts["hidden"] is None or opts["hidden"] < 1:
        raise UsageError("--hidden must be >= 1")
    gen = None
    if opts["data"] is None:
        if opts["generator"] is None:
            raise UsageError("train needs --data or --generator")
        gen = {"kind": opts["generator"], "series": opts["series"], "points": opts["points"],
               "noise": opts["noise"], "classes": opts["classes"],
               "seed": opts["data_seed"] if opts["data_seed"] is not None else opts["seed"]}
    elif not Path(opts["data"]).is_file():
        raise FileNotFoundError(f"data file {opts['data']} does not exist")
    loss = opts["loss"]
    if loss is None:
        labelled = (gen is not None and gen["kind"] == "sines")
        if opts["data"] is not None:
            with open(opts["data"], encoding="utf-8") as fh:
                labelled = "label" in [h.strip() for h in fh.readline().split(",")]
        loss = "cross_entropy" if labelled else "mse"
    cfg = tr.TrainConfig(iterations=opts["iters"], optimizer=opts["optimizer"],
                         learning_rate=opts["lr"], loss=loss, seed=opts["seed"],
                         field_variant=opts["variant"], solver=_solver(opts),
                         log_every=opts["log_every"], peepholes=bool(opts["peepholes"]),
                         batch_size=opts["batch_size"])
    return RunConfig(model, opts["hidden"], cfg, opts["data"], gen, bool(opts["normalize"]),
                     opts["out"])


def _load_data(rc: RunConfig):
    if rc.data is not None:
        ds = D.load_csv(rc.data)
    else:
        g = rc.generator
        ds = _generate(g["kind"], g["points"], g["seed"], g["series"], g["noise"], g["classes"])
    stats = None
    if rc.normalize:
        ds, st = D.normalize(ds)
        stats = {"mean": list(st.mean), "sd": list(st.sd)}
    return ds, stats


def _ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    if not os.access(p, os.W_OK):
        raise PermissionError(f"output directory {p} is not writable")
    return p


def write_metrics(report: tr.TrainReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "loss", "solver_steps"])
        for r in report.records:
            w.writerow([r.iteration, repr(r.loss), r.solver_steps])


def write_timing(report: tr.TrainReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "wall_ms"])
        for r in report.records:
            w.writerow([r.iteration, f"{r.wall_ms:.3f}"])


def write_predictions(preds, path, classify: bool, d_obs: int) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if classify:
            w.writerow(["series_id", "label", "predicted"])
            for pr in preds:
                w.writerow([pr.series.name, pr.series.label, int(np.argmax(pr.values))])
            return
        w.writerow(["series_id", "t"] + [f"true_v{j + 1}" for j in range(d_obs)]
                   + [f"pred_v{j + 1}" for j in range(d_obs)])
        for pr in preds:
            for t, row, truth in zip(pr.times, pr.values, pr.truth):
                true_cells = [""] * d_obs if truth is None else [repr(float(v)) for v in truth]
                w.writerow([pr.series.name, repr(float(t))] + true_cells
                           + [repr(float(v)) for v in row])


def _write_run(out: Path, rc: RunConfig, model: str, report: tr.TrainReport, ds, stats):
    ckpt = Checkpoint(model, report.params, rc.train, rc.to_dict(), stats)
    save_checkpoint(ckpt, out / "checkpoint.json")
    write_metrics(report, out / "metrics.csv")
    write_timing(report, out / "timing.csv")
    classify = rc.train.loss == "cross_entropy"
    preds = tr.predict(model, report.params, ds, rc.train)
    write_predictions(preds, out / "predictions.csv", classify, ds.d_obs)
    summary = {"model": model, "iterations": rc.train.iterations,
               "final_loss": report.final_loss,
               "mean_abs_delta_loss": report.mean_abs_delta_loss,
               "solver_steps": sum(r.solver_steps for r in report.records),
               **tr.prediction_summary(preds, classify)}
    (out / "summary.json").write_text(json.dumps(summary, indent=1) + "\n", encoding="utf-8")
    return summary


def _counterpart(model: str) -> str:
    kind = tr.cell_kind(model)
    return f"discrete_{kind}" if tr.is_ode(model) else f"ode_{kind}"


def _print_record(prefix, rec: tr.IterationRecord):
    print(f"{prefix}iter {rec.iteration:5d}  loss {rec.loss:.6g}  steps {rec.solver_steps}",
          flush=True)


def cmd_train(opts) -> int:
    rc = _run_config(opts)
    out = _ensure_dir(rc.out_dir)
    ds, stats = _load_data(rc)
    models = [rc.model] + ([_counterpart(rc.model)] if opts["compare"] else [])
    reports = {}
    for m in models:
        prefix = f"[{m}] " if len(models) > 1 else ""
        report = tr.train(m, ds, rc.train, hidden=rc.hidden,
                          progress=lambda r, p=prefix: _print_record(p, r))
        run_dir = out if len(models) == 1 else _ensure_dir(out / m.replace("_", "-"))
        mrc = RunConfig(m, rc.hidden, rc.train, rc.data, rc.generator, rc.normalize, str(run_dir))
        summary = _write_run(run_dir, mrc, m, report, ds, stats)
        reports[m] = report
        print(f"{prefix}final loss {summary['final_loss']}")
    if len(models) > 1:
        write_compare_metrics(reports, out / "compare_metrics.csv")
    return EXIT_OK


def write_compare_metrics(reports: dict, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "iteration", "loss", "solver_steps"])
        for m, rep in reports.items():
            for r in rep.records:
                w.writerow([m.replace("_", "-"), r.iteration, repr(r.loss), r.solver_steps])


# ---------------------------------------------------------------------------
# eval

def cmd_eval(opts) -> int:
    if not opts["checkpoint"]:
        raise UsageError("eval needs --checkpoint")
    ckpt_path = Path(opts["checkpoint"])
    ckpt = load_checkpoint(ckpt_path)
    rc = ckpt.run_config
    if opts["data"] is not None:
        ds = D.load_csv(opts["data"])
    elif rc.get("data") is not None:
        ds = D.load_csv(rc["data"])
    elif rc.get("generator") is not None:
        g = rc["generator"]
        ds = _generate(g["kind"], g["points"], g["seed"], g["series"], g["noise"], g["classes"])
    else:
        raise UsageError("eval needs --data")
    if ds.d_obs != ckpt.d_obs:
        raise UsageError(f"checkpoint expects d_obs={ckpt.d_obs}, data has {ds.d_obs}")
    if ckpt.normalization is not None:
        st = D.NormStats(tuple(ckpt.normalization["mean"]), tuple(ckpt.normalization["sd"]))
        ds = D.apply_stats(ds, st)
    cfg = ckpt.train_config
    query = None
    if opts["query_times"]:
        try:
            query = [float(x) for x in str(opts["query_times"]).split(",") if x.strip()]
        except ValueError:
            raise UsageError("--query-times must be comma-separated numbers") from None
    preds = tr.predict(ckpt.model, ckpt.params, ds, cfg, query_times=query,
                       refine=int(opts["refine"]))
    classify = cfg.loss == "cross_entropy"
    out = _ensure_dir(opts["out"] or ckpt_path.parent)
    write_predictions(preds, out / "eval_predictions.csv", classify, ds.d_obs)
    summary = tr.prediction_summary(preds, classify)
    (out / "eval_summary.json").write_text(json.dumps(summary, indent=1) + "\n",
                                           encoding="utf-8")
    print(json.dumps(summary))
    return EXIT_OK


# ---------------------------------------------------------------------------
# gradcheck

def gradcheck_series(points: int, seed: int) -> D.TimeSeries:
    """Scalar exp(-t) decay observed at irregular times on [0, 2]."""
    rng = np.random.default_rng(seed)
    t = D.irregular_times(rng, points, 2.0)
    return D.TimeSeries(tuple(t), Tensor(np.exp(-t)[:, None]), name="decay")


def cmd_gradcheck(opts) -> int:
    if not 1 <= opts["hidden"] <= GRADCHECK_MAX_HIDDEN:
        raise UsageError(f"--hidden must be in [1, {GRADCHECK_MAX_HIDDEN}]")
    if not 2 <= opts["points"] <= GRADCHECK_MAX_POINTS:
        raise UsageError(f"--points must be in [2, {GRADCHECK_MAX_POINTS}]")
    cfg = tr.TrainConfig(iterations=0, seed=opts["seed"], field_variant=opts["variant"],
                         peepholes=bool(opts["peepholes"]), solver=_solver(opts))
    series = gradcheck_series(opts["points"], opts["seed"])
    res = tr.grad_check(opts["model"], series, cfg, opts["epsilon"], hidden=opts["hidden"])
    for name, err in res.per_tensor.items():
        print(f"{name:8s} {err:.3e}")
    ok = res.worst <= opts["threshold"]
    print(f"worst {res.worst:.3e} ({'ok' if ok else 'FAILED'}, threshold {opts['threshold']:g})")
    return EXIT_OK if ok else EXIT_CHECK_FAILED


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "eval": cmd_eval,
            "gradcheck": cmd_gradcheck}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    try:
        opts = resolve(ns.command, ns)
        return COMMANDS[ns.command](opts)
    except (UsageError, DimensionError, FormatError, DataError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericError, BudgetError) as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
