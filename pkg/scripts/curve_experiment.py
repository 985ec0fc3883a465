"""Eight-curve and tri-knot learning over 20 iterations.

For each curve and cell type, records the per-iteration loss and the
trajectory predicted at iteration 1 and at the last iteration on a 4x
refined time grid, which is enough to redraw the before/after figures.

    python3 scripts/curve_experiment.py --out results/curves
"""

from __future__ import annotations

import argparse
from dataclasses import dataclass, field

from _common import out_dir, write_json, write_rows
from odernn import data as D
from odernn import training as T
from odernn.odesolve import SolverConfig


@dataclass
class CurveExperiment:
    curves: tuple = ("eight", "triknot")
    models: tuple = ("ode_gru", "ode_lstm")
    n_points: int = 100
    hidden: int = 50
    iterations: int = 20
    learning_rate: float = 1e-2
    step: float = 0.1
    seed: int = 0
    refine: int = 4


def _trajectory_rows(model, params, ts, cfg, refine, tag):
    pred = T.predict(model, params, ts, cfg, refine=refine)[0]
    return [(tag, repr(t), *map(repr, row.tolist())) for t, row in zip(pred.times, pred.values)]


def run(cfg: CurveExperiment, out: str) -> list[dict]:
    dest = out_dir(out)
    results = []
    gens = {"eight": D.gen_eight_curve, "triknot": D.gen_triknot}
    for curve in cfg.curves:
        ts = gens[curve](cfg.n_points, seed=cfg.seed)
        write_rows(dest / f"{curve}_data.csv", ["t", "x", "y"],
                   [(repr(t), *map(repr, v)) for t, v in zip(ts.timestamps, ts.values.tolist())])
        for model in cfg.models:
            tc = T.TrainConfig(iterations=cfg.iterations, learning_rate=cfg.learning_rate,
                               seed=cfg.seed, solver=SolverConfig("rk4", fixed_step=cfg.step))
            first = T.train(model, ts, T.TrainConfig(**{**tc.__dict__, "iterations": 1}),
                            hidden=cfg.hidden)
            rep = T.train(model, ts, tc, hidden=cfg.hidden)
            L = rep.losses
            write_rows(dest / f"{curve}_{model}_loss.csv", ["iteration", "loss"],
                       [(r.iteration, repr(r.loss)) for r in rep.records])
            rows = _trajectory_rows(model, first.params, ts, tc, cfg.refine, "iteration_1")
            rows += _trajectory_rows(model, rep.params, ts, tc, cfg.refine,
                                     f"iteration_{cfg.iterations}")
            write_rows(dest / f"{curve}_{model}_trajectory.csv", ["stage", "t", "x", "y"], rows)
            res = {"curve": curve, "model": model, "first": L[0], "last": L[-1],
                   "ratio": L[-1] / L[0]}
            print(f"{curve:8s} {model:9s} loss {L[0]:.4f} -> {L[-1]:.4f} ({res['ratio']:.1%})")
            results.append(res)
    write_json(dest / "summary.json", {"config": cfg.__dict__, "results": results})
    return results


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results/curves")
    ap.add_argument("--iterations", type=int, default=CurveExperiment.iterations)
    a = ap.parse_args()
    run(CurveExperiment(iterations=a.iterations), a.out)


if __name__ == "__main__":
    main()
