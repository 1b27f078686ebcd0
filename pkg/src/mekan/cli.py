"""Command-line front end: train / eval / forecast / continual / bench /
export-activations, JSON configs, CSV artifacts.

Every run writes a manifest holding the full effective config (defaults
included), so a run is reproducible from its manifest alone.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tasks
from .errors import DataError, TrainingAbort
from .losses import ExitWeights, LossSpec
from .network import build, count_activations, count_parameters, load_model, \
    save_model
from .splines import activation_curve
from .training import TrainConfig, divergence_time, evaluate, fit, \
    fit_continual, rollout

MANIFEST_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    """One fully specified run; unknown keys are rejected on parse."""

    task: str
    task_params: dict = field(default_factory=dict)
    shape: list = field(default_factory=lambda: [1, 2, 1])
    multi_exit: bool = True
    base_kind: str = "silu"
    spline_order: int = 3
    exit_weights: list | None = None
    learn_to_exit: bool = False
    reg_strength: float = 0.0
    entropy_weight: float = 1.0
    grid_schedule: list = field(default_factory=lambda: [3, 5, 10, 20])
    steps_per_stage: int = 30
    seed: int = 0
    out_dir: str = "runs/run"
    coeff_std: float = 0.1
    init_domain: list = field(default_factory=lambda: [-1.0, 1.0])
    rollout_exit: str = "best"  # "best" | "final" | head index
    divergence_threshold: float = 0.2

    @classmethod
    def from_dict(cls, doc) -> "RunConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        if "task" not in doc:
            raise ConfigError("task: missing required key")
        cfg = cls(**doc)
        if not isinstance(cfg.task_params, dict):
            raise ConfigError("task_params: must be an object")
        if len(cfg.shape) < 2 or any(int(w) < 1 for w in cfg.shape):
            raise ConfigError("shape: need at least [d, m] with positive widths")
        return cfg

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except OSError as e:
            raise ConfigError(f"cannot read config: {e}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e}") from e
        return cls.from_dict(doc)

    def effective(self) -> dict:
        return asdict(self)


_TASK_PARAM_KEYS = {
    "sinc1d": {"n_train", "n_test", "ranges"},
    "sines2d": {"n_train", "n_test", "ranges"},
    "ikeda": {"n_train", "n_test", "transient", "mu"},
    "ecosystem": {"n_train", "n_test", "dt", "dt_sample", "transient_time"},
    "five_peaks": {"n_per_peak", "centers", "eval_points"},
    "csv": {"path", "target_column", "feature_columns", "n_train", "n_test"},
}


def _check_task_params(kind, params):
    base = kind.split(":", 1)[0]
    allowed = _TASK_PARAM_KEYS.get("sinc1d" if base == "feynman" else base)
    if allowed is None:
        raise ConfigError(f"task: unknown task {kind!r}")
    unknown = sorted(set(params) - allowed)
    if unknown:
        raise ConfigError(f"task_params: unknown keys for {kind}: {', '.join(unknown)}")


def make_datasets(cfg: RunConfig):
    """(train, test) datasets for a config; five_peaks yields the union set."""
    kind, p = cfg.task, dict(cfg.task_params)
    _check_task_params(kind, p)
    if kind in ("sinc1d", "sines2d") or kind.startswith("feynman:"):
        return tasks.gen_regression(
            kind, p.get("n_train", 1000), p.get("n_test", 1000), cfg.seed,
            ranges=p.get("ranges"),
        )
    if kind == "ikeda":
        return tasks.ikeda_dataset(
            p.get("n_train", 2000), p.get("n_test", 1000),
            p.get("transient", 1000), cfg.seed,
            tasks.IkedaParams(p.get("mu", 0.9)),
        )
    if kind == "ecosystem":
        return tasks.ecosystem_dataset(
            p.get("n_train", 2000), p.get("n_test", 1000),
            p.get("dt", 0.01), p.get("dt_sample", 0.1),
            p.get("transient_time", 100.0), cfg.seed,
        )
    if kind == "five_peaks":
        phases = tasks.gen_five_peaks(p.get("n_per_peak", 100),
                                      p.get("centers", tasks.PEAK_CENTERS))
        full = tasks.five_peaks_eval_set(p.get("eval_points", 500),
                                         p.get("centers", tasks.PEAK_CENTERS))
        return tasks.stack_datasets(phases), full
    if kind == "csv":
        if "path" not in p or "target_column" not in p:
            raise ConfigError("task_params: csv needs 'path' and 'target_column'")
        ds = tasks.load_csv(p["path"], p["target_column"], p.get("feature_columns"))
        return tasks.split(ds, p.get("n_train", 1000), p.get("n_test", 1000),
                           cfg.seed)
    raise ConfigError(f"task: unknown task {kind!r}")


def make_model(cfg: RunConfig):
    return build(
        cfg.shape,
        multi_exit=cfg.multi_exit,
        base_kind=cfg.base_kind,
        grid_size=int(cfg.grid_schedule[0]),
        order=cfg.spline_order,
        init_domain=tuple(cfg.init_domain),
        seed=cfg.seed,
        coeff_std=cfg.coeff_std,
    )


def make_loss_spec(cfg: RunConfig, num_heads: int) -> LossSpec:
    if cfg.learn_to_exit:
        ew = ExitWeights.learnable(num_heads)
    elif cfg.exit_weights is not None:
        raw = list(cfg.exit_weights)
        if len(raw) != num_heads:
            raise ConfigError(
                f"exit_weights: got {len(raw)} weights for {num_heads} heads"
            )
        ew = ExitWeights.fixed(raw)
    else:
        ew = ExitWeights.fixed(np.ones(num_heads))
    return LossSpec(ew, cfg.reg_strength, cfg.entropy_weight)


def _pick_exit(report, selector):
    if selector == "best":
        return report.best_exit
    if selector == "final":
        return len(report.per_exit_rmse) - 1
    return int(selector)


def _write_metrics_csv(path, report):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["exit", "rmse", "r2"])
        for k, (r, r2) in enumerate(zip(report.per_exit_rmse, report.per_exit_r2)):
            w.writerow([k, repr(float(r)), repr(float(r2))])


def _print_report(report):
    print(f"{'exit':>4}  {'rmse':>12}  {'r2':>8}")
    for k, (r, r2) in enumerate(zip(report.per_exit_rmse, report.per_exit_r2)):
        print(f"{k:>4}  {r:>12.6g}  {r2:>8.4g}")
    print(f"best exit: {report.best_exit}")


def _run_manifest(cfg, result, report, elapsed, extra=None):
    ew = result.exit_weights
    doc = {
        "manifest_version": MANIFEST_VERSION,
        "config": cfg.effective(),
        "exit_weights_raw": cfg.exit_weights,
        "exit_weights_normalized": [float(v) for v in ew.weights()],
        "exit_logits": None if ew.mode != "learnable"
        else [float(v) for v in ew.logits],
        "stage_final_losses": [
            None if v is None else float(v) for v in result.stage_final_losses
        ] if hasattr(result, "stage_final_losses") else None,
        "per_exit_rmse": [float(v) for v in report.per_exit_rmse],
        "per_exit_r2": [float(v) for v in report.per_exit_r2],
        "best_exit": report.best_exit,
        "n_test": report.n_test,
        "wall_clock_sec": elapsed,
    }
    if extra:
        doc.update(extra)
    return doc


def cmd_train(args) -> int:
    cfg = RunConfig.from_file(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out_dir = args.out
    train, test = make_datasets(cfg)
    model = make_model(cfg)
    tcfg = TrainConfig(
        loss_spec=make_loss_spec(cfg, model.num_heads),
        grid_schedule=tuple(cfg.grid_schedule),
        steps_per_stage=cfg.steps_per_stage,
        seed=cfg.seed,
        learn_to_exit=cfg.learn_to_exit,
    )
    t0 = time.perf_counter()
    result = fit(model, train, tcfg)
    elapsed = time.perf_counter() - t0
    report = evaluate(model, test)

    os.makedirs(cfg.out_dir, exist_ok=True)
    save_model(model, os.path.join(cfg.out_dir, "model.json"))
    _write_metrics_csv(os.path.join(cfg.out_dir, "metrics.csv"), report)
    with open(os.path.join(cfg.out_dir, "trace.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["stage", "grid", "iter", "loss", "grad_norm", "step_size"])
        for s, (grid, trace) in enumerate(zip(cfg.grid_schedule, result.stage_traces)):
            for row in zip(trace.iters, trace.losses, trace.grad_norms,
                           trace.step_sizes):
                w.writerow([s, grid, *row])
    manifest = _run_manifest(cfg, result, report, elapsed, extra={
        "n_train": train.n,
        "num_activations": count_activations(model),
        "num_parameters": count_parameters(model),
    })
    with open(os.path.join(cfg.out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)
    _print_report(report)
    return 0


def cmd_eval(args) -> int:
    cfg = RunConfig.from_file(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    model = load_model(args.model)
    _, test = make_datasets(cfg)
    report = evaluate(model, test)
    _print_report(report)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write_metrics_csv(os.path.join(args.out, "metrics.csv"), report)
    return 0


def cmd_forecast(args) -> int:
    cfg = RunConfig.from_file(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    model = load_model(args.model)
    if model.in_dim != model.out_dim:
        print("error: model input/output dims differ; cannot roll out",
              file=sys.stderr)
        return 1
    _, test = make_datasets(cfg)
    if test.x.shape[1] != model.in_dim:
        print(f"error: task state dim {test.x.shape[1]} does not match model "
              f"dim {model.in_dim}", file=sys.stderr)
        return 1
    n_steps = min(args.steps, test.n)
    threshold = args.threshold if args.threshold is not None \
        else cfg.divergence_threshold
    selector = args.exit if args.exit is not None else cfg.rollout_exit
    exit_idx = _pick_exit(evaluate(model, test), selector)

    truth = test.y[:n_steps]
    ro = rollout(model, test.x[0], n_steps, exit_index=exit_idx)
    dt_steps = divergence_time(ro.states, truth, threshold)

    os.makedirs(args.out, exist_ok=True)
    dim = model.in_dim
    with open(os.path.join(args.out, "forecast.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step"] + [f"truth_{i}" for i in range(dim)]
                   + [f"pred_{i}" for i in range(dim)])
        for t in range(len(ro.states)):
            w.writerow([t + 1, *[repr(v) for v in truth[t]],
                        *[repr(v) for v in ro.states[t]]])
    with open(os.path.join(args.out, "forecast.json"), "w") as fh:
        json.dump({
            "n_steps": n_steps,
            "threshold": threshold,
            "exit": exit_idx,
            "divergence_time": dt_steps,
            "truncated": ro.truncated,
        }, fh, indent=2)
    print(f"divergence at step {dt_steps} of {n_steps} (threshold {threshold})")
    return 0


def cmd_continual(args) -> int:
    cfg = RunConfig.from_file(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out_dir = args.out
    if cfg.task != "five_peaks":
        raise ConfigError("task: continual training expects the five_peaks task")
    p = dict(cfg.task_params)
    _check_task_params(cfg.task, p)
    centers = p.get("centers", tasks.PEAK_CENTERS)
    phases = tasks.gen_five_peaks(p.get("n_per_peak", 100), centers)
    eval_set = tasks.five_peaks_eval_set(p.get("eval_points", 500), centers)
    # fixed grid: no refinement between phases
    grid = int(cfg.grid_schedule[-1])
    model = build(cfg.shape, multi_exit=cfg.multi_exit, base_kind=cfg.base_kind,
                  grid_size=grid, order=cfg.spline_order,
                  init_domain=tuple(cfg.init_domain), seed=cfg.seed,
                  coeff_std=cfg.coeff_std)
    tcfg = TrainConfig(
        loss_spec=make_loss_spec(cfg, model.num_heads),
        grid_schedule=(grid,),
        steps_per_stage=cfg.steps_per_stage,
        seed=cfg.seed,
        learn_to_exit=cfg.learn_to_exit,
    )
    t0 = time.perf_counter()
    result = fit_continual(model, phases, tcfg, eval_data=eval_set)
    elapsed = time.perf_counter() - t0

    os.makedirs(cfg.out_dir, exist_ok=True)
    save_model(model, os.path.join(cfg.out_dir, "model.json"))
    with open(os.path.join(cfg.out_dir, "phase_metrics.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["phase", "exit", "rmse", "r2"])
        for ph, rep in enumerate(result.phase_reports):
            for k, (r, r2) in enumerate(zip(rep.per_exit_rmse, rep.per_exit_r2)):
                w.writerow([ph, k, repr(float(r)), repr(float(r2))])
    final = result.phase_reports[-1]
    manifest = _run_manifest(cfg, result, final, elapsed,
                             extra={"phases": len(phases)})
    manifest.pop("stage_final_losses", None)
    with open(os.path.join(cfg.out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)
    _print_report(final)
    return 0


def cmd_export_activations(args) -> int:
    model = load_model(args.model)
    os.makedirs(args.out, exist_ok=True)
    index = []

    def export(layer, name_fn, where):
        for j, i, act in layer.iter_acts():
            fname = name_fn(j, i)
            xs, ys = activation_curve(act, args.samples)
            with open(os.path.join(args.out, fname), "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["x", "phi_x"])
                w.writerows((repr(a), repr(b)) for a, b in zip(xs, ys))
            index.append({"file": fname, **where, "j": j, "i": i})

    for l, layer in enumerate(model.trunk):
        export(layer, lambda j, i, l=l: f"act_L{l}_J{j}_I{i}.csv",
               {"kind": "trunk", "layer": l})
    for k, ex in enumerate(model.exits):
        export(ex, lambda j, i, k=k: f"act_exit{k}_J{j}_I{i}.csv",
               {"kind": "exit", "layer": k})
    with open(os.path.join(args.out, "index.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["file", "kind", "layer", "j", "i"])
        for row in index:
            w.writerow([row["file"], row["kind"], row["layer"], row["j"], row["i"]])
    print(f"exported {len(index)} activations to {args.out}")
    return 0


# --- benchmark suites ---------------------------------------------------------

BENCH_SUITES = {
    "regression": [
        {"task": "sinc1d", "shape": [1, 2, 2, 2, 1], "weights": [1, 2, 3, 4]},
        {"task": "sines2d", "shape": [2, 3, 2, 1], "weights": [1, 2, 1]},
    ],
    "feynman": [
        {"task": f"feynman:{fid}",
         "shape": [len(tasks.FEYNMAN[fid][1]), 5, 5, 5, 5, 1],
         "weights": [0, 0, 1, 1, 1.5]}
        for fid in tasks.feynman_ids()
    ],
    "dynamics": [
        {"task": "ikeda", "shape": [2, 4, 4, 4, 2], "weights": [0, 0, 1, 2]},
        {"task": "ecosystem", "shape": [3, 3, 3, 3], "weights": [2, 1, 0.5]},
    ],
    "continual": [
        {"task": "five_peaks", "shape": [1, 5, 5, 1], "weights": [1, 1, 2000],
         "grid_schedule": [20], "steps_per_stage": 10},
    ],
    "tabular": [
        {"task": "csv", "data": "airfoil", "shape": [5, 5, 5, 1],
         "weights": [1000, 100, 1]},
        {"task": "csv", "data": "power_plant", "shape": [4, 4, 1],
         "weights": [5, 2]},
        {"task": "csv", "data": "superconductivity", "shape": [5, 5, 1],
         "weights": [10, 8]},
    ],
}


def _bench_cell(payload):
    """Train the single- and multi-exit variants of one (task, seed) cell."""
    spec = payload["spec"]
    seed = payload["seed"]
    rows = []
    for kind in ("single", "multi"):
        doc = {
            "task": spec["task"],
            "task_params": spec.get("task_params", {}),
            "shape": spec["shape"],
            "multi_exit": kind == "multi",
            "grid_schedule": spec.get("grid_schedule", payload["grid_schedule"]),
            "steps_per_stage": spec.get("steps_per_stage",
                                        payload["steps_per_stage"]),
            "seed": seed,
        }
        cfg = RunConfig.from_dict(doc)
        if payload.get("n_train"):
            cfg.task_params = {**cfg.task_params, "n_train": payload["n_train"],
                               "n_test": payload["n_test"]}
        model = make_model(cfg)
        if kind == "multi" and model.num_heads > 1:
            cfg.exit_weights = list(spec["weights"])[-model.num_heads:] \
                if len(spec["weights"]) != model.num_heads else list(spec["weights"])
        tcfg = TrainConfig(
            loss_spec=make_loss_spec(cfg, model.num_heads),
            grid_schedule=tuple(cfg.grid_schedule),
            steps_per_stage=cfg.steps_per_stage,
            seed=seed,
        )
        t0 = time.perf_counter()
        if spec["task"] == "five_peaks":
            phases = tasks.gen_five_peaks(
                cfg.task_params.get("n_per_peak", 100))
            eval_set = tasks.five_peaks_eval_set()
            fit_continual(model, phases, tcfg, eval_data=eval_set)
            report = evaluate(model, eval_set)
        else:
            train, test = make_datasets(cfg)
            fit(model, train, tcfg)
            report = evaluate(model, test)
        elapsed = time.perf_counter() - t0
        rows.append({
            "suite": payload["suite"],
            "task": spec.get("data", spec["task"]),
            "seed": seed,
            "model": kind,
            "n_heads": model.num_heads,
            "rmse_per_exit": ";".join(repr(float(v)) for v in report.per_exit_rmse),
            "r2_per_exit": ";".join(repr(float(v)) for v in report.per_exit_r2),
            "best_exit": report.best_exit,
            "best_rmse": float(report.per_exit_rmse[report.best_exit]),
            "best_r2": float(report.per_exit_r2[report.best_exit]),
            "seconds": round(elapsed, 3),
        })
    return rows


def cmd_bench(args) -> int:
    suite = BENCH_SUITES[args.suite]
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [0]
    data_paths = dict(kv.split("=", 1) for kv in (args.data or []))

    cells = []
    skipped = []
    for spec in suite:
        spec = dict(spec)
        if spec["task"] == "csv":
            path = data_paths.get(spec["data"])
            if not path or not os.path.exists(path):
                skipped.append(spec["data"])
                continue
            spec["task_params"] = {"path": path,
                                   "target_column": args.target_column}
        for seed in seeds:
            cells.append({
                "suite": args.suite,
                "spec": spec,
                "seed": seed,
                "grid_schedule": [int(g) for g in args.grid_schedule.split(",")]
                if args.grid_schedule else [3, 5, 10, 20],
                "steps_per_stage": args.steps_per_stage,
                "n_train": args.n_train,
                "n_test": args.n_test,
            })
    for name in skipped:
        print(f"warning: skipping tabular task {name!r}: no data file supplied",
              file=sys.stderr)
    if not cells:
        print("error: nothing to run (all tasks skipped)", file=sys.stderr)
        return 1

    threads = args.threads or int(os.environ.get("MEKAN_THREADS", "1"))
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            nested = list(pool.map(_bench_cell, cells))
    else:
        nested = [_bench_cell(c) for c in cells]
    rows = [r for cell_rows in nested for r in cell_rows]

    os.makedirs(args.out, exist_ok=True)
    cols = ["suite", "task", "seed", "model", "n_heads", "rmse_per_exit",
            "r2_per_exit", "best_exit", "best_rmse", "best_r2", "seconds"]
    with open(os.path.join(args.out, "comparison.csv"), "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        w.writerows(rows)

    lines = []
    for task in dict.fromkeys(r["task"] for r in rows):
        single = [r["best_rmse"] for r in rows
                  if r["task"] == task and r["model"] == "single"]
        multi = [r["best_rmse"] for r in rows
                 if r["task"] == task and r["model"] == "multi"]
        wins = sum(m < s for s, m in zip(single, multi))
        lines.append(
            f"{task}: median single RMSE {np.median(single):.6g}, "
            f"median multi best RMSE {np.median(multi):.6g}, "
            f"multi wins {wins}/{len(single)} seeds"
        )
    with open(os.path.join(args.out, "summary.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    print("\n".join(lines))
    return 0


def _build_parser():
    p = argparse.ArgumentParser(prog="mekan",
                                description="multi-exit KAN trainer and benchmarks")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--seed", type=int, default=None)

    t = sub.add_parser("train", help="train a model from a JSON config")
    t.add_argument("--config", required=True)
    t.add_argument("--out", default=None)
    common(t)
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="evaluate a saved model on a config's task")
    e.add_argument("--model", required=True)
    e.add_argument("--config", required=True)
    e.add_argument("--out", default=None)
    common(e)
    e.set_defaults(fn=cmd_eval)

    f = sub.add_parser("forecast", help="closed-loop rollout against task truth")
    f.add_argument("--model", required=True)
    f.add_argument("--config", required=True)
    f.add_argument("--steps", type=int, default=100)
    f.add_argument("--threshold", type=float, default=None)
    f.add_argument("--exit", default=None,
                   help="'best', 'final', or a head index")
    f.add_argument("--out", required=True)
    common(f)
    f.set_defaults(fn=cmd_forecast)

    c = sub.add_parser("continual", help="phase-by-phase training on five peaks")
    c.add_argument("--config", required=True)
    c.add_argument("--out", default=None)
    common(c)
    c.set_defaults(fn=cmd_continual)

    x = sub.add_parser("export-activations",
                       help="dump each activation curve to CSV")
    x.add_argument("--model", required=True)
    x.add_argument("--out", required=True)
    x.add_argument("--samples", type=int, default=200)
    x.set_defaults(fn=cmd_export_activations)

    b = sub.add_parser("bench", help="single- vs multi-exit comparison suites")
    b.add_argument("--suite", required=True, choices=sorted(BENCH_SUITES))
    b.add_argument("--out", required=True)
    b.add_argument("--seeds", default="0")
    b.add_argument("--threads", type=int, default=None,
                   help="worker processes (MEKAN_THREADS as fallback)")
    b.add_argument("--data", action="append", default=None,
                   metavar="NAME=PATH", help="tabular dataset CSV path")
    b.add_argument("--target-column", default="target")
    b.add_argument("--steps-per-stage", type=int, default=30)
    b.add_argument("--grid-schedule", default=None)
    b.add_argument("--n-train", type=int, default=None)
    b.add_argument("--n-test", type=int, default=None)
    b.set_defaults(fn=cmd_bench)
    return p


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (DataError, TrainingAbort) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
