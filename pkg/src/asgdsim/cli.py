"""Experiment runner: config parsing, sweeps, CSV metrics, speedup tables.

Configs are YAML key-value trees. A config describes one sweep: a set of
algorithms times worker counts times seeds, one metrics CSV per run plus a
summary JSON. Unknown keys are rejected so typos fail before any simulation
starts. CSV bodies are byte-identical across reruns of the same config;
wall-clock timestamps appear only in the summary.
"""
from __future__ import annotations

import argparse
import concurrent.futures
import csv
import dataclasses
import json
import math
import os
import sys
import time

import numpy as np
import yaml

from .objectives import (
    Dataset,
    LogisticObjective,
    MlpObjective,
    QuadraticObjective,
    gen_synthetic,
    load_csv,
)
from .simulation import (
    ALGORITHMS,
    DATA_STREAM,
    EVAL_DATA_STREAM,
    ExecTimeModel,
    RunConfig,
    Schedule,
    run_simulation,
    speedup_table,
)
from .vectors import SeededRng

CSV_COLUMNS = (
    "sim_time", "epoch", "step", "lag", "gap", "normalized_gap",
    "lr", "train_loss", "eval_loss", "diverged",
)


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the key path."""


@dataclasses.dataclass
class ExperimentConfig:
    algorithms: tuple
    workers: tuple
    seeds: tuple
    batch_size: int
    epochs: int
    eta: float
    gamma: float
    lam: float
    weight_decay: float
    objective: dict
    data: dict
    exec_model: dict
    schedule: dict
    speedup: dict | None = None


def _require_keys(mapping: dict, allowed, path: str) -> None:
    for key in mapping:
        if key not in allowed:
            raise ConfigError(f"unknown key {path}{key!r}")


def _as_list(value, path: str):
    if isinstance(value, (list, tuple)):
        return list(value)
    return [value]


def _positive_int(value, path: str) -> int:
    if not isinstance(value, int) or isinstance(value, bool) or value < 1:
        raise ConfigError(f"{path} must be a positive integer, got {value!r}")
    return value


def _number(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{path} must be a number, got {value!r}")
    return float(value)


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate a YAML experiment config, filling defaults."""
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping of keys to values")

    allowed = {
        "algorithm", "algorithms", "workers", "seeds", "batch_size", "epochs",
        "eta", "gamma", "lambda", "weight_decay", "objective", "data",
        "exec_model", "schedule", "speedup",
    }
    _require_keys(raw, allowed, "")

    if "algorithm" in raw and "algorithms" in raw:
        raise ConfigError("give either 'algorithm' or 'algorithms', not both")
    algorithms = tuple(_as_list(raw.get("algorithms", raw.get("algorithm", [])), "algorithms"))
    if not algorithms:
        raise ConfigError("missing 'algorithm'")
    for name in algorithms:
        if name not in ALGORITHMS:
            raise ConfigError(f"unsupported algorithm {name!r}")

    workers = tuple(_positive_int(w, "workers") for w in _as_list(raw.get("workers", 1), "workers"))
    seeds = tuple(
        w if isinstance(w, int) and not isinstance(w, bool)
        else (_ for _ in ()).throw(ConfigError(f"seeds must be integers, got {w!r}"))
        for w in _as_list(raw.get("seeds", [0]), "seeds")
    )
    if "sequential_nag" in algorithms and any(w != 1 for w in workers):
        raise ConfigError("sequential_nag requires workers == 1")

    batch_size = _positive_int(raw.get("batch_size", 128), "batch_size")
    epochs = _positive_int(raw.get("epochs", 10), "epochs")
    eta = _number(raw.get("eta", 0.1), "eta")
    gamma = _number(raw.get("gamma", 0.9), "gamma")
    lam = _number(raw.get("lambda", 2.0), "lambda")
    weight_decay = _number(raw.get("weight_decay", 0.0), "weight_decay")
    if eta <= 0:
        raise ConfigError("eta must be positive")
    if not 0.0 <= gamma < 1.0:
        raise ConfigError("gamma must be in [0, 1)")

    objective = raw.get("objective")
    if objective is None:
        raise ConfigError("missing 'objective'")
    if isinstance(objective, str):
        objective = {"kind": objective}
    if not isinstance(objective, dict) or "kind" not in objective:
        raise ConfigError("objective must have a 'kind'")
    kind = objective["kind"]
    if kind == "quadratic":
        _require_keys(objective, {"kind", "eigenvalues"}, "objective.")
        eig = objective.get("eigenvalues")
        if eig is not None and not isinstance(eig, (int, float, list)):
            raise ConfigError("objective.eigenvalues must be a number or list")
        objective = {"kind": kind, "eigenvalues": eig}
    elif kind == "logistic":
        _require_keys(objective, {"kind"}, "objective.")
        objective = {"kind": kind}
    elif kind == "mlp":
        _require_keys(objective, {"kind", "hidden"}, "objective.")
        objective = {"kind": kind, "hidden": _positive_int(objective.get("hidden", 16), "objective.hidden")}
    else:
        raise ConfigError(f"unsupported objective kind {kind!r}")

    data = raw.get("data") or {}
    _require_keys(data, {"num_samples", "dim", "num_classes", "separation",
                         "eval_samples", "seed", "csv", "eval_csv"}, "data.")
    data = {
        "num_samples": _positive_int(data.get("num_samples", 1024), "data.num_samples"),
        "dim": _positive_int(data.get("dim", 16), "data.dim"),
        "num_classes": _positive_int(data.get("num_classes", 2), "data.num_classes"),
        "separation": _number(data.get("separation", 4.0), "data.separation"),
        "eval_samples": _positive_int(data.get("eval_samples", 256), "data.eval_samples"),
        "seed": data.get("seed", 0),
        "csv": data.get("csv"),
        "eval_csv": data.get("eval_csv"),
    }
    if data["num_classes"] < 2:
        raise ConfigError("data.num_classes must be at least 2")
    if data["csv"] is None and data["dim"] < data["num_classes"]:
        raise ConfigError("data.dim must be at least data.num_classes")

    exec_model = raw.get("exec_model") or {}
    _require_keys(exec_model, {"mode", "mean_time", "v_task", "v_mach",
                               "compound_homogeneous", "use_raw_mu"}, "exec_model.")
    mode = exec_model.get("mode", "homogeneous")
    if mode not in ("homogeneous", "heterogeneous", "constant"):
        raise ConfigError(f"unsupported exec_model.mode {mode!r}")
    exec_model = {
        "mode": mode,
        "mean_time": _number(exec_model.get("mean_time", batch_size), "exec_model.mean_time"),
        "v_task": _number(exec_model.get("v_task", 0.1), "exec_model.v_task"),
        "v_mach": (None if exec_model.get("v_mach") is None
                   else _number(exec_model["v_mach"], "exec_model.v_mach")),
        "compound_homogeneous": bool(exec_model.get("compound_homogeneous", False)),
        "use_raw_mu": bool(exec_model.get("use_raw_mu", False)),
    }

    schedule = raw.get("schedule") or {}
    _require_keys(schedule, {"warmup_epochs", "decay_factor", "decay_epochs"}, "schedule.")
    schedule = {
        "warmup_epochs": schedule.get("warmup_epochs", 5),
        "decay_factor": _number(schedule.get("decay_factor", 0.1), "schedule.decay_factor"),
        "decay_epochs": [_number(d, "schedule.decay_epochs") for d in schedule.get("decay_epochs", [])],
    }
    if not isinstance(schedule["warmup_epochs"], int) or schedule["warmup_epochs"] < 0:
        raise ConfigError("schedule.warmup_epochs must be a non-negative integer")

    speedup = raw.get("speedup")
    if speedup is not None:
        _require_keys(speedup, {"modes", "workers", "iterations", "seed"}, "speedup.")
        modes = _as_list(speedup.get("modes", ["homogeneous", "heterogeneous"]), "speedup.modes")
        for m in modes:
            if m not in ("homogeneous", "heterogeneous", "constant"):
                raise ConfigError(f"unsupported speedup mode {m!r}")
        speedup = {
            "modes": modes,
            "workers": [_positive_int(w, "speedup.workers")
                        for w in _as_list(speedup.get("workers", [1, 2, 4, 8, 16, 32, 64]), "speedup.workers")],
            "iterations": _positive_int(speedup.get("iterations", 100_000), "speedup.iterations"),
            "seed": speedup.get("seed", 0),
        }

    return ExperimentConfig(
        algorithms=algorithms,
        workers=workers,
        seeds=seeds,
        batch_size=batch_size,
        epochs=epochs,
        eta=eta,
        gamma=gamma,
        lam=lam,
        weight_decay=weight_decay,
        objective=objective,
        data=data,
        exec_model=exec_model,
        schedule=schedule,
        speedup=speedup,
    )


def parse_config_file(path: str) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def format_config(config: ExperimentConfig) -> str:
    """Emit a config as YAML; parse(format(cfg)) == cfg."""
    raw = {
        "algorithms": list(config.algorithms),
        "workers": list(config.workers),
        "seeds": list(config.seeds),
        "batch_size": config.batch_size,
        "epochs": config.epochs,
        "eta": config.eta,
        "gamma": config.gamma,
        "lambda": config.lam,
        "weight_decay": config.weight_decay,
        "objective": config.objective,
        "data": config.data,
        "exec_model": config.exec_model,
        "schedule": config.schedule,
    }
    if config.speedup is not None:
        raw["speedup"] = config.speedup
    return yaml.safe_dump(raw, sort_keys=True)


def _build_datasets(config: ExperimentConfig):
    data = config.data
    if data["csv"]:
        train = load_csv(data["csv"])
        eval_ds = load_csv(data["eval_csv"]) if data["eval_csv"] else train
        return train, eval_ds
    train = gen_synthetic(
        SeededRng(data["seed"], DATA_STREAM),
        data["num_samples"], data["dim"], data["num_classes"], data["separation"],
    )
    eval_ds = gen_synthetic(
        SeededRng(data["seed"], EVAL_DATA_STREAM),
        data["eval_samples"], data["dim"], data["num_classes"], data["separation"],
    )
    return train, eval_ds


def _build_objective(config: ExperimentConfig, dataset: Dataset):
    spec = config.objective
    if spec["kind"] == "quadratic":
        return QuadraticObjective(dataset, eigenvalues=spec.get("eigenvalues"),
                                  weight_decay=config.weight_decay)
    num_classes = int(dataset.labels.max()) + 1 if config.data["csv"] else config.data["num_classes"]
    if spec["kind"] == "logistic":
        return LogisticObjective(dataset, num_classes, weight_decay=config.weight_decay)
    return MlpObjective(dataset, num_classes, hidden=spec["hidden"],
                        weight_decay=config.weight_decay)


def build_run_config(config: ExperimentConfig, algorithm: str, num_workers: int,
                     seed: int, record_trace: bool = False) -> RunConfig:
    """Materialize one run of a sweep into simulator inputs."""
    train, eval_ds = _build_datasets(config)
    objective = _build_objective(config, train)
    eval_objective = objective.with_dataset(eval_ds, weight_decay=0.0)
    exec_model = ExecTimeModel(
        mode=config.exec_model["mode"],
        mean_time=config.exec_model["mean_time"],
        v_task=config.exec_model["v_task"],
        v_mach=config.exec_model["v_mach"],
        compound_homogeneous=config.exec_model["compound_homogeneous"],
        use_raw_mu=config.exec_model["use_raw_mu"],
    )
    schedule = Schedule(
        base_eta=config.eta,
        gamma=config.gamma,
        warmup_epochs=config.schedule["warmup_epochs"],
        num_workers=num_workers,
        decay_factor=config.schedule["decay_factor"],
        decay_epochs=tuple(config.schedule["decay_epochs"]),
    )
    return RunConfig(
        algorithm=algorithm,
        num_workers=num_workers,
        objective=objective,
        exec_model=exec_model,
        schedule=schedule,
        batch_size=config.batch_size,
        epochs=config.epochs,
        seed=seed,
        eval_objective=eval_objective,
        lam=config.lam,
        record_trace=record_trace,
    )


def _format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_metrics_csv(records, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in records:
            writer.writerow([
                _format_cell(r.sim_time), r.epoch, r.step, _format_cell(r.lag),
                _format_cell(r.gap), _format_cell(r.normalized_gap),
                _format_cell(r.lr), _format_cell(r.train_loss),
                _format_cell(r.eval_loss), r.diverged,
            ])


def _execute_run(config: ExperimentConfig, algorithm: str, num_workers: int,
                 seed: int, out_path: str) -> dict:
    result = run_simulation(build_run_config(config, algorithm, num_workers, seed))
    write_metrics_csv(result.records, out_path)
    gaps = [r.gap for r in result.records if r.gap is not None]
    return {
        "algorithm": algorithm,
        "workers": num_workers,
        "seed": seed,
        "diverged": result.diverged,
        "final_train_loss": result.final_train_loss,
        "final_eval_loss": result.final_eval_loss,
        "mean_gap": float(np.mean(gaps)) if gaps else None,
        "mean_lag": result.mean_lag,
        "sim_time_end": result.end_time,
        "csv": os.path.basename(out_path),
    }


def run_experiment(config: ExperimentConfig, out_dir: str, jobs: int = 1,
                   seed_offset: int = 0) -> int:
    """Run the sweep; returns the process exit code (0 ok, 1 runtime failure)."""
    os.makedirs(out_dir, exist_ok=True)
    combos = [
        (algorithm, n, seed + seed_offset)
        for algorithm in config.algorithms
        for n in config.workers
        for seed in config.seeds
    ]
    tasks = [
        (algorithm, n, seed,
         os.path.join(out_dir, f"{algorithm}_N{n}_seed{seed}.csv"))
        for algorithm, n, seed in combos
    ]
    if jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_execute_run, config, a, n, s, p) for a, n, s, p in tasks]
            summaries = [f.result() for f in futures]
    else:
        summaries = [_execute_run(config, a, n, s, p) for a, n, s, p in tasks]

    summary = {
        "config": yaml.safe_load(format_config(config)),
        "runs": summaries,
        "generated_at": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")

    # Divergence is a reported outcome; only a combo with every seed diverged
    # is a failure.
    for algorithm in config.algorithms:
        for n in config.workers:
            cell = [s for s in summaries if s["algorithm"] == algorithm and s["workers"] == n]
            if cell and all(s["diverged"] for s in cell):
                print(f"error: {algorithm} N={n} diverged for all seeds", file=sys.stderr)
                return 1
    return 0


def emit_speedup_table(config: ExperimentConfig, out_path: str):
    """Write (N, paradigm, mode, speedup) rows for the configured grid."""
    spec = config.speedup or {
        "modes": ["homogeneous", "heterogeneous"],
        "workers": [1, 2, 4, 8, 16, 32, 64],
        "iterations": 100_000,
        "seed": 0,
    }
    rows = []
    for mode in spec["modes"]:
        model = ExecTimeModel(mode=mode, mean_time=config.exec_model["mean_time"])
        for paradigm in ("async", "sync"):
            table = speedup_table(model, spec["workers"], paradigm,
                                  spec["iterations"], spec["seed"])
            for n in spec["workers"]:
                rows.append((n, paradigm, mode, table[n]))
    rows.sort(key=lambda r: (r[2], r[0], r[1]))
    with open(out_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("N", "paradigm", "mode", "speedup"))
        for n, paradigm, mode, value in rows:
            writer.writerow((n, paradigm, mode, repr(float(value))))
    return rows


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="asgdsim",
        description="Deterministic parameter-server ASGD simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment sweep")
    p_run.add_argument("config", help="path to a YAML experiment config")
    p_run.add_argument("--out", default=None, help="output directory")
    p_run.add_argument("--jobs", type=int, default=1, help="parallel runs")
    p_run.add_argument("--seed-offset", type=int, default=0, help="shift every seed")

    p_speed = sub.add_parser("speedup", help="emit the theoretical speedup table")
    p_speed.add_argument("config", help="path to a YAML experiment config")
    p_speed.add_argument("--out", required=True, help="output CSV file")

    args = parser.parse_args(argv)
    out_default = os.environ.get("ASGDSIM_OUT", "results")

    try:
        config = parse_config_file(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return 2

    try:
        if args.command == "run":
            return run_experiment(config, args.out or out_default,
                                  jobs=max(1, args.jobs), seed_offset=args.seed_offset)
        rows = emit_speedup_table(config, args.out)
        print(f"wrote {len(rows)} speedup rows to {args.out}")
        return 0
    except OSError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 1
    except FloatingPointError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
