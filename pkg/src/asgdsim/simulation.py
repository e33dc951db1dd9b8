"""Discrete-event simulation of parameter-server training.

Covers the gamma-distributed batch execution-time model, the single-threaded
event loop with a FIFO atomic master, learning-rate schedules with warm-up
and momentum correction, and the theoretical async-vs-sync speedup model.

Everything is deterministic given (config, seed): batches, execution times,
and initial parameters come from per-purpose RNG streams, and simultaneous
events are broken by dispatch sequence number.
"""
from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .objectives import Objective
from .protocols import (
    MASTER_OPS,
    MasterState,
    WorkerState,
    make_master,
    rescale_momenta,
    worker_round_asgd,
    worker_round_dana_slim,
)
from .sequential import OptState, nag_step
from .staleness import gap, normalized_gap
from .vectors import SeededRng, l2_norm

ALGORITHMS = (
    "asgd",
    "nag_asgd",
    "multi_asgd",
    "dc_asgd",
    "lwp",
    "dana_zero",
    "dana_slim",
    "dana_dc",
    "sequential_nag",
)

# RNG stream allocation. Worker streams are indexed by worker id only, so
# changing the worker count never perturbs existing streams.
DATA_STREAM = 0
EVAL_DATA_STREAM = 1
INIT_STREAM = 2
EXEC_STREAM_BASE = 100
BATCH_STREAM_BASE = 100_000

# Parameters beyond this magnitude are declared diverged before they reach
# actual overflow, keeping the arithmetic warning-free.
DIVERGENCE_LIMIT = 1e50


@dataclass
class ExecTimeModel:
    """Gamma-distributed batch execution times.

    homogeneous: every draw comes from one gamma with mean `mean_time` and
    coefficient of variation v_mach. heterogeneous: each machine first draws
    its own mean p[j] (CV v_mach), then its batches vary around p[j] with CV
    v_task. constant: every draw equals the mean exactly (degenerate model
    for deterministic round-robin schedules).

    compound_homogeneous enables the two-level homogeneous draw (a fresh
    per-task mean q, then a time around q); its straggler tail (about 4.8%
    above 1.25x the mean) is far heavier than the 1% the single-level form
    produces, so it is off by default. use_raw_mu applies the literal
    mu = mean_time * v_mach**2 scaling instead of honoring the stated mean.
    """

    mode: str = "homogeneous"
    mean_time: float = 128.0
    v_task: float = 0.1
    v_mach: float | None = None
    compound_homogeneous: bool = False
    use_raw_mu: bool = False
    per_machine_mean: dict[int, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in ("homogeneous", "heterogeneous", "constant"):
            raise ValueError(f"unknown execution-time mode {self.mode!r}")
        if self.v_mach is None:
            self.v_mach = 0.6 if self.mode == "heterogeneous" else 0.1
        if self.mean_time <= 0 or self.v_task <= 0 or self.v_mach <= 0:
            raise ValueError("execution-time parameters must be positive")

    @property
    def effective_mean(self) -> float:
        if self.use_raw_mu:
            return self.mean_time * self.v_mach**2
        return self.mean_time

    def machine_mean(self, machine_id: int, rng: SeededRng) -> float:
        """Per-machine mean p[j], drawn once per run and fixed thereafter."""
        p = self.per_machine_mean.get(machine_id)
        if p is None:
            alpha = 1.0 / self.v_mach**2
            p = float(rng.gamma(alpha, self.effective_mean / alpha))
            self.per_machine_mean[machine_id] = p
        return p


def sample_exec_times(model: ExecTimeModel, machine_id: int, n: int,
                      rng: SeededRng) -> np.ndarray:
    """n batch execution times for one machine."""
    mu = model.effective_mean
    if model.mode == "constant":
        return np.full(n, mu)
    if model.mode == "homogeneous":
        a_mach = 1.0 / model.v_mach**2
        if model.compound_homogeneous:
            a_task = 1.0 / model.v_task**2
            q = rng.gamma(a_task, mu / a_task, size=n)
            return rng.gamma(a_mach, q / a_mach, size=n)
        return rng.gamma(a_mach, mu / a_mach, size=n)
    p = model.machine_mean(machine_id, rng)
    a_task = 1.0 / model.v_task**2
    return rng.gamma(a_task, p / a_task, size=n)


def sample_exec_time(model: ExecTimeModel, machine_id: int, rng: SeededRng) -> float:
    return float(sample_exec_times(model, machine_id, 1, rng)[0])


class Event:
    """Queue entry; pops in (time, sequence_no) order."""

    __slots__ = ("time", "worker_id", "sequence_no")

    def __init__(self, time: float, worker_id: int, sequence_no: int):
        self.time = time
        self.worker_id = worker_id
        self.sequence_no = sequence_no

    def __lt__(self, other: "Event") -> bool:
        return (self.time, self.sequence_no) < (other.time, other.sequence_no)

    def __repr__(self):
        return f"Event(time={self.time}, worker_id={self.worker_id}, seq={self.sequence_no})"


@dataclass
class Schedule:
    """Learning-rate schedule with linear warm-up and step decay."""

    base_eta: float = 0.1
    gamma: float = 0.9
    warmup_epochs: int = 5
    num_workers: int = 1
    decay_factor: float = 0.1
    decay_epochs: tuple = ()

    def __post_init__(self):
        self.decay_epochs = tuple(sorted(self.decay_epochs))
        if self.base_eta <= 0:
            raise ValueError("base learning rate must be positive")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("momentum coefficient must be in [0, 1)")


def lr_at(schedule: Schedule, epoch: float) -> float:
    """Learning rate at a (possibly fractional) epoch.

    Warm-up ramps linearly from base/N at epoch 0 to base at warmup_epochs;
    afterwards each passed decay epoch multiplies by decay_factor.
    """
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    n = schedule.num_workers
    if schedule.warmup_epochs > 0 and epoch < schedule.warmup_epochs:
        frac = epoch / schedule.warmup_epochs
        return schedule.base_eta * (1.0 / n + (1.0 - 1.0 / n) * frac)
    lr = schedule.base_eta
    for d in schedule.decay_epochs:
        if epoch >= d:
            lr *= schedule.decay_factor
    return lr


def momentum_correct(v, eta_old: float, eta_new: float):
    """Rescale momentum so the effective velocity eta * v stays continuous."""
    if eta_old <= 0 or eta_new <= 0:
        raise ValueError("learning rates must be positive")
    if eta_old == eta_new:
        return v
    return v * (eta_old / eta_new)


@dataclass
class MetricsRecord:
    """One CSV row: a master update, an evaluation point, or a divergence marker."""

    sim_time: float
    epoch: int
    step: int
    lag: int | None = None
    gap: float | None = None
    normalized_gap: float | None = None
    lr: float = 0.0
    train_loss: float | None = None
    eval_loss: float | None = None
    diverged: int = 0


@dataclass
class RunConfig:
    algorithm: str
    num_workers: int
    objective: Objective
    exec_model: ExecTimeModel
    schedule: Schedule
    batch_size: int
    epochs: int
    seed: int
    eval_objective: Objective | None = None
    lam: float = 2.0
    record_trace: bool = False


@dataclass
class RunResult:
    records: list
    diverged: bool
    final_params: np.ndarray
    final_train_loss: float | None
    final_eval_loss: float | None
    epoch_mean_gap: dict
    mean_lag: float
    end_time: float
    trace: dict | None = None


def _updates_per_epoch(num_samples: int, batch_size: int) -> int:
    return max(1, num_samples // batch_size)


def _finite(x: float) -> bool:
    return x is not None and math.isfinite(x)


def run_simulation(config: RunConfig) -> RunResult:
    """Run one experiment and return its per-update metrics.

    Event loop: every worker holds parameters and a batch; the earliest
    completion event delivers that worker's update to the master (FIFO,
    atomic), metrics are recorded, and the worker is re-dispatched with the
    master's reply, a fresh batch, and a fresh execution-time draw. One epoch
    is num_samples // batch_size master updates. A non-finite loss or
    parameter ends the run with a final diverged=1 row.
    """
    if config.algorithm not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {config.algorithm!r}")
    if config.num_workers < 1:
        raise ValueError("need at least one worker")
    if config.algorithm == "sequential_nag" and config.num_workers != 1:
        raise ValueError("sequential_nag runs with exactly one worker")
    if config.algorithm == "sequential_nag":
        return _run_sequential(config)
    return _run_async(config)


def _run_async(config: RunConfig) -> RunResult:
    obj = config.objective
    num_samples = obj.dataset.num_samples
    upe = _updates_per_epoch(num_samples, config.batch_size)
    total_updates = config.epochs * upe
    n = config.num_workers
    sched = config.schedule
    gamma = sched.gamma

    init_rng = SeededRng(config.seed, INIT_STREAM)
    theta_init = obj.init_params(init_rng)
    exec_rngs = [SeededRng(config.seed, EXEC_STREAM_BASE + i) for i in range(n)]
    batch_rngs = [SeededRng(config.seed, BATCH_STREAM_BASE + i) for i in range(n)]

    master = make_master(theta_init, lr_at(sched, 0.0), gamma, config.lam, range(n))
    master_op = MASTER_OPS[config.algorithm]
    slim = config.algorithm == "dana_slim"

    workers = [WorkerState(i, held_params=theta_init) for i in range(n)]
    retained = [theta_init for _ in range(n)]
    batches = [batch_rngs[i].integers(0, num_samples, config.batch_size) for i in range(n)]

    heap = []
    seq = itertools.count()
    for i in range(n):
        dt = sample_exec_time(config.exec_model, i, exec_rngs[i])
        heapq.heappush(heap, Event(dt, i, next(seq)))

    records: list[MetricsRecord] = []
    gap_sum: dict[int, float] = {}
    gap_cnt: dict[int, int] = {}
    lag_total = 0
    diverged = False
    now = 0.0
    trace = (
        {"theta": [], "aggregate": [], "eta": [], "replies": [], "worker_params": [],
         "payloads": []}
        if config.record_trace
        else None
    )

    def evaluate() -> float | None:
        if config.eval_objective is None:
            return None
        ev = config.eval_objective
        return ev.loss(master.theta0, np.arange(ev.dataset.num_samples))

    initial_eval = evaluate()
    if initial_eval is not None:
        records.append(MetricsRecord(0.0, 0, 0, lr=lr_at(sched, 0.0), eval_loss=initial_eval))

    with np.errstate(over="ignore", invalid="ignore", divide="ignore", under="ignore"):
        while heap and master.update_count < total_updates:
            event = heapq.heappop(heap)
            now = event.time
            i = event.worker_id
            w = workers[i]

            lr_now = lr_at(sched, master.update_count / upe)
            if lr_now != master.eta:
                rescale_momenta(master, master.eta / lr_now)
                master.eta = lr_now

            if slim:
                msg = worker_round_dana_slim(w, obj, batches[i], w.held_params, gamma, lr_now)
            else:
                msg = worker_round_asgd(w, obj, batches[i], w.held_params)

            tau = master.update_count - msg.dispatched_at
            gap_val = gap(master.theta0, retained[i])
            ngap = normalized_gap(gap_val, msg.grad_norm)
            if trace is not None:
                trace["worker_params"].append((i, w.held_params))
                trace["payloads"].append(msg.payload)

            reply = master_op(master, msg)
            step = master.update_count
            epoch_idx = (step - 1) // upe
            records.append(
                MetricsRecord(now, epoch_idx, step, tau, gap_val, ngap, lr_now,
                              msg.batch_loss)
            )
            gap_sum[epoch_idx] = gap_sum.get(epoch_idx, 0.0) + gap_val
            gap_cnt[epoch_idx] = gap_cnt.get(epoch_idx, 0) + 1
            lag_total += tau

            if trace is not None:
                trace["theta"].append(master.theta0)
                trace["aggregate"].append(master.aggregate_momentum)
                trace["eta"].append(lr_now)
                trace["replies"].append((i, reply))

            healthy = (
                _finite(msg.batch_loss)
                and bool(np.all(np.isfinite(master.theta0)))
                and float(np.max(np.abs(master.theta0))) < DIVERGENCE_LIMIT
            )
            eval_loss = None
            if healthy and step % upe == 0:
                eval_loss = evaluate()
                if eval_loss is not None:
                    records.append(
                        MetricsRecord(now, step // upe, step, lr=lr_now, eval_loss=eval_loss)
                    )
                    healthy = _finite(eval_loss)
            if not healthy:
                records.append(
                    MetricsRecord(now, epoch_idx, step, lr=lr_now, diverged=1)
                )
                diverged = True
                break

            w.held_params = reply
            retained[i] = reply
            w.dispatched_at = master.update_count
            batches[i] = batch_rngs[i].integers(0, num_samples, config.batch_size)
            dt = sample_exec_time(config.exec_model, i, exec_rngs[i])
            heapq.heappush(heap, Event(now + dt, i, next(seq)))

    return _finish(config, records, diverged, master.theta0, gap_sum, gap_cnt,
                   lag_total, now, trace)


def _run_sequential(config: RunConfig) -> RunResult:
    """Single-worker NAG baseline sharing the async loop's streams and metrics."""
    obj = config.objective
    num_samples = obj.dataset.num_samples
    upe = _updates_per_epoch(num_samples, config.batch_size)
    total_updates = config.epochs * upe
    sched = config.schedule

    init_rng = SeededRng(config.seed, INIT_STREAM)
    theta_init = obj.init_params(init_rng)
    exec_rng = SeededRng(config.seed, EXEC_STREAM_BASE)
    batch_rng = SeededRng(config.seed, BATCH_STREAM_BASE)

    state = OptState(theta_init, np.zeros_like(theta_init), lr_at(sched, 0.0), sched.gamma)
    records: list[MetricsRecord] = []
    gap_sum: dict[int, float] = {}
    gap_cnt: dict[int, int] = {}
    diverged = False
    now = 0.0
    trace = {"theta": [], "eta": []} if config.record_trace else None

    def evaluate(params) -> float | None:
        if config.eval_objective is None:
            return None
        ev = config.eval_objective
        return ev.loss(params, np.arange(ev.dataset.num_samples))

    initial_eval = evaluate(state.params)
    if initial_eval is not None:
        records.append(MetricsRecord(0.0, 0, 0, lr=lr_at(sched, 0.0), eval_loss=initial_eval))

    with np.errstate(over="ignore", invalid="ignore", divide="ignore", under="ignore"):
        for step_index in range(total_updates):
            lr_now = lr_at(sched, step_index / upe)
            if lr_now != state.eta:
                state = OptState(state.params, momentum_correct(state.momentum, state.eta, lr_now),
                                 lr_now, state.gamma)
            batch = batch_rng.integers(0, num_samples, config.batch_size)
            now += sample_exec_time(config.exec_model, 0, exec_rng)

            seen = {}

            def gradient_fn(theta_hat):
                loss, g = obj.loss_and_grad(theta_hat, batch)
                seen["loss"] = loss
                seen["theta_hat"] = theta_hat
                seen["grad_norm"] = l2_norm(g)
                return g

            prev_params = state.params
            state = nag_step(state, gradient_fn)
            gap_val = gap(prev_params, seen["theta_hat"])
            ngap = normalized_gap(gap_val, seen["grad_norm"])
            step = step_index + 1
            epoch_idx = (step - 1) // upe
            records.append(
                MetricsRecord(now, epoch_idx, step, 0, gap_val, ngap, lr_now, seen["loss"])
            )
            gap_sum[epoch_idx] = gap_sum.get(epoch_idx, 0.0) + gap_val
            gap_cnt[epoch_idx] = gap_cnt.get(epoch_idx, 0) + 1
            if trace is not None:
                trace["theta"].append(state.params)
                trace["eta"].append(lr_now)

            healthy = (
                _finite(seen["loss"])
                and bool(np.all(np.isfinite(state.params)))
                and float(np.max(np.abs(state.params))) < DIVERGENCE_LIMIT
            )
            eval_loss = None
            if healthy and step % upe == 0:
                eval_loss = evaluate(state.params)
                if eval_loss is not None:
                    records.append(
                        MetricsRecord(now, step // upe, step, lr=lr_now, eval_loss=eval_loss)
                    )
                    healthy = _finite(eval_loss)
            if not healthy:
                records.append(MetricsRecord(now, epoch_idx, step, lr=lr_now, diverged=1))
                diverged = True
                break

    return _finish(config, records, diverged, state.params, gap_sum, gap_cnt, 0, now, trace)


def _finish(config, records, diverged, params, gap_sum, gap_cnt, lag_total, now, trace):
    epoch_mean_gap = {e: gap_sum[e] / gap_cnt[e] for e in sorted(gap_sum)}
    update_rows = [r for r in records if r.lag is not None]
    eval_rows = [r for r in records if r.eval_loss is not None]
    return RunResult(
        records=records,
        diverged=diverged,
        final_params=params,
        final_train_loss=update_rows[-1].train_loss if update_rows else None,
        final_eval_loss=eval_rows[-1].eval_loss if eval_rows else None,
        epoch_mean_gap=epoch_mean_gap,
        mean_lag=lag_total / len(update_rows) if update_rows else 0.0,
        end_time=now,
        trace=trace,
    )


# --- theoretical async vs sync speedup -----------------------------------

def _mean_inverse_machine_time(model: ExecTimeModel) -> float:
    """Analytic E[1/p] over machines; the single-worker throughput."""
    if model.mode in ("homogeneous", "constant"):
        return 1.0 / model.effective_mean
    alpha = 1.0 / model.v_mach**2
    if alpha <= 1.0:
        raise ValueError("v_mach must be below 1 for a finite mean rate")
    beta = model.effective_mean / alpha
    return 1.0 / (beta * (alpha - 1.0))


def _speedup_tables(model: ExecTimeModel, worker_counts, num_iterations: int,
                    seed: int):
    """Async/sync speedups and sync per-iteration times, one pass.

    Per-worker draw streams plus running prefix maxima give common random
    numbers across worker counts, so the sync per-iteration time is exactly
    non-decreasing in N. Speedups are throughput relative to a single
    worker; N=1 is 1 by definition.
    """
    counts = sorted(set(int(c) for c in worker_counts))
    if counts[0] < 1:
        raise ValueError("worker counts must be at least 1")
    max_n = counts[-1]
    mu = model.effective_mean
    async_speedup: dict[int, float] = {}
    sync_speedup: dict[int, float] = {}
    iter_time: dict[int, float] = {}

    if model.mode == "constant":
        for c in counts:
            async_speedup[c] = float(c)
            sync_speedup[c] = float(c)
            iter_time[c] = mu
        return async_speedup, sync_speedup, iter_time

    if model.mode == "homogeneous":
        running = None
        for i in range(max_n):
            rng = SeededRng(seed, EXEC_STREAM_BASE + i)
            col = sample_exec_times(model, i, num_iterations, rng)
            running = col if running is None else np.maximum(running, col)
            n = i + 1
            if n in counts:
                mean_max = float(running.mean())
                iter_time[n] = mean_max
                async_speedup[n] = float(n)
                sync_speedup[n] = 1.0 if n == 1 else n * mu / mean_max
        return async_speedup, sync_speedup, iter_time

    # heterogeneous: outer Monte Carlo over clusters, inner over batches.
    # Worker throughputs 1/p[j] add, so async speedup is exactly N; only the
    # synchronous expectation E[max] needs sampling.
    clusters = max(200, num_iterations // 100)
    inner = max(10, num_iterations // clusters)
    e_inv = _mean_inverse_machine_time(model)
    a_mach = 1.0 / model.v_mach**2
    a_task = 1.0 / model.v_task**2
    running_max = None          # (clusters, inner) prefix max over machines
    for i in range(max_n):
        rng = SeededRng(seed, EXEC_STREAM_BASE + i)
        p = rng.gamma(a_mach, mu / a_mach, size=clusters)
        t = rng.gamma(a_task, (p * model.v_task**2)[:, None], size=(clusters, inner))
        running_max = t if running_max is None else np.maximum(running_max, t)
        n = i + 1
        if n in counts:
            per_cluster_mean_max = running_max.mean(axis=1)
            iter_time[n] = float(per_cluster_mean_max.mean())
            async_speedup[n] = float(n)
            sync_speedup[n] = (
                1.0 if n == 1 else float((n / per_cluster_mean_max).mean() / e_inv)
            )
    return async_speedup, sync_speedup, iter_time


def speedup_table(model: ExecTimeModel, worker_counts, paradigm: str,
                  num_iterations: int = 100_000, seed: int = 0) -> dict[int, float]:
    """Speedup over a single worker for each worker count."""
    if paradigm not in ("async", "sync"):
        raise ValueError(f"unknown paradigm {paradigm!r}")
    a, s, _ = _speedup_tables(model, worker_counts, num_iterations, seed)
    return a if paradigm == "async" else s


def sync_iteration_times(model: ExecTimeModel, worker_counts,
                         num_iterations: int = 100_000, seed: int = 0) -> dict[int, float]:
    """Monte-Carlo mean time of one synchronous iteration (max over workers)."""
    _, _, t = _speedup_tables(model, worker_counts, num_iterations, seed)
    return t


def speedup_model(num_workers: int, model: ExecTimeModel, paradigm: str,
                  num_iterations: int = 100_000, seed: int = 0) -> float:
    """Throughput of N workers relative to one, async or sync."""
    return speedup_table(model, [num_workers], paradigm, num_iterations, seed)[num_workers]
