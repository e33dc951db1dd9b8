"""Acceptance suite: the package's load-bearing guarantees, one test per claim.

Each test prints a single PASS/FAIL line with the measured quantities (visible
under pytest -s or in failure output); the assertions enforce the stated
tolerances. Configurations are pinned so every run is deterministic.
"""
import time

import numpy as np
import pytest

from asgdsim import (
    MASTER_OPS,
    Dataset,
    ExecTimeModel,
    LogisticObjective,
    MlpObjective,
    QuadraticObjective,
    RunConfig,
    Schedule,
    SeededRng,
    UpdateMessage,
    fd_grad,
    gen_synthetic,
    lipschitz_check,
    make_master,
    run_simulation,
    sample_exec_times,
    speedup_model,
    sync_iteration_times,
)
from asgdsim.cli import parse_config, run_experiment


def _report(num, name, ok, detail):
    line = f"criterion {num:02d} {name}: {'PASS' if ok else 'FAIL'} ({detail})"
    print(line)
    assert ok, line


def noisy_quadratic(dim=4, num_samples=320, seed=7, lo=0.2, hi=1.0):
    """Quadratic whose minimum sits at the feature mean; mini-batch means
    jitter around it, so gradients stay noisy at the optimum."""
    rng = SeededRng(seed, 50)
    features = rng.normal(loc=2.0, scale=1.0, size=(num_samples, dim))
    ds = Dataset(features, np.zeros(num_samples, dtype=np.int64))
    return QuadraticObjective(dataset=ds, eigenvalues=tuple(np.linspace(lo, hi, dim)))


def make_config(algorithm, n, obj, *, eta=0.05, gamma=0.9, warmup=0, epochs=2,
                batch=32, mode="constant", decay=(), seed=0, trace=False,
                eval_objective=None):
    return RunConfig(
        algorithm=algorithm,
        num_workers=n,
        objective=obj,
        exec_model=ExecTimeModel(mode=mode, mean_time=float(batch)),
        schedule=Schedule(base_eta=eta, gamma=gamma, warmup_epochs=warmup,
                          num_workers=n, decay_epochs=decay),
        batch_size=batch,
        epochs=epochs,
        seed=seed,
        record_trace=trace,
        eval_objective=eval_objective,
    )


def test_criterion_01_nag_equivalence():
    # single-worker look-ahead loop == sequential NAG, step for step
    t0 = time.perf_counter()
    obj = noisy_quadratic()
    seq = run_simulation(make_config("sequential_nag", 1, obj, epochs=100, trace=True))
    fused = run_simulation(make_config("dana_zero", 1, obj, epochs=100, trace=True))
    assert len(seq.trace["theta"]) == len(fused.trace["theta"]) == 1000
    quad_abs = max(float(np.max(np.abs(a - b)))
                   for a, b in zip(seq.trace["theta"], fused.trace["theta"]))

    ds = gen_synthetic(SeededRng(0, 0), 320, 4, 3, 2.5)
    mlp = MlpObjective(ds, 3, hidden=8)
    seq = run_simulation(make_config("sequential_nag", 1, mlp, epochs=100, trace=True))
    fused = run_simulation(make_config("dana_zero", 1, mlp, epochs=100, trace=True))
    mlp_rel = max(float(np.max(np.abs(a - b) / np.maximum(np.abs(b), 1e-12)))
                  for a, b in zip(seq.trace["theta"], fused.trace["theta"]))
    elapsed = time.perf_counter() - t0
    _report(1, "nag-equivalence",
            quad_abs <= 1e-12 and mlp_rel <= 1e-9 and elapsed < 5.0,
            f"quad max abs {quad_abs:.2e}, mlp max rel {mlp_rel:.2e}, {elapsed:.1f}s")


def test_criterion_02_slim_zero_equivalence():
    # the overhead-free variant's stored params differ from the look-ahead
    # master's by exactly eta * gamma * (momentum sum), at every update, and
    # both variants hand workers identical parameters
    t0 = time.perf_counter()
    worst_theta = 0.0
    worst_wp = 0.0
    ids_match = True
    for n in (2, 8, 16):
        obj = noisy_quadratic(num_samples=256)
        zero = run_simulation(make_config("dana_zero", n, obj, mode="homogeneous",
                                          warmup=5, epochs=8, trace=True))
        slim = run_simulation(make_config("dana_slim", n, obj, mode="homogeneous",
                                          warmup=5, epochs=8, trace=True))
        for th_s, th_z, agg, eta in zip(slim.trace["theta"], zero.trace["theta"],
                                        zero.trace["aggregate"], zero.trace["eta"]):
            want = th_z - eta * 0.9 * agg
            scale = max(1.0, float(np.max(np.abs(want))))
            worst_theta = max(worst_theta, float(np.max(np.abs(th_s - want))) / scale)
        for (i, pa), (j, pb) in zip(slim.trace["worker_params"],
                                    zero.trace["worker_params"]):
            ids_match = ids_match and i == j
            scale = max(1.0, float(np.max(np.abs(pb))))
            worst_wp = max(worst_wp, float(np.max(np.abs(pa - pb))) / scale)
    elapsed = time.perf_counter() - t0
    _report(2, "slim-zero-equivalence",
            worst_theta <= 1e-9 and worst_wp <= 1e-9 and ids_match and elapsed < 30.0,
            f"theta rel {worst_theta:.2e}, worker-param rel {worst_wp:.2e}, "
            f"ids match {ids_match}, {elapsed:.1f}s")


def test_criterion_03_gap_theorem():
    # under round-robin the realized distance between the parameters a reply
    # predicted and the master at the gradient's return equals minus eta times
    # the raw gradients applied in between: look-ahead leaves only the
    # gradient part of the gap
    obj = noisy_quadratic(num_samples=256)
    n = 8
    result = run_simulation(make_config("dana_zero", n, obj, epochs=127, trace=True))
    theta = result.trace["theta"]
    replies = result.trace["replies"]
    payloads = result.trace["payloads"]
    eta = result.trace["eta"][0]
    assert all(e == eta for e in result.trace["eta"])
    worst = 0.0
    windows = 0
    for u in range(len(theta) - n):
        lhs = theta[u + n] - replies[u][1]
        rhs = -eta * sum(payloads[m] for m in range(u + 1, u + n + 1))
        worst = max(worst, float(np.linalg.norm(lhs - rhs) / np.linalg.norm(rhs)))
        windows += 1
    _report(3, "gap-theorem", windows >= 1000 and worst <= 1e-9,
            f"{windows} windows, max rel {worst:.2e}")


def test_criterion_04_aggregate_identity():
    # O(1)-maintained momentum sum vs a fresh full sum after 1e5 updates
    op = MASTER_OPS["dana_zero"]
    rng = np.random.default_rng(0)
    m = make_master(np.zeros(8), eta=0.01, gamma=0.9, lam=2.0, worker_ids=range(32))
    for _ in range(100_000):
        wid = int(rng.integers(0, 32))
        op(m, UpdateMessage(wid, rng.normal(size=8), dispatched_at=m.update_count))
    full = sum(m.per_worker_momentum.values())
    drift = float(np.max(np.abs(m.aggregate_momentum - full)))
    _report(4, "aggregate-identity", drift <= 1e-12,
            f"max abs drift {drift:.2e} after 1e5 updates, 32 workers")


def test_criterion_05_gamma_model_statistics():
    t0 = time.perf_counter()
    homo = ExecTimeModel(mode="homogeneous", mean_time=128.0)
    draws = sample_exec_times(homo, 0, 1_000_000, SeededRng(0, 100))
    homo_mean = float(draws.mean())
    homo_tail = float((draws > 160.0).mean())

    hetero = ExecTimeModel(mode="heterogeneous", mean_time=128.0)
    rng = SeededRng(0, 100)
    chunks = [sample_exec_times(hetero, j, 50, rng) for j in range(20_000)]
    draws = np.concatenate(chunks)
    het_mean = float(draws.mean())
    het_tail = float((draws > 160.0).mean())
    elapsed = time.perf_counter() - t0
    ok = (
        abs(homo_mean - 128.0) / 128.0 <= 0.01
        and 0.005 <= homo_tail <= 0.015
        and abs(het_mean - 128.0) / 128.0 <= 0.01
        and 0.264 <= het_tail <= 0.294
        and elapsed < 10.0
    )
    _report(5, "gamma-model-statistics", ok,
            f"homo mean {homo_mean:.2f} tail {homo_tail:.4f}, "
            f"hetero mean {het_mean:.2f} tail {het_tail:.4f}, {elapsed:.1f}s")


def test_criterion_06_speedup_model():
    t0 = time.perf_counter()
    grid = [1, 2, 4, 8, 16, 32, 64]
    linear_ok = True
    iter_mono_ok = True
    ratios = {}
    for mode in ("homogeneous", "heterogeneous"):
        model = ExecTimeModel(mode=mode, mean_time=128.0)
        column = []
        for n in grid:
            a = speedup_model(n, model, "async", 100_000, seed=0)
            s = speedup_model(n, model, "sync", 100_000, seed=0)
            linear_ok = linear_ok and abs(a - n) / n <= 0.02
            column.append(a / s)
        ratios[mode] = column
        times = sync_iteration_times(model, grid, 100_000, seed=0)
        iter_mono_ok = iter_mono_ok and all(
            times[grid[i]] <= times[grid[i + 1]] for i in range(len(grid) - 1)
        )
    homo64 = ratios["homogeneous"][-1]
    het64 = ratios["heterogeneous"][-1]
    het_increasing = all(ratios["heterogeneous"][i] < ratios["heterogeneous"][i + 1]
                         for i in range(len(grid) - 1))
    elapsed = time.perf_counter() - t0
    ok = (
        linear_ok and iter_mono_ok
        and 1.10 <= homo64 <= 1.30
        and het64 >= 3.0 and het_increasing
        and elapsed < 60.0
    )
    _report(6, "speedup-model", ok,
            f"async linear {linear_ok}, sync monotone {iter_mono_ok}, "
            f"ratio@64 homo {homo64:.3f} hetero {het64:.3f}, {elapsed:.1f}s")


def test_criterion_07_gap_ordering():
    # post-warmup epoch-mean gap: look-ahead < per-worker momentum < lag
    # extrapolation < shared momentum, and look-ahead within 2x of plain asgd
    def mean_post_warmup_gap(algorithm, seed):
        obj = QuadraticObjective(
            dataset=Dataset(
                SeededRng(7, 50).normal(loc=2.0, scale=1.0, size=(1024, 20)),
                np.zeros(1024, dtype=np.int64),
            ),
            eigenvalues=tuple(np.linspace(0.02, 0.33, 20)),
        )
        cfg = make_config(algorithm, 8, obj, eta=0.1, warmup=5, epochs=20,
                          batch=128, mode="homogeneous", seed=seed)
        result = run_simulation(cfg)
        assert not result.diverged, (algorithm, seed)
        vals = [g for e, g in result.epoch_mean_gap.items() if e >= 5]
        return float(np.mean(vals))

    passes = 0
    details = []
    for seed in (0, 1, 2):
        g = {a: mean_post_warmup_gap(a, seed)
             for a in ("dana_zero", "multi_asgd", "lwp", "nag_asgd", "asgd")}
        ordered = g["dana_zero"] < g["multi_asgd"] < g["lwp"] < g["nag_asgd"]
        close_to_asgd = g["dana_zero"] <= 2.0 * g["asgd"]
        passes += ordered and close_to_asgd
        details.append(
            f"seed {seed}: dana {g['dana_zero']:.3f} multi {g['multi_asgd']:.3f} "
            f"lwp {g['lwp']:.3f} nag {g['nag_asgd']:.3f} asgd {g['asgd']:.3f}"
        )
    _report(7, "gap-ordering", passes >= 2, f"{passes}/3 seeds; " + "; ".join(details))


def test_criterion_08_scaling_ordering():
    t0 = time.perf_counter()
    train = gen_synthetic(SeededRng(0, 0), 2048, 16, 4, 3.0)
    eval_ds = gen_synthetic(SeededRng(0, 1), 512, 16, 4, 3.0)

    def mean_final_loss(algorithm, n):
        losses = []
        for seed in (0, 1, 2):
            obj = LogisticObjective(train, 4, weight_decay=0.01)
            cfg = make_config(algorithm, n, obj, eta=0.08, warmup=10,
                              decay=(25, 32), epochs=40, batch=64,
                              mode="homogeneous", seed=seed,
                              eval_objective=obj.with_dataset(eval_ds, weight_decay=0.0))
            result = run_simulation(cfg)
            losses.append(np.inf if result.diverged else result.final_eval_loss)
        return float(np.mean(losses))

    dana = {n: mean_final_loss("dana_slim", n) for n in (1, 8, 16, 32)}
    nag = {n: mean_final_loss("nag_asgd", n) for n in (1, 8, 16, 32)}
    elapsed = time.perf_counter() - t0

    within_5pct = all(abs(dana[n] - dana[1]) / dana[1] <= 0.05 for n in (8, 16))
    beats_nag = dana[16] < nag[16] and dana[32] < nag[32]
    nag_degrades = nag[1] < nag[8] < nag[16] < nag[32]
    ok = within_5pct and beats_nag and nag_degrades and elapsed < 300.0
    _report(8, "scaling-ordering", ok,
            f"dana {dana[1]:.4f}/{dana[8]:.4f}/{dana[16]:.4f}/{dana[32]:.4f}, "
            f"nag {nag[1]:.4f}/{nag[8]:.4f}/{nag[16]:.4f}/{nag[32]:.4f}, {elapsed:.0f}s")


def test_criterion_09_gradient_correctness():
    quad = QuadraticObjective(dim=5, eigenvalues=(0.2, 0.5, 1.0, 2.0, 4.0))
    logistic = LogisticObjective(gen_synthetic(SeededRng(0, 0), 240, 6, 3, 3.0), 3)
    mlp = MlpObjective(gen_synthetic(SeededRng(0, 0), 200, 4, 3, 2.5), 3, hidden=8)
    worst = {}
    for name, obj in (("quadratic", quad), ("logistic", logistic), ("mlp", mlp)):
        rng = np.random.default_rng(0)
        batch = np.arange(min(64, obj.dataset.num_samples))
        err = 0.0
        for _ in range(100):
            theta = 0.5 * rng.normal(size=obj.dim)
            analytic = obj.grad(theta, batch)
            fd = fd_grad(obj, theta, batch, h=1e-6)
            err = max(err, float(np.linalg.norm(fd - analytic) / np.linalg.norm(analytic)))
        worst[name] = err
    ok = all(v < 1e-5 for v in worst.values())
    _report(9, "gradient-correctness", ok,
            ", ".join(f"{k} {v:.2e}" for k, v in worst.items()))


def test_criterion_10_lipschitz_gap_bound():
    obj = noisy_quadratic(dim=4, num_samples=256, lo=0.2, hi=2.0)
    cfg = make_config("dana_zero", 8, obj, mode="homogeneous", epochs=20, trace=True)
    result = run_simulation(cfg)
    points = list(result.trace["theta"]) + [p for _, p in result.trace["worker_params"]]
    batch = np.arange(256)
    grads = [obj.grad(p, batch) for p in points]
    idx = np.random.default_rng(0).integers(0, len(points), size=(10_000, 2))
    trajectory = ((points[i], points[j], grads[i], grads[j]) for i, j in idx)
    report = lipschitz_check(trajectory, obj.lipschitz_constant)
    ok = report["num_pairs"] == 10_000 and report["violations"] == 0
    _report(10, "lipschitz-gap-bound", ok,
            f"{report['num_pairs']} pairs, {report['violations']} violations, "
            f"max ratio {report['max_ratio']:.4f}")


def test_criterion_11_determinism(tmp_path):
    text = """
algorithms: [dana_dc, dana_slim]
workers: [4]
seeds: [0, 1]
batch_size: 32
epochs: 2
objective: {kind: quadratic}
data: {num_samples: 128, dim: 4}
exec_model: {mode: heterogeneous}
"""
    cfg = parse_config(text)
    assert run_experiment(cfg, str(tmp_path / "a")) == 0
    assert run_experiment(cfg, str(tmp_path / "b")) == 0
    names = sorted(p.name for p in (tmp_path / "a").iterdir() if p.suffix == ".csv")
    assert len(names) == 4
    identical = all(
        (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        for name in names
    )
    _report(11, "determinism", identical,
            f"{len(names)} CSV files byte-identical across reruns")
