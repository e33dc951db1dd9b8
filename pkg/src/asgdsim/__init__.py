"""Deterministic parameter-server ASGD simulator and optimizer library.

Modules:
  vectors     dense float64 vector ops and seeded RNG streams
  objectives  quadratic / logistic / MLP objectives, synthetic data
  sequential  SGD, momentum, NAG, Bengio-NAG single-worker steps
  protocols   master and worker logic for every distributed algorithm
  staleness   lag, gap, normalized gap, Lipschitz bound checking
  simulation  execution-time model, event loop, schedules, speedup model
  cli         config files, sweep runner, CSV metrics
"""
from .objectives import (
    Dataset,
    LogisticObjective,
    MlpObjective,
    Objective,
    QuadraticObjective,
    fd_grad,
    gen_synthetic,
    load_csv,
)
from .protocols import (
    MASTER_OPS,
    MasterState,
    UpdateMessage,
    WorkerState,
    make_master,
    master_apply_asgd,
    master_apply_dana_dc,
    master_apply_dana_zero,
    master_apply_dc,
    master_apply_lwp,
    master_apply_multi,
    master_apply_nag_asgd,
    rescale_momenta,
    update_aggregate,
    worker_round_asgd,
    worker_round_dana_slim,
)
from .sequential import OptState, bengio_nag_step, make_state, momentum_step, nag_step, sgd_step
from .simulation import (
    ALGORITHMS,
    Event,
    ExecTimeModel,
    MetricsRecord,
    RunConfig,
    RunResult,
    Schedule,
    lr_at,
    momentum_correct,
    run_simulation,
    sample_exec_time,
    sample_exec_times,
    speedup_model,
    speedup_table,
    sync_iteration_times,
)
from .staleness import GapSample, gap, lag, lipschitz_check, normalized_gap
from .vectors import ParamVector, SeededRng, gamma_draw, l2_norm, linear_combine, param_vector

__version__ = "0.1.0"
