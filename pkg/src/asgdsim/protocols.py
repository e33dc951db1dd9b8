"""Master and worker logic for every parameter-server algorithm.

Masters process one UpdateMessage at a time (the event loop guarantees FIFO
atomicity), mutate their MasterState, and return the parameter vector sent
back to the worker. Parameter vectors handed out or stored are never mutated
in place afterwards, so held references stay valid.

Master variants:
  asgd        theta -= eta * g, reply theta
  nag_asgd    one shared momentum buffer
  multi       one momentum buffer per worker
  dc          per-worker momentum + Taylor delay compensation of g
  lwp         shared momentum, reply extrapolated by the expected lag
  dana_zero   per-worker momentum, reply extrapolated by all momenta
  dana_dc     dana_zero update on a delay-compensated gradient

Worker variants:
  asgd        payload is the raw batch gradient
  dana_slim   payload is gamma * v + g with a worker-local momentum buffer;
              pairs with the plain asgd master
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .vectors import ParamVector, check_same_dim, l2_norm

LWP_LAG_WINDOW = 32


@dataclass
class UpdateMessage:
    """Worker to master payload with lag bookkeeping.

    grad_norm and batch_loss ride along for metrics only; for DANA-Slim the
    payload is not the raw gradient, so the norm cannot be recovered from it.
    """

    worker_id: int
    payload: ParamVector
    dispatched_at: int
    grad_norm: float = math.nan
    batch_loss: float = math.nan


@dataclass
class MasterState:
    theta0: ParamVector
    eta: float
    gamma: float
    lam: float
    per_worker_momentum: dict[int, ParamVector]
    aggregate_momentum: ParamVector
    shared_momentum: ParamVector
    last_sent: dict[int, ParamVector]
    update_count: int = 0
    lag_window: dict[int, deque] = field(default_factory=dict)


def make_master(theta0: ParamVector, eta: float, gamma: float, lam: float,
                worker_ids) -> MasterState:
    """Fresh master: zero momenta, last_sent primed with the initial theta."""
    theta0 = np.asarray(theta0, dtype=np.float64)
    ids = list(worker_ids)
    return MasterState(
        theta0=theta0,
        eta=float(eta),
        gamma=float(gamma),
        lam=float(lam),
        per_worker_momentum={i: np.zeros_like(theta0) for i in ids},
        aggregate_momentum=np.zeros_like(theta0),
        shared_momentum=np.zeros_like(theta0),
        last_sent={i: theta0 for i in ids},
        update_count=0,
        lag_window={i: deque(maxlen=LWP_LAG_WINDOW) for i in ids},
    )


def _begin_update(m: MasterState, msg: UpdateMessage) -> int:
    if msg.worker_id not in m.per_worker_momentum:
        raise ValueError(f"unknown worker id {msg.worker_id}")
    check_same_dim(m.theta0, msg.payload)
    lag = m.update_count - msg.dispatched_at
    if lag < 0:
        raise ValueError("message dispatched in the future; schedule corrupted")
    m.lag_window[msg.worker_id].append(lag)
    return lag


def update_aggregate(m: MasterState, worker_id: int, v_old: ParamVector,
                     v_new: ParamVector) -> MasterState:
    """Incremental v0 <- v0 - v_old + v_new; cost independent of worker count."""
    check_same_dim(v_old, v_new)
    check_same_dim(m.aggregate_momentum, v_new)
    m.aggregate_momentum = (m.aggregate_momentum - v_old) + v_new
    return m


def master_apply_asgd(m: MasterState, msg: UpdateMessage) -> ParamVector:
    _begin_update(m, msg)
    m.theta0 = m.theta0 - m.eta * msg.payload
    m.update_count += 1
    return m.theta0


def master_apply_nag_asgd(m: MasterState, msg: UpdateMessage) -> ParamVector:
    _begin_update(m, msg)
    v = m.gamma * m.shared_momentum + msg.payload
    m.shared_momentum = v
    m.theta0 = m.theta0 - m.eta * v
    m.update_count += 1
    return m.theta0


def master_apply_multi(m: MasterState, msg: UpdateMessage) -> ParamVector:
    _begin_update(m, msg)
    i = msg.worker_id
    v_old = m.per_worker_momentum[i]
    v_new = m.gamma * v_old + msg.payload
    m.per_worker_momentum[i] = v_new
    update_aggregate(m, i, v_old, v_new)
    m.theta0 = m.theta0 - m.eta * v_new
    m.update_count += 1
    return m.theta0


def _compensated(m: MasterState, msg: UpdateMessage) -> ParamVector:
    # g_hat = g + lambda * g (.) g (.) (theta_now - theta_sent), Taylor correction
    # toward the parameters the gradient was actually computed on.
    g = msg.payload
    diff = m.theta0 - m.last_sent[msg.worker_id]
    return g + m.lam * g * g * diff


def master_apply_dc(m: MasterState, msg: UpdateMessage) -> ParamVector:
    _begin_update(m, msg)
    i = msg.worker_id
    g_hat = _compensated(m, msg)
    v_old = m.per_worker_momentum[i]
    v_new = m.gamma * v_old + g_hat
    m.per_worker_momentum[i] = v_new
    update_aggregate(m, i, v_old, v_new)
    m.theta0 = m.theta0 - m.eta * v_new
    m.update_count += 1
    m.last_sent[i] = m.theta0
    return m.theta0


def master_apply_lwp(m: MasterState, msg: UpdateMessage) -> ParamVector:
    _begin_update(m, msg)
    v = m.gamma * m.shared_momentum + msg.payload
    m.shared_momentum = v
    m.theta0 = m.theta0 - m.eta * v
    m.update_count += 1
    # The true future lag is unknowable at dispatch; use the running mean of
    # this worker's observed lags as the expectation.
    window = m.lag_window[msg.worker_id]
    tau = sum(window) / len(window)
    return m.theta0 - tau * m.eta * v


def master_apply_dana_zero(m: MasterState, msg: UpdateMessage) -> ParamVector:
    _begin_update(m, msg)
    i = msg.worker_id
    v_old = m.per_worker_momentum[i]
    v_new = m.gamma * v_old + msg.payload
    m.per_worker_momentum[i] = v_new
    update_aggregate(m, i, v_old, v_new)
    m.theta0 = m.theta0 - m.eta * v_new
    m.update_count += 1
    return m.theta0 - m.eta * m.gamma * m.aggregate_momentum


def master_apply_dana_dc(m: MasterState, msg: UpdateMessage) -> ParamVector:
    _begin_update(m, msg)
    i = msg.worker_id
    g_hat = _compensated(m, msg)
    v_old = m.per_worker_momentum[i]
    v_new = m.gamma * v_old + g_hat
    m.per_worker_momentum[i] = v_new
    update_aggregate(m, i, v_old, v_new)
    m.theta0 = m.theta0 - m.eta * v_new
    m.update_count += 1
    reply = m.theta0 - m.eta * m.gamma * m.aggregate_momentum
    m.last_sent[i] = reply
    return reply


def rescale_momenta(m: MasterState, factor: float) -> None:
    """Momentum correction hook: scale every buffer when the lr changes."""
    for i, v in m.per_worker_momentum.items():
        m.per_worker_momentum[i] = v * factor
    m.aggregate_momentum = m.aggregate_momentum * factor
    m.shared_momentum = m.shared_momentum * factor


@dataclass
class WorkerState:
    worker_id: int
    local_momentum: ParamVector | None = None
    held_params: ParamVector | None = None
    dispatched_at: int = 0
    momentum_lr: float | None = None


def worker_round_asgd(w: WorkerState, objective, batch,
                      received: ParamVector) -> UpdateMessage:
    """Plain gradient worker: payload is grad at the received parameters."""
    loss, g = objective.loss_and_grad(received, batch)
    return UpdateMessage(w.worker_id, g, w.dispatched_at, l2_norm(g), loss)


def worker_round_dana_slim(w: WorkerState, objective, batch, received: ParamVector,
                           gamma: float, eta: float) -> UpdateMessage:
    """Momentum-carrying worker: sends gamma * v + g, momentum kept locally.

    The buffer is rescaled lazily when the learning rate moved since the last
    round (momentum correction); the factors telescope to the same product an
    eager per-change rescale would apply.
    """
    loss, g = objective.loss_and_grad(received, batch)
    if w.local_momentum is None:
        w.local_momentum = np.zeros_like(g)
    if w.momentum_lr is not None and w.momentum_lr != eta:
        w.local_momentum = w.local_momentum * (w.momentum_lr / eta)
    w.momentum_lr = eta
    v = gamma * w.local_momentum + g
    w.local_momentum = v
    payload = gamma * v + g
    return UpdateMessage(w.worker_id, payload, w.dispatched_at, l2_norm(g), loss)


MASTER_OPS = {
    "asgd": master_apply_asgd,
    "nag_asgd": master_apply_nag_asgd,
    "multi_asgd": master_apply_multi,
    "dc_asgd": master_apply_dc,
    "lwp": master_apply_lwp,
    "dana_zero": master_apply_dana_zero,
    "dana_dc": master_apply_dana_dc,
    "dana_slim": master_apply_asgd,
}
