"""Staleness instrumentation: lag, gap, normalized gap, Lipschitz bound check.

The gap measures how far the master's parameters moved while a gradient was
in flight: the RMSE distance between the parameters the gradient is applied
to and the parameters it was computed on.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from .vectors import ParamVector, check_same_dim, l2_norm


@dataclass
class GapSample:
    step: int
    tau: int
    gap: float
    normalized_gap: float
    grad_norm: float


def gap(master_params: ParamVector, worker_params: ParamVector) -> float:
    """RMSE distance ||master - worker||_2 / sqrt(k)."""
    check_same_dim(master_params, worker_params)
    k = master_params.shape[0]
    return l2_norm(master_params - worker_params) / math.sqrt(k)


def normalized_gap(gap_value: float, grad_norm: float) -> float:
    """Gap divided by the gradient norm; NaN marks an undefined sample."""
    if grad_norm <= 0.0 or math.isnan(grad_norm):
        return math.nan
    return gap_value / grad_norm


def lag(dispatched_at: int, current_update_count: int) -> int:
    """Master updates applied while the worker was computing."""
    if current_update_count < dispatched_at:
        raise ValueError("update counter ran backwards; schedule corrupted")
    return current_update_count - dispatched_at


def lipschitz_check(trajectory, lipschitz_constant: float) -> dict:
    """Verify ||grad(a) - grad(b)|| <= L * sqrt(k) * gap(a, b) over pairs.

    trajectory yields (theta_a, theta_b, grad_a, grad_b) tuples. A tiny
    relative slack absorbs floating-point rounding at equality; with an exact
    L the violation count must be zero.
    """
    num_pairs = 0
    violations = 0
    max_ratio = 0.0
    for theta_a, theta_b, grad_a, grad_b in trajectory:
        check_same_dim(theta_a, theta_b)
        check_same_dim(grad_a, grad_b)
        k = theta_a.shape[0]
        lhs = l2_norm(grad_a - grad_b)
        rhs = lipschitz_constant * math.sqrt(k) * gap(theta_a, theta_b)
        num_pairs += 1
        if lhs > rhs * (1.0 + 1e-12):
            violations += 1
        if rhs > 0.0:
            max_ratio = max(max_ratio, lhs / rhs)
    return {
        "num_pairs": num_pairs,
        "violations": violations,
        "violation_fraction": violations / num_pairs if num_pairs else 0.0,
        "max_ratio": max_ratio,
    }
