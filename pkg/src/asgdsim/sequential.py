"""Sequential (single-worker) update rules: SGD, momentum, NAG, Bengio-NAG.

All steps are pure functions returning a fresh OptState. The NAG step
computes the new parameters from the look-ahead point, so the identity
theta' - theta_hat = -eta * g holds exactly, bit for bit.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .vectors import ParamVector, check_same_dim


@dataclass
class OptState:
    """Parameters, momentum buffer, and the (eta, gamma) hyperparameters."""

    params: ParamVector
    momentum: ParamVector
    eta: float
    gamma: float

    def __post_init__(self):
        self.params = np.asarray(self.params, dtype=np.float64)
        self.momentum = np.asarray(self.momentum, dtype=np.float64)
        check_same_dim(self.params, self.momentum)
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("momentum coefficient must be in [0, 1)")
        if not self.eta > 0.0:
            raise ValueError("learning rate must be positive")


def make_state(params, eta: float, gamma: float = 0.0) -> OptState:
    params = np.asarray(params, dtype=np.float64)
    return OptState(params, np.zeros_like(params), eta, gamma)


def sgd_step(state: OptState, g: ParamVector) -> OptState:
    """theta' = theta - eta * g; momentum untouched."""
    check_same_dim(state.params, g)
    return OptState(state.params - state.eta * g, state.momentum, state.eta, state.gamma)


def momentum_step(state: OptState, g: ParamVector) -> OptState:
    """v' = gamma * v + g; theta' = theta - eta * v'."""
    check_same_dim(state.params, g)
    v = state.gamma * state.momentum + g
    return OptState(state.params - state.eta * v, v, state.eta, state.gamma)


def nag_step(state: OptState, gradient_fn: Callable[[ParamVector], ParamVector]) -> OptState:
    """Nesterov step: gradient taken at the look-ahead point.

    theta_hat = theta - eta * gamma * v
    g = gradient_fn(theta_hat)
    v' = gamma * v + g
    theta' = theta_hat - eta * g   (equal to theta - eta * v')
    """
    theta_hat = state.params - state.eta * state.gamma * state.momentum
    g = np.asarray(gradient_fn(theta_hat), dtype=np.float64)
    check_same_dim(state.params, g)
    v = state.gamma * state.momentum + g
    return OptState(theta_hat - state.eta * g, v, state.eta, state.gamma)


def bengio_nag_step(state: OptState, gradient_fn: Callable[[ParamVector], ParamVector]) -> OptState:
    """Bengio's reformulation: gradient computed on and applied to Theta.

    g = gradient_fn(Theta); v' = gamma * v + g; Theta' = Theta - eta * (gamma * v' + g).
    The trajectory tracks NAG via Theta_t = theta_t - eta * gamma * v_t.
    """
    g = np.asarray(gradient_fn(state.params), dtype=np.float64)
    check_same_dim(state.params, g)
    v = state.gamma * state.momentum + g
    step = state.eta * (state.gamma * v + g)
    return OptState(state.params - step, v, state.eta, state.gamma)
