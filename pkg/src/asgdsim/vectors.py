"""Dense parameter-vector arithmetic and seeded random number generation.

Parameter vectors are plain 1-D float64 numpy arrays. Every operation here
validates dimensions, works element-wise in fixed order, and never mutates
its inputs, so results are reproducible bit-for-bit across runs.
"""
from __future__ import annotations

import math

import numpy as np

ParamVector = np.ndarray


def param_vector(values) -> ParamVector:
    """Build a finite 1-D float64 vector from any sequence of numbers."""
    x = np.asarray(values, dtype=np.float64)
    if x.ndim != 1:
        x = x.reshape(-1)
    if not np.all(np.isfinite(x)):
        raise ValueError("parameter vector contains NaN or Inf")
    return x


def zeros_like(x: ParamVector) -> ParamVector:
    return np.zeros(x.shape[0], dtype=np.float64)


def check_same_dim(x: ParamVector, y: ParamVector) -> None:
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")


def ensure_finite(x: ParamVector, what: str = "vector") -> ParamVector:
    if not np.all(np.isfinite(x)):
        raise FloatingPointError(f"{what} contains NaN or Inf")
    return x


def linear_combine(a: float, x: ParamVector, b: float, y: ParamVector) -> ParamVector:
    """Element-wise a*x + b*y. Inputs are left unmodified."""
    check_same_dim(x, y)
    if not (math.isfinite(a) and math.isfinite(b)):
        raise ValueError("coefficients must be finite")
    return a * x + b * y


def l2_norm(x: ParamVector) -> float:
    """Euclidean norm with a fixed reduction order."""
    return math.sqrt(float(np.dot(x, x)))


class SeededRng:
    """Deterministic random stream identified by (seed, stream_id).

    Streams with the same seed but different ids are statistically
    independent, so adding workers never perturbs existing streams.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,))
        self._gen = np.random.Generator(np.random.PCG64(ss))

    def spawn(self, stream_id: int) -> "SeededRng":
        """Independent stream under the same root seed."""
        return SeededRng(self.seed, stream_id)

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None):
        return self._gen.uniform(low, high, size)

    def normal(self, loc: float = 0.0, scale: float = 1.0, size=None):
        return self._gen.normal(loc, scale, size)

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size=size)

    def gamma(self, shape, scale, size=None):
        # scale may be an array (one entry per machine)
        if np.any(np.asarray(shape) <= 0) or np.any(np.asarray(scale) <= 0):
            raise ValueError("gamma shape and scale must be positive")
        return self._gen.gamma(shape, scale, size)


def gamma_draw(rng: SeededRng, shape: float, scale: float) -> float:
    """One draw from Gamma(shape, scale); the distribution mean is shape*scale."""
    return float(rng.gamma(shape, scale))
