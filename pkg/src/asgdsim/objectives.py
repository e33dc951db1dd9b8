"""Desk-scale differentiable training objectives and synthetic data.

Three objective families share one interface: a quadratic bowl around
per-sample targets, multinomial logistic regression, and a one-hidden-layer
tanh MLP. Batch losses and gradients are means over the batch, plus an
optional coupled weight-decay term. A central-difference oracle is provided
for gradient verification.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .vectors import ParamVector, SeededRng, param_vector


@dataclass
class Dataset:
    """Feature matrix (M x d) with integer class labels (length M)."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise ValueError("features must be a 2-D matrix")
        if self.labels.shape != (self.features.shape[0],):
            raise ValueError("labels length must match the sample count")
        if self.features.shape[0] < 1:
            raise ValueError("dataset must contain at least one sample")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features must be finite")
        if self.num_samples and self.labels.min() < 0:
            raise ValueError("labels must be non-negative")

    @property
    def num_samples(self) -> int:
        return self.features.shape[0]

    @property
    def num_features(self) -> int:
        return self.features.shape[1]


def _check_batch(dataset: Dataset, batch) -> np.ndarray:
    idx = np.asarray(batch, dtype=np.int64)
    if idx.ndim == 0:
        idx = idx.reshape(1)
    if idx.size == 0:
        raise ValueError("batch must be non-empty")
    if idx.min() < 0 or idx.max() >= dataset.num_samples:
        raise IndexError("batch index out of range")
    return idx


class Objective:
    """Common interface: mean batch loss and its gradient in a flat vector."""

    kind: str
    dim: int
    weight_decay: float
    dataset: Dataset

    def loss(self, params: ParamVector, batch) -> float:
        loss, _ = self.loss_and_grad(params, batch, need_grad=False)
        return loss

    def grad(self, params: ParamVector, batch) -> ParamVector:
        _, g = self.loss_and_grad(params, batch)
        return g

    def loss_and_grad(self, params, batch, need_grad=True):
        raise NotImplementedError

    def init_params(self, rng: SeededRng) -> ParamVector:
        return np.zeros(self.dim, dtype=np.float64)

    def with_dataset(self, dataset: Dataset, weight_decay: float | None = None):
        """Copy bound to another dataset, e.g. a held-out evaluation set."""
        raise NotImplementedError

    def _decay_terms(self, params):
        wd = self.weight_decay
        if wd == 0.0:
            return 0.0, None
        return 0.5 * wd * float(np.dot(params, params)), wd * params


def zero_dataset(dim: int, num_samples: int = 1) -> Dataset:
    """All-zero features; turns the quadratic objective into a pure bowl."""
    return Dataset(np.zeros((num_samples, dim)), np.zeros(num_samples, dtype=np.int64))


class QuadraticObjective(Objective):
    """Per-sample loss 0.5 * (theta - x)' A (theta - x) with diagonal A.

    The parameter dimension equals the feature dimension. With all-zero
    features and A = I this is the textbook bowl 0.5 * ||theta||^2. The
    gradient of the full objective is A-Lipschitz with constant max(A).
    """

    kind = "quadratic"

    def __init__(self, dataset: Dataset | None = None, dim: int | None = None,
                 eigenvalues=None, weight_decay: float = 0.0):
        if dataset is None:
            if dim is None:
                raise ValueError("need a dataset or an explicit dimension")
            dataset = zero_dataset(dim)
        self.dataset = dataset
        self.dim = dataset.num_features
        if eigenvalues is None:
            self.eigenvalues = np.ones(self.dim, dtype=np.float64)
        else:
            self.eigenvalues = np.asarray(eigenvalues, dtype=np.float64)
            if self.eigenvalues.shape == ():
                self.eigenvalues = np.full(self.dim, float(eigenvalues))
        if self.eigenvalues.shape != (self.dim,):
            raise ValueError("eigenvalues must match the parameter dimension")
        if np.any(self.eigenvalues < 0):
            raise ValueError("eigenvalues must be non-negative")
        self.weight_decay = float(weight_decay)

    @property
    def lipschitz_constant(self) -> float:
        return float(self.eigenvalues.max() + self.weight_decay)

    def loss_and_grad(self, params, batch, need_grad=True):
        idx = _check_batch(self.dataset, batch)
        diff = params[None, :] - self.dataset.features[idx]
        loss = 0.5 * float(np.mean(np.sum(diff * diff * self.eigenvalues, axis=1)))
        wd_loss, wd_grad = self._decay_terms(params)
        loss += wd_loss
        if not need_grad:
            return loss, None
        g = self.eigenvalues * (params - self.dataset.features[idx].mean(axis=0))
        if wd_grad is not None:
            g = g + wd_grad
        return loss, g

    def with_dataset(self, dataset, weight_decay=None):
        wd = self.weight_decay if weight_decay is None else weight_decay
        return QuadraticObjective(dataset, eigenvalues=self.eigenvalues, weight_decay=wd)


def _softmax_rows(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


class LogisticObjective(Objective):
    """Multinomial logistic regression; params flatten (W: C x d, b: C)."""

    kind = "logistic"

    def __init__(self, dataset: Dataset, num_classes: int, weight_decay: float = 0.0):
        if num_classes < 2:
            raise ValueError("need at least two classes")
        self.dataset = dataset
        self.num_classes = int(num_classes)
        self.num_features = dataset.num_features
        self.dim = self.num_classes * (self.num_features + 1)
        self.weight_decay = float(weight_decay)
        if dataset.labels.max() >= num_classes:
            raise ValueError("label outside [0, num_classes)")

    def _unpack(self, params):
        c, d = self.num_classes, self.num_features
        w = params[: c * d].reshape(c, d)
        b = params[c * d:]
        return w, b

    def loss_and_grad(self, params, batch, need_grad=True):
        idx = _check_batch(self.dataset, batch)
        x = self.dataset.features[idx]
        y = self.dataset.labels[idx]
        w, b = self._unpack(params)
        probs = _softmax_rows(x @ w.T + b)
        n = idx.size
        nll = -float(np.mean(np.log(probs[np.arange(n), y] + 1e-300)))
        wd_loss, wd_grad = self._decay_terms(params)
        loss = nll + wd_loss
        if not need_grad:
            return loss, None
        dz = probs
        dz[np.arange(n), y] -= 1.0
        dz /= n
        gw = dz.T @ x
        gb = dz.sum(axis=0)
        g = np.concatenate([gw.ravel(), gb])
        if wd_grad is not None:
            g = g + wd_grad
        return loss, g

    def accuracy(self, params, batch=None) -> float:
        idx = np.arange(self.dataset.num_samples) if batch is None else _check_batch(self.dataset, batch)
        w, b = self._unpack(params)
        pred = (self.dataset.features[idx] @ w.T + b).argmax(axis=1)
        return float(np.mean(pred == self.dataset.labels[idx]))

    def with_dataset(self, dataset, weight_decay=None):
        wd = self.weight_decay if weight_decay is None else weight_decay
        return LogisticObjective(dataset, self.num_classes, weight_decay=wd)


class MlpObjective(Objective):
    """One-hidden-layer tanh network with a softmax cross-entropy head.

    params flatten (W1: H x d, b1: H, W2: C x H, b2: C); hidden width is
    capped at 64 to keep finite-difference sweeps fast.
    """

    kind = "mlp"

    def __init__(self, dataset: Dataset, num_classes: int, hidden: int = 16,
                 weight_decay: float = 0.0):
        if not 1 <= hidden <= 64:
            raise ValueError("hidden width must be in [1, 64]")
        if num_classes < 2:
            raise ValueError("need at least two classes")
        self.dataset = dataset
        self.num_classes = int(num_classes)
        self.num_features = dataset.num_features
        self.hidden = int(hidden)
        d, h, c = self.num_features, self.hidden, self.num_classes
        self.dim = h * d + h + c * h + c
        self.weight_decay = float(weight_decay)
        if dataset.labels.max() >= num_classes:
            raise ValueError("label outside [0, num_classes)")

    def _unpack(self, params):
        d, h, c = self.num_features, self.hidden, self.num_classes
        o = 0
        w1 = params[o:o + h * d].reshape(h, d); o += h * d
        b1 = params[o:o + h]; o += h
        w2 = params[o:o + c * h].reshape(c, h); o += c * h
        b2 = params[o:]
        return w1, b1, w2, b2

    def init_params(self, rng: SeededRng) -> ParamVector:
        d, h, c = self.num_features, self.hidden, self.num_classes
        w1 = rng.normal(0.0, 1.0 / np.sqrt(d), size=(h, d))
        w2 = rng.normal(0.0, 1.0 / np.sqrt(h), size=(c, h))
        return np.concatenate([w1.ravel(), np.zeros(h), w2.ravel(), np.zeros(c)])

    def loss_and_grad(self, params, batch, need_grad=True):
        idx = _check_batch(self.dataset, batch)
        x = self.dataset.features[idx]
        y = self.dataset.labels[idx]
        w1, b1, w2, b2 = self._unpack(params)
        hact = np.tanh(x @ w1.T + b1)
        probs = _softmax_rows(hact @ w2.T + b2)
        n = idx.size
        nll = -float(np.mean(np.log(probs[np.arange(n), y] + 1e-300)))
        wd_loss, wd_grad = self._decay_terms(params)
        loss = nll + wd_loss
        if not need_grad:
            return loss, None
        dz = probs
        dz[np.arange(n), y] -= 1.0
        dz /= n
        gw2 = dz.T @ hact
        gb2 = dz.sum(axis=0)
        dh = (dz @ w2) * (1.0 - hact * hact)
        gw1 = dh.T @ x
        gb1 = dh.sum(axis=0)
        g = np.concatenate([gw1.ravel(), gb1, gw2.ravel(), gb2])
        if wd_grad is not None:
            g = g + wd_grad
        return loss, g

    def with_dataset(self, dataset, weight_decay=None):
        wd = self.weight_decay if weight_decay is None else weight_decay
        return MlpObjective(dataset, self.num_classes, hidden=self.hidden, weight_decay=wd)


def fd_grad(obj: Objective, params: ParamVector, batch, h: float = 1e-6) -> ParamVector:
    """Central-difference gradient oracle, one coordinate at a time."""
    if h <= 0:
        raise ValueError("step size must be positive")
    params = np.asarray(params, dtype=np.float64)
    g = np.zeros_like(params)
    probe = params.copy()
    for i in range(params.shape[0]):
        orig = probe[i]
        probe[i] = orig + h
        plus = obj.loss(probe, batch)
        probe[i] = orig - h
        minus = obj.loss(probe, batch)
        probe[i] = orig
        g[i] = (plus - minus) / (2.0 * h)
    return g


def gen_synthetic(rng: SeededRng, num_samples: int, dim: int, num_classes: int,
                  separation: float) -> Dataset:
    """Gaussian class clusters with centers exactly `separation` apart.

    Center c sits at (separation / sqrt(2)) * e_c, so all pairwise center
    distances equal `separation` (requires dim >= num_classes). Labels cycle
    through the classes, keeping counts balanced within one sample.
    """
    if num_classes < 2:
        raise ValueError("need at least two classes")
    if num_samples < num_classes:
        raise ValueError("need at least one sample per class")
    if dim < num_classes:
        raise ValueError("dim must be at least num_classes for equidistant centers")
    centers = np.zeros((num_classes, dim))
    centers[np.arange(num_classes), np.arange(num_classes)] = separation / np.sqrt(2.0)
    labels = np.arange(num_samples, dtype=np.int64) % num_classes
    features = centers[labels] + rng.normal(size=(num_samples, dim))
    return Dataset(features, labels)


def load_csv(path) -> Dataset:
    """Read a dataset from CSV: header row, float features, last column label."""
    raw = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if raw.shape[1] < 2:
        raise ValueError("need at least one feature column and one label column")
    labels = raw[:, -1]
    if not np.allclose(labels, np.round(labels)):
        raise ValueError("label column must contain integers")
    return Dataset(raw[:, :-1], labels.astype(np.int64))
