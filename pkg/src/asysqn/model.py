"""Loss families and their per-sample oracles.

Every summand carries the ridge term, ``f_i(x) = loss(y_i, z_i.x) + lam*|x|^2``.
The logistic loss is ``log(1 + exp(+y z.x))``; note the plus sign, kept as in
the experiments this package reproduces.  Its minimiser therefore points
against the labels, which is harmless for benchmarking.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .data import Dataset


class LossKind(enum.Enum):
    LEAST_SQUARES = "ls"
    LOGISTIC = "logistic"
    HINGE = "hinge"

    @property
    def code(self) -> int:
        return _KIND_CODES[self]


_KIND_CODES = {LossKind.LEAST_SQUARES: 0, LossKind.LOGISTIC: 1, LossKind.HINGE: 2}
DEFAULT_LAMBDA = {LossKind.LEAST_SQUARES: 0.0, LossKind.LOGISTIC: 1e-3, LossKind.HINGE: 1e-3}


@dataclass(frozen=True)
class LossModel:
    kind: LossKind
    lam: float = 0.0

    def __post_init__(self):
        if not (self.lam >= 0 and np.isfinite(self.lam)):
            raise ValueError("lambda must be a finite nonnegative number")

    @classmethod
    def from_name(cls, name: str, lam: float | None = None) -> "LossModel":
        aliases = {"least-squares": "ls", "leastsquares": "ls", "lr": "logistic",
                   "logreg": "logistic", "svm": "hinge"}
        kind = LossKind(aliases.get(name.lower(), name.lower()))
        return cls(kind, DEFAULT_LAMBDA[kind] if lam is None else float(lam))

    @property
    def smooth(self) -> bool:
        return self.kind is not LossKind.HINGE

    @property
    def strongly_convex(self) -> bool:
        return self.lam > 0


def _select(data: Dataset, indices, x) -> tuple:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (data.d,):
        raise ValueError(f"parameter has shape {x.shape}, expected ({data.d},)")
    if indices is None:
        return data.rows, data.labels, x
    idx = np.asarray(indices, dtype=np.int64).ravel()
    if idx.size == 0:
        raise ValueError("empty subsample")
    if idx.min() < 0 or idx.max() >= data.n:
        raise IndexError("sample index out of range")
    return data.rows[idx], data.labels[idx], x


def _per_sample_loss(kind: LossKind, margin: np.ndarray, y: np.ndarray) -> np.ndarray:
    if kind is LossKind.LEAST_SQUARES:
        return (y - margin) ** 2
    if kind is LossKind.LOGISTIC:
        return np.logaddexp(0.0, y * margin)
    return np.maximum(0.0, 1.0 - y * margin)


def loss_slope(kind: LossKind, margin: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Derivative of each per-sample loss with respect to its margin ``z.x``."""
    if kind is LossKind.LEAST_SQUARES:
        return -2.0 * (y - margin)
    if kind is LossKind.LOGISTIC:
        return expit(y * margin) * y
    # kink (y z.x == 1) takes the flat branch
    return np.where(y * margin < 1.0, -y, 0.0)


def sample_loss(model: LossModel, data: Dataset, indices, x) -> float:
    """Mean of ``f_i(x)`` over ``indices`` (``None`` means the full dataset)."""
    z, y, x = _select(data, indices, x)
    terms = _per_sample_loss(model.kind, z @ x, y)
    return float(terms.sum() / terms.shape[0] + model.lam * (x @ x))


def sample_gradient(model: LossModel, data: Dataset, indices, x) -> np.ndarray:
    z, y, x = _select(data, indices, x)
    coef = loss_slope(model.kind, z @ x, y)
    g = np.asarray(z.T @ coef).ravel() / coef.shape[0]
    if model.lam:
        g += 2.0 * model.lam * x
    return g


def hessian_vector_product(model: LossModel, data: Dataset, indices, x, v) -> np.ndarray:
    """Subsampled Hessian times ``v``.

    For the hinge loss only the ridge term contributes (the hinge part has zero
    curvature almost everywhere).
    """
    z, y, x = _select(data, indices, x)
    v = np.asarray(v, dtype=np.float64)
    if v.shape != x.shape:
        raise ValueError(f"vector has shape {v.shape}, expected {x.shape}")
    k = z.shape[0]
    if model.kind is LossKind.LEAST_SQUARES:
        curv = np.full(k, 2.0)
    elif model.kind is LossKind.LOGISTIC:
        s = expit(y * (z @ x))
        curv = s * (1.0 - s) * y * y
    else:
        curv = None
    hv = 2.0 * model.lam * v
    if curv is not None:
        hv = hv + np.asarray(z.T @ (curv * (z @ v))).ravel() / k
    return hv


def full_loss(model: LossModel, data: Dataset, x) -> float:
    return sample_loss(model, data, None, x)


def full_gradient(model: LossModel, data: Dataset, x) -> np.ndarray:
    return sample_gradient(model, data, None, x)
