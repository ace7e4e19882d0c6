"""Limited-memory inverse-Hessian storage and the two-loop recursion."""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass

import numpy as np

from . import _kernels

# curvature test: pairs with s.y < CURVATURE_TOL * |s| |y| are dropped
CURVATURE_TOL = 1e-8


class PushResult(enum.Enum):
    ACCEPTED = "accepted"
    SKIPPED = "skipped"


@dataclass(frozen=True)
class CorrectionPair:
    s: np.ndarray
    y: np.ndarray
    rho: float


class CorrectionHistory:
    """The newest ``capacity`` correction pairs, oldest first.

    Mutated only between epochs; the packed arrays handed to workers are
    rebuilt on every push so readers never see a half-updated buffer.
    """

    def __init__(self, capacity: int, d: int | None = None):
        if capacity < 1:
            raise ValueError("memory size M must be >= 1")
        self.capacity = capacity
        self.d = d
        self._pairs: deque[CorrectionPair] = deque(maxlen=capacity)
        self._packed = None

    def __len__(self) -> int:
        return len(self._pairs)

    @property
    def pairs(self) -> list[CorrectionPair]:
        return list(self._pairs)

    def push(self, s, y) -> PushResult:
        s = np.array(s, dtype=np.float64).ravel()
        y = np.array(y, dtype=np.float64).ravel()
        if s.shape != y.shape or (self.d is not None and s.shape[0] != self.d):
            raise ValueError(f"pair dimensions {s.shape}, {y.shape} do not match d={self.d}")
        if not (np.all(np.isfinite(s)) and np.all(np.isfinite(y))):
            raise ValueError("non-finite correction pair")
        self.d = s.shape[0]
        sy = float(s @ y)
        if not sy >= CURVATURE_TOL * np.linalg.norm(s) * np.linalg.norm(y) or sy == 0.0:
            return PushResult.SKIPPED
        self._pairs.append(CorrectionPair(s, y, 1.0 / sy))
        self._packed = None
        return PushResult.ACCEPTED

    def packed(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(S, Y, rho)`` as contiguous arrays, rows oldest first."""
        if self._packed is None:
            d = self.d or 0
            k = len(self._pairs)
            S = np.zeros((max(k, 1), d))
            Y = np.zeros((max(k, 1), d))
            rho = np.zeros(max(k, 1))
            for i, pair in enumerate(self._pairs):
                S[i], Y[i], rho[i] = pair.s, pair.y, pair.rho
            self._packed = (S, Y, rho)
        return self._packed


def push_pair(history: CorrectionHistory, s, y) -> PushResult:
    return history.push(s, y)


def two_loop_direction(history: CorrectionHistory, v) -> np.ndarray:
    """Return ``-H v`` for the limited-memory inverse Hessian.

    ``H`` is seeded with ``gamma * I``, ``gamma = s.y / y.y`` of the newest
    pair; an empty history gives ``-v``.
    """
    v = np.array(v, dtype=np.float64).ravel()
    if not np.all(np.isfinite(v)):
        raise ValueError("non-finite input vector")
    if history.d is not None and v.shape[0] != history.d:
        raise ValueError(f"vector has length {v.shape[0]}, expected {history.d}")
    p = -v
    if len(history):
        S, Y, rho = history.packed()
        _kernels.two_loop(S, Y, rho, len(history), p)
    return p


def dense_inverse_hessian(history: CorrectionHistory, d: int) -> np.ndarray:
    """Dense ``H`` built by applying the BFGS inverse update pair by pair.

    ``H <- V^T H V + rho s s^T`` with ``V = I - rho y s^T``, oldest pair first,
    starting from the same ``gamma * I`` seed as the two-loop recursion.
    Intended as a test oracle; costs O(M d^3).
    """
    if history.d is not None and history.d != d:
        raise ValueError(f"history dimension {history.d} != {d}")
    pairs = history.pairs
    if pairs:
        s, y = pairs[-1].s, pairs[-1].y
        H = (s @ y) / (y @ y) * np.eye(d)
    else:
        H = np.eye(d)
    eye = np.eye(d)
    for pair in pairs:
        V = eye - pair.rho * np.outer(pair.y, pair.s)
        H = V.T @ H @ V + pair.rho * np.outer(pair.s, pair.s)
    return H
