"""Variance-reduction anchor and the variance-reduced minibatch gradient."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .model import LossModel, full_gradient, sample_gradient


@dataclass(frozen=True)
class VrAnchor:
    """Snapshot point ``w`` and the full gradient ``mu`` there.

    Immutable: workers hold one anchor for a whole epoch and the coordinator
    swaps in a fresh one at the epoch barrier.
    """

    w: np.ndarray
    mu: np.ndarray
    epoch_taken: int

    @classmethod
    def at(cls, model: LossModel, data: Dataset, x, epoch: int = 0) -> "VrAnchor":
        w = np.array(x, dtype=np.float64)
        mu = full_gradient(model, data, w)
        return cls(w, mu, epoch)


def schedule_update(x, k: int, m: int, anchor: VrAnchor | None,
                    model: LossModel, data: Dataset) -> VrAnchor:
    """Refresh the anchor at ``x`` when ``k`` is a multiple of ``m``.

    A refresh costs one pass over the data; callers can tell one happened by
    ``result is not anchor``.
    """
    if m < 1:
        raise ValueError("snapshot period m must be >= 1")
    if k < 0:
        raise ValueError("epoch index must be >= 0")
    if k % m == 0 or anchor is None:
        return VrAnchor.at(model, data, x, k)
    return anchor


def vr_gradient(model: LossModel, data: Dataset, S, x_read, anchor: VrAnchor) -> np.ndarray:
    """``grad f_S(x_read) - grad f_S(w) + mu``."""
    g1 = sample_gradient(model, data, S, x_read)
    g2 = sample_gradient(model, data, S, anchor.w)
    return g1 - g2 + anchor.mu
