"""Multi-level self-produced guidance.

The network exposes two per-pixel probability maps (a final head and a
low-level head).  Their average elects a class per pixel; the pixel is only
assigned when at least one head exceeds the confidence threshold at that
class, otherwise it abstains.  The resulting labels supervise the low-level
head through a cross-entropy term; no gradient flows through the labels
themselves.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import DomainError, ShapeError
from .losses import ABSTAIN, cross_entropy_graph, target_loss_graph


@dataclass
class MultiLevelOutput:
    """Final-head and low-level-head probability tensors with matching shape."""

    final: ad.Tensor
    low: ad.Tensor

    def __post_init__(self):
        if not isinstance(self.final, ad.Tensor):
            self.final = ad.constant(np.asarray(self.final, dtype=np.float64))
        if not isinstance(self.low, ad.Tensor):
            self.low = ad.constant(np.asarray(self.low, dtype=np.float64))
        if self.final.ndim != 2 or self.final.shape != self.low.shape:
            raise ShapeError(
                f"head shapes differ: {self.final.shape} vs {self.low.shape}"
            )

    @property
    def num_pixels(self) -> int:
        return self.final.shape[0]


def ensemble_average(m: MultiLevelOutput) -> np.ndarray:
    """Elementwise mean of the two heads; rows stay on the simplex."""
    return (m.final.array + m.low.array) / 2.0


def self_guidance(m: MultiLevelOutput, delta: float) -> np.ndarray:
    """Threshold-gated pseudo-labels from the head ensemble.

    Pixel n receives the ensemble argmax c* iff either head puts more than
    ``delta`` probability on c*; otherwise it abstains.  Comparisons are
    strict, and argmax ties resolve to the lowest class index.
    """
    if not (0.0 < delta < 1.0):
        raise DomainError(f"delta must be in (0, 1), got {delta}")
    if m.num_pixels == 0:
        return np.empty(0, dtype=np.int64)
    ens = ensemble_average(m)
    cstar = ens.argmax(axis=1)
    rows = np.arange(m.num_pixels)
    confident = (m.final.array[rows, cstar] > delta) | (
        m.low.array[rows, cstar] > delta
    )
    return np.where(confident, cstar, ABSTAIN).astype(np.int64)


def multi_level_target_loss(
    m: MultiLevelOutput,
    target_loss: str,
    lambda_low: float = 0.1,
    delta: float = 0.95,
    *,
    gamma=None,
    alpha=None,
) -> ad.Tensor:
    """Final-head target loss plus guided CE on the low-level head.

    Returns a differentiable scalar.  The guidance labels are recomputed from
    the current predictions and treated as constants, so the cross-entropy
    term reaches the network only through the low head's log probabilities.
    """
    if lambda_low < 0.0:
        raise DomainError(f"lambda_low must be nonnegative, got {lambda_low}")
    final_term = target_loss_graph(target_loss, m.final, gamma=gamma, alpha=alpha)
    guided_ce = cross_entropy_graph(m.low, self_guidance(m, delta))
    return ad.add(final_term, ad.scale(guided_ce, lambda_low))
