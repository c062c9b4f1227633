"""Target-loss family for unsupervised domain adaptation, plus source CE.

Each loss comes in two forms that are cross-checked against each other and
against central finite differences in the test suite:

* a pure numpy function returning a :class:`LossResult` with the loss value
  and its closed-form gradient with respect to the probability matrix, and
* a ``*_graph`` builder that expresses the same loss as autodiff ops so it
  can be differentiated end to end through a network.

The binary closed-form gradient functions used for the gradient-magnitude
curves are standalone formulas, independent of both routes.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, DomainError, ShapeError

# Label value marking a pixel/sample that carries no supervision.
ABSTAIN = -1

# Canonical selector names for the target-loss family.
TARGET_LOSSES = ("entropy", "scaled", "maxsquare", "maxsquare_iw")

_CLIP_LO = ad.LOG_CLAMP_MIN
_CLIP_HI = ad.LOG_CLAMP_MAX


@dataclass
class LossResult:
    """Loss value plus (optionally) its gradient w.r.t. the probability matrix."""

    value: float
    grad_wrt_probs: np.ndarray | None = None
    all_abstain: bool = False


@dataclass
class ClassCounts:
    """Per-image predicted-class pixel counts and their total."""

    counts: np.ndarray  # int, length C
    total: int


def _check_probmap(p) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 2:
        raise ShapeError(f"probability map must be 2-D (N x C), got shape {p.shape}")
    if p.shape[1] < 1:
        raise ShapeError("probability map needs at least one class column")
    if p.size:
        if p.min() < -1e-12 or p.max() > 1.0 + 1e-12:
            raise DomainError("probability entries must lie in [0, 1]")
        rowsum = p.sum(axis=1)
        if np.abs(rowsum - 1.0).max() > 1e-9:
            raise DomainError("probability rows must sum to 1 within 1e-9")
    return p


def _check_labels(y, n: int, num_classes: int) -> np.ndarray:
    y = np.asarray(y)
    if y.shape != (n,):
        raise ShapeError(f"labels must have shape ({n},), got {y.shape}")
    y = y.astype(np.int64)
    valid = y != ABSTAIN
    if valid.any() and (y[valid].min() < 0 or y[valid].max() >= num_classes):
        raise DomainError("labels must be ABSTAIN or in [0, num_classes)")
    return y


# ---------------------------------------------------------------------------
# Source cross entropy
# ---------------------------------------------------------------------------


def cross_entropy(p, y) -> LossResult:
    """Mean negative log probability of the true class over supervised rows.

    Abstained rows are excluded from both the sum and the normalizer.  If no
    row is supervised the loss is defined as 0 and flagged.
    """
    p = _check_probmap(p)
    y = _check_labels(y, p.shape[0], p.shape[1])
    rows = np.flatnonzero(y != ABSTAIN)
    if rows.size == 0:
        return LossResult(0.0, np.zeros_like(p), all_abstain=True)
    pt = p[rows, y[rows]]
    clamped = np.clip(pt, _CLIP_LO, _CLIP_HI)
    value = -np.log(clamped).sum() / rows.size
    grad = np.zeros_like(p)
    inside = ((pt >= _CLIP_LO) & (pt <= _CLIP_HI)).astype(np.float64)
    grad[rows, y[rows]] = -inside / (clamped * rows.size)
    return LossResult(float(value), grad)


def cross_entropy_graph(p: ad.Tensor, y) -> ad.Tensor:
    """Autodiff version of :func:`cross_entropy` on a probability tensor."""
    n, c = p.shape
    y = _check_labels(y, n, c)
    rows = np.flatnonzero(y != ABSTAIN)
    if rows.size == 0:
        return ad.constant(0.0)
    onehot = np.zeros((n, c))
    onehot[rows, y[rows]] = 1.0
    picked = ad.mul(ad.constant(onehot), ad.log(p))
    return ad.scale(ad.sum_all(picked), -1.0 / rows.size)


# ---------------------------------------------------------------------------
# Entropy and scaled entropy
# ---------------------------------------------------------------------------


def _entropy_value_grad(p: np.ndarray):
    # Shared kernel, no simplex validation: scaled entropy feeds it rows that
    # deliberately do not sum to 1.
    n = p.shape[0]
    clamped = np.clip(p, _CLIP_LO, _CLIP_HI)
    inside = (p >= _CLIP_LO) & (p <= _CLIP_HI)
    logp = np.log(clamped)
    value = -(p * logp).sum() / n
    grad = -(logp + p * (inside / clamped)) / n
    return float(value), grad


def entropy_loss(p) -> LossResult:
    """Mean Shannon entropy of the rows; zero-probability terms contribute 0."""
    p = _check_probmap(p)
    if p.shape[0] == 0:
        return LossResult(0.0, np.zeros_like(p))
    value, grad = _entropy_value_grad(p)
    return LossResult(value, grad)


def entropy_graph(p: ad.Tensor) -> ad.Tensor:
    if p.shape[0] == 0:
        return ad.constant(0.0)
    return ad.scale(ad.sum_all(ad.mul(p, ad.log(p))), -1.0 / p.shape[0])


def scaled_entropy_loss(p, gamma: float) -> LossResult:
    """Entropy of affinely compressed probabilities (1 - 2*gamma) p + gamma.

    The compression keeps every probability inside [gamma, 1 - gamma], which
    bounds the per-entry gradient magnitude; in the binary case the bound is
    (1 - 2*gamma) * log((1 - gamma) / gamma).
    """
    _check_gamma(gamma)
    p = _check_probmap(p)
    if p.shape[0] == 0:
        return LossResult(0.0, np.zeros_like(p))
    squeeze = 1.0 - 2.0 * gamma
    value, grad_scaled = _entropy_value_grad(squeeze * p + gamma)
    return LossResult(value, squeeze * grad_scaled)


def scaled_entropy_graph(p: ad.Tensor, gamma: float) -> ad.Tensor:
    _check_gamma(gamma)
    if p.shape[0] == 0:
        return ad.constant(0.0)
    squeeze = 1.0 - 2.0 * gamma
    shifted = ad.add(ad.scale(p, squeeze), ad.constant(np.full(p.shape, gamma)))
    return ad.scale(ad.sum_all(ad.mul(shifted, ad.log(shifted))), -1.0 / p.shape[0])


def _check_gamma(gamma):
    if not (0.0 < gamma < 0.5):
        raise DomainError(f"gamma must be in (0, 0.5), got {gamma}")


# ---------------------------------------------------------------------------
# Maximum squares and its image-wise weighted variant
# ---------------------------------------------------------------------------


def class_counts(p) -> ClassCounts:
    """Pixel counts of each argmax class; ties go to the lowest class index."""
    p = _check_probmap(p)
    if p.shape[0] == 0:
        return ClassCounts(np.zeros(p.shape[1], dtype=np.int64), 0)
    pred = p.argmax(axis=1)
    counts = np.bincount(pred, minlength=p.shape[1]).astype(np.int64)
    return ClassCounts(counts, int(p.shape[0]))


def _weighted_square_sum(p: np.ndarray, denom: np.ndarray):
    # value = -sum_c colsum_c / (2 denom_c); identical evaluation order for
    # every member of the family so that equal denominators give equal bits.
    col = (p * p).sum(axis=0)
    value = -(col / (2.0 * denom)).sum()
    grad = -p / denom
    return float(value), grad


def max_squares_loss(p) -> LossResult:
    """Negative half mean of squared probabilities (in [-1/2, -1/(2C)])."""
    p = _check_probmap(p)
    n = p.shape[0]
    if n == 0:
        return LossResult(0.0, np.zeros_like(p))
    value, grad = _weighted_square_sum(p, np.full(p.shape[1], float(n)))
    return LossResult(value, grad)


def _iw_denominators(p: np.ndarray, alpha: float) -> np.ndarray:
    counts = class_counts(p)
    # Classes absent from the argmax map keep a unit count so the weight
    # stays finite; their probability mass is near zero anyway.
    clamped = np.maximum(counts.counts, 1).astype(np.float64)
    return clamped**alpha * float(counts.total) ** (1.0 - alpha)


def iw_max_squares_loss(p, alpha: float) -> LossResult:
    """Squared-probability loss averaged by an interpolated per-class count.

    Each class column is normalized by (N_c)^alpha * N^(1-alpha), where N_c
    counts pixels whose argmax is c on the current prediction (recomputed per
    call).  alpha=0 reproduces :func:`max_squares_loss` bit for bit.
    """
    _check_alpha(alpha)
    p = _check_probmap(p)
    if p.shape[0] == 0:
        return LossResult(0.0, np.zeros_like(p))
    value, grad = _weighted_square_sum(p, _iw_denominators(p, alpha))
    return LossResult(value, grad)


def _check_alpha(alpha):
    if not (0.0 <= alpha <= 1.0):
        raise DomainError(f"alpha must be in [0, 1], got {alpha}")


def _square_graph(p: ad.Tensor, denom: np.ndarray) -> ad.Tensor:
    weights = np.broadcast_to(-1.0 / (2.0 * denom), p.shape).copy()
    return ad.sum_all(ad.mul(ad.mul(p, p), ad.constant(weights)))


def max_squares_graph(p: ad.Tensor) -> ad.Tensor:
    if p.shape[0] == 0:
        return ad.constant(0.0)
    return _square_graph(p, np.full(p.shape[1], float(p.shape[0])))


def iw_max_squares_graph(p: ad.Tensor, alpha: float) -> ad.Tensor:
    _check_alpha(alpha)
    if p.shape[0] == 0:
        return ad.constant(0.0)
    # Counts are a function of the current prediction but are held constant
    # for differentiation (they are piecewise constant in p anyway).
    return _square_graph(p, _iw_denominators(p.array, alpha))


# ---------------------------------------------------------------------------
# Pearson chi^2 divergence from the uniform distribution
# ---------------------------------------------------------------------------


def pearson_chi2_uniform(p) -> np.ndarray:
    """Per-row Pearson chi^2 divergence against uniform: C * sum_c p^2 - 1."""
    p = _check_probmap(p)
    return p.shape[1] * (p * p).sum(axis=1) - 1.0


# ---------------------------------------------------------------------------
# Binary closed-form gradient magnitudes (curve emission)
# ---------------------------------------------------------------------------


def binary_entropy_grad(p):
    """|d/dp of binary entropy| = |log p - log(1 - p)| for p in (0, 1)."""
    arr = np.asarray(p, dtype=np.float64)
    if arr.size and (arr.min() <= 0.0 or arr.max() >= 1.0):
        raise DomainError("binary entropy gradient requires p in (0, 1)")
    out = np.abs(np.log(arr) - np.log1p(-arr))
    return float(out) if np.isscalar(p) or arr.ndim == 0 else out


def binary_maxsquare_grad(p):
    """|d/dp of -(p^2 + (1-p)^2)| = |4p - 2| for p in [0, 1]."""
    arr = np.asarray(p, dtype=np.float64)
    if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
        raise DomainError("binary maximum-squares gradient requires p in [0, 1]")
    out = np.abs(4.0 * arr - 2.0)
    return float(out) if np.isscalar(p) or arr.ndim == 0 else out


def binary_scaled_entropy_grad(p, gamma: float):
    """Gradient magnitude of binary entropy applied to compressed probabilities.

    Bounded by (1 - 2*gamma) * log((1 - gamma) / gamma) over all of [0, 1].
    """
    _check_gamma(gamma)
    arr = np.asarray(p, dtype=np.float64)
    if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
        raise DomainError("binary scaled-entropy gradient requires p in [0, 1]")
    squeeze = 1.0 - 2.0 * gamma
    ps = squeeze * arr + gamma
    qs = squeeze * (1.0 - arr) + gamma
    out = squeeze * np.abs(np.log(ps) - np.log(qs))
    return float(out) if np.isscalar(p) or arr.ndim == 0 else out


# ---------------------------------------------------------------------------
# Combined objective
# ---------------------------------------------------------------------------


def target_loss_value(name: str, p, *, gamma=None, alpha=None) -> LossResult:
    """Dispatch a target-loss selector to its numpy implementation."""
    if name == "entropy":
        return entropy_loss(p)
    if name == "scaled":
        if gamma is None:
            raise ConfigError("target loss 'scaled' requires gamma")
        return scaled_entropy_loss(p, gamma)
    if name == "maxsquare":
        return max_squares_loss(p)
    if name == "maxsquare_iw":
        if alpha is None:
            raise ConfigError("target loss 'maxsquare_iw' requires alpha")
        return iw_max_squares_loss(p, alpha)
    raise ConfigError(f"unknown target loss {name!r}; expected one of {TARGET_LOSSES}")


def target_loss_graph(name: str, p: ad.Tensor, *, gamma=None, alpha=None) -> ad.Tensor:
    """Dispatch a target-loss selector to its autodiff builder."""
    if name == "entropy":
        return entropy_graph(p)
    if name == "scaled":
        if gamma is None:
            raise ConfigError("target loss 'scaled' requires gamma")
        return scaled_entropy_graph(p, gamma)
    if name == "maxsquare":
        return max_squares_graph(p)
    if name == "maxsquare_iw":
        if alpha is None:
            raise ConfigError("target loss 'maxsquare_iw' requires alpha")
        return iw_max_squares_graph(p, alpha)
    raise ConfigError(f"unknown target loss {name!r}; expected one of {TARGET_LOSSES}")


def uda_objective(
    p_src, y_src, p_tgt, target_loss: str, lambda_t: float, *, gamma=None, alpha=None
) -> LossResult:
    """Source cross entropy plus lambda_t times the selected target loss."""
    if lambda_t < 0.0:
        raise DomainError(f"lambda_t must be nonnegative, got {lambda_t}")
    ce = cross_entropy(p_src, y_src)
    lt = target_loss_value(target_loss, p_tgt, gamma=gamma, alpha=alpha)
    if ce.all_abstain:
        warnings.warn("all source rows abstained; cross entropy defined as 0",
                      RuntimeWarning, stacklevel=2)
    return LossResult(ce.value + lambda_t * lt.value)
