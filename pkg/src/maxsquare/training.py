"""Optimization protocol: SGD with momentum, LR schedules, pretrain + adapt.

Every run is a pure function of (config, seed): batches are drawn round-robin
with a per-epoch seeded shuffle, parameter updates are plain velocity-style
momentum SGD, and the per-iteration loss log is emitted as CSV.  Adaptation
accepts only the target feature tensor, so held-out target labels cannot leak
into any loss.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .datasets import Dataset, KIND_CLASSIFICATION
from .errors import ConfigError, DomainError, ShapeError
from .guidance import multi_level_target_loss
from .losses import TARGET_LOSSES, cross_entropy_graph, target_loss_graph
from .models import MlpSpec, init_params, mlp_forward, seg_forward

SCHEDULES = ("poly", "anneal")


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for pretraining and adaptation.

    Defaults follow the segmentation protocol (poly schedule, lambda_t 0.1);
    :meth:`for_classification` switches to the annealed schedule and the
    classification loss weights.
    """

    loss: str = "maxsquare"
    lambda_t: float = 0.1
    alpha: float = 0.2
    gamma: float = 0.1
    delta: float = 0.95
    lambda_low: float = 0.1
    multi_level: bool = False
    lr0: float = 2.5e-4
    momentum: float = 0.9
    weight_decay: float = 5e-4
    schedule: str = "poly"
    poly_power: float = 0.9
    anneal_alpha: float = 10.0
    anneal_beta: float = 0.75
    pretrain_iter: int = 500
    max_iter: int = 2000
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.loss not in TARGET_LOSSES:
            raise ConfigError(
                f"unknown loss {self.loss!r}; expected one of {TARGET_LOSSES}"
            )
        if self.schedule not in SCHEDULES:
            raise ConfigError(
                f"unknown schedule {self.schedule!r}; expected one of {SCHEDULES}"
            )
        nonneg = {
            "lambda_t": self.lambda_t,
            "lambda_low": self.lambda_low,
            "lr0": self.lr0,
            "weight_decay": self.weight_decay,
        }
        for name, v in nonneg.items():
            if v < 0:
                raise ConfigError(f"{name} must be nonnegative, got {v}")
        if not (0.0 <= self.momentum < 1.0):
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.poly_power <= 0 or self.anneal_beta <= 0:
            raise ConfigError("schedule exponents must be positive")
        if min(self.pretrain_iter, self.max_iter) < 0 or self.batch_size < 1:
            raise ConfigError("iteration counts must be >= 0 and batch_size >= 1")
        if self.seed < 0:
            raise ConfigError("seed must be a nonnegative integer")

    @classmethod
    def for_classification(cls, loss: str = "maxsquare", **overrides) -> "TrainConfig":
        """Annealed-LR protocol with the loss weights used for classifiers."""
        lambda_t = {"entropy": 0.03, "scaled": 0.03}.get(loss, 0.3)
        base = dict(
            loss=loss,
            lambda_t=lambda_t,
            lr0=0.01,
            schedule="anneal",
            batch_size=32,
        )
        base.update(overrides)
        return cls(**base)


@dataclass
class OptimizerState:
    """Per-parameter velocity buffers plus the step counter."""

    velocity: dict
    iteration: int = 0

    @classmethod
    def initial(cls, params: dict) -> "OptimizerState":
        return cls({name: np.zeros(t.shape) for name, t in params.items()})


@dataclass(frozen=True)
class LossLogRow:
    iteration: int
    lr: float
    loss_total: float
    loss_ce: float
    loss_target: float


def poly_lr(lr0: float, iteration: int, max_iter: int, power: float = 0.9) -> float:
    """lr0 * (1 - iter/max_iter)^power."""
    if max_iter <= 0:
        raise DomainError(f"max_iter must be positive, got {max_iter}")
    if not (0 <= iteration <= max_iter):
        raise DomainError(f"iteration {iteration} outside [0, {max_iter}]")
    return lr0 * (1.0 - iteration / max_iter) ** power


def anneal_lr(eta0: float, progress: float, alpha: float = 10.0, beta: float = 0.75) -> float:
    """eta0 / (1 + alpha * progress)^beta for progress in [0, 1]."""
    if not (0.0 <= progress <= 1.0):
        raise DomainError(f"progress must be in [0, 1], got {progress}")
    return eta0 / (1.0 + alpha * progress) ** beta


def scheduled_lr(cfg: TrainConfig, iteration: int, horizon: int) -> float:
    if cfg.schedule == "poly":
        return poly_lr(cfg.lr0, iteration, horizon, cfg.poly_power)
    return anneal_lr(cfg.lr0, iteration / max(horizon, 1), cfg.anneal_alpha, cfg.anneal_beta)


def sgd_step(params, grads, state, lr, momentum, weight_decay):
    """g' = g + wd*w; v <- momentum*v + g'; w <- w - lr*v.  Returns new dicts."""
    new_params, new_velocity = {}, {}
    for name, w in params.items():
        g = grads[name]
        if g.shape != w.shape:
            raise ShapeError(f"gradient shape {g.shape} != param shape {w.shape} for {name!r}")
        if weight_decay != 0.0:
            g = g + weight_decay * w.array
        v = momentum * state.velocity[name] + g
        new_velocity[name] = v
        new_params[name] = ad.parameter(w.array - lr * v)
    return new_params, OptimizerState(new_velocity, state.iteration + 1)


class _RoundRobin:
    """Cycle through 0..n-1 with a fresh seeded shuffle every epoch."""

    def __init__(self, n: int, seed: int, tag: int):
        if n < 1:
            raise ShapeError("cannot sample from an empty dataset")
        self.n, self.seed, self.tag = n, seed, tag
        self.epoch = 0
        self.pos = 0
        self.perm = self._shuffle()

    def _shuffle(self):
        return np.random.default_rng((self.seed, self.tag, self.epoch)).permutation(self.n)

    def take(self, k: int) -> np.ndarray:
        out = np.empty(k, dtype=np.int64)
        for j in range(k):
            if self.pos == self.n:
                self.epoch += 1
                self.pos = 0
                self.perm = self._shuffle()
            out[j] = self.perm[self.pos]
            self.pos += 1
        return out


def _mean_graph(terms):
    total = terms[0]
    for t in terms[1:]:
        total = ad.add(total, t)
    return ad.scale(total, 1.0 / len(terms)) if len(terms) > 1 else total


def _source_ce(spec, params, feats, labels):
    if isinstance(spec, MlpSpec):
        return cross_entropy_graph(mlp_forward(spec, params, feats), labels)
    terms = []
    for i in range(feats.shape[0]):
        m = seg_forward(spec, params, feats[i : i + 1])
        terms.append(cross_entropy_graph(m.final, labels[i].reshape(-1)))
    return _mean_graph(terms)


def _target_loss(spec, params, feats, cfg: TrainConfig):
    if isinstance(spec, MlpSpec):
        probs = mlp_forward(spec, params, feats)
        return target_loss_graph(cfg.loss, probs, gamma=cfg.gamma, alpha=cfg.alpha)
    terms = []
    for i in range(feats.shape[0]):
        m = seg_forward(spec, params, feats[i : i + 1])
        if cfg.multi_level:
            terms.append(
                multi_level_target_loss(
                    m, cfg.loss, cfg.lambda_low, cfg.delta,
                    gamma=cfg.gamma, alpha=cfg.alpha,
                )
            )
        else:
            terms.append(
                target_loss_graph(cfg.loss, m.final, gamma=cfg.gamma, alpha=cfg.alpha)
            )
    return _mean_graph(terms)


def pretrain_source(spec, source: Dataset, cfg: TrainConfig) -> dict:
    """Cross-entropy-only training on the labeled source domain."""
    if cfg.multi_level and isinstance(spec, MlpSpec):
        raise ConfigError("multi_level requires a segmentation model")
    params = init_params(spec, seed=cfg.seed)
    if cfg.pretrain_iter == 0:
        return params
    state = OptimizerState.initial(params)
    stream = _RoundRobin(len(source), cfg.seed, 0)
    batch = cfg.batch_size if source.kind == KIND_CLASSIFICATION else max(
        1, min(cfg.batch_size, len(source))
    )
    for it in range(cfg.pretrain_iter):
        lr = scheduled_lr(cfg, it, cfg.pretrain_iter)
        idx = stream.take(min(batch, len(source)))
        ce = _source_ce(spec, params, source.features[idx], source.labels[idx])
        grads = ad.gradients(ce, params)
        params, state = sgd_step(params, grads, state, lr, cfg.momentum, cfg.weight_decay)
    return params


def adapt(spec, params: dict, source: Dataset, target_features: np.ndarray, cfg: TrainConfig):
    """Joint source-CE + weighted target-loss training from pretrained params.

    Takes the raw target feature tensor (never a labeled dataset) and returns
    the final parameters together with the per-iteration loss log.
    """
    if cfg.multi_level and isinstance(spec, MlpSpec):
        raise ConfigError("multi_level requires a segmentation model")
    target_features = np.asarray(target_features, dtype=np.float64)
    if len(target_features) < 1:
        raise ShapeError("target domain has no samples")
    state = OptimizerState.initial(params)
    src = _RoundRobin(len(source), cfg.seed, 0)
    tgt = _RoundRobin(len(target_features), cfg.seed, 1)
    batch = min(cfg.batch_size, len(source), len(target_features))
    log = []
    for it in range(cfg.max_iter):
        lr = scheduled_lr(cfg, it, cfg.max_iter)
        si = src.take(batch)
        ti = tgt.take(batch)
        ce = _source_ce(spec, params, source.features[si], source.labels[si])
        lt = _target_loss(spec, params, target_features[ti], cfg)
        # lambda_t == 0 keeps the update bitwise identical to CE-only training;
        # the target loss is still evaluated for the log.
        total = ce if cfg.lambda_t == 0.0 else ad.add(ce, ad.scale(lt, cfg.lambda_t))
        grads = ad.gradients(total, params)
        params, state = sgd_step(params, grads, state, lr, cfg.momentum, cfg.weight_decay)
        log.append(LossLogRow(it, lr, total.item(), ce.item(), lt.item()))
    return params, log


def confidence_split(p, fraction: float):
    """Indices of the most and least confident rows (max predicted probability).

    Returns (top, bottom), each floor(fraction * N) indices; ties resolve to
    the lowest row index.
    """
    if not (0.0 < fraction <= 0.5):
        raise DomainError(f"fraction must be in (0, 0.5], got {fraction}")
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 2:
        raise ShapeError(f"expected an N x C probability map, got shape {p.shape}")
    n = p.shape[0]
    if n == 0:
        empty = np.empty(0, dtype=np.int64)
        return empty, empty
    conf = p.max(axis=1)
    k = int(np.floor(fraction * n))
    top = np.argsort(-conf, kind="stable")[:k].astype(np.int64)
    bottom = np.argsort(conf, kind="stable")[:k].astype(np.int64)
    return top, bottom


def write_loss_log(log, path) -> None:
    """CSV with columns iter, lr, loss_total, loss_ce, loss_target."""
    with open(path, "w", newline="\n") as fh:
        fh.write("iter,lr,loss_total,loss_ce,loss_target\n")
        for row in log:
            fh.write(
                f"{row.iteration},{row.lr!r},{row.loss_total!r},"
                f"{row.loss_ce!r},{row.loss_target!r}\n"
            )


def read_loss_log(path):
    rows = []
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "iter,lr,loss_total,loss_ce,loss_target":
            raise ConfigError(f"unexpected loss log header: {header!r}")
        for line in fh:
            it, lr, total, ce, lt = line.strip().split(",")
            rows.append(LossLogRow(int(it), float(lr), float(total), float(ce), float(lt)))
    return rows


def with_train_seed(cfg: TrainConfig, seed: int) -> TrainConfig:
    return replace(cfg, seed=int(seed))
