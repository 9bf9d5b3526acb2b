"""Loss-proportional importance sampling with debiasing weights.

Estimated losses are turned into per-example accept probabilities

    p_i = clip(s * n * l_i / sum_j l_j, p_min, 1),   l_i = max(est_i, 0)

(uniform ``p_i = s`` when every estimate is zero). Accepted examples carry
weight ``1 / p_i`` and rejected ones weight 0, so the weighted loss sum is an
unbiased estimate of the full-batch sum.
"""
import math
from dataclasses import asdict, dataclass, fields

import numpy as np


@dataclass
class SamplerConfig:
    target_ratio: float = 0.5
    warmup_iters: int = 50
    p_min: float = 0.05
    update_period_0: int = 1
    update_decay: float = 1.5
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not 0 < self.target_ratio <= 1:
            raise ValueError(f"target_ratio must be in (0, 1], got {self.target_ratio}")
        if not 0 < self.p_min <= 1:
            raise ValueError(f"p_min must be in (0, 1], got {self.p_min}")
        if self.p_min > self.target_ratio:
            raise ValueError("p_min cannot exceed target_ratio")
        if self.warmup_iters < 0:
            raise ValueError("warmup_iters must be non-negative")
        if self.update_period_0 < 1:
            raise ValueError("update_period_0 must be positive")
        if not self.update_decay >= 1:
            raise ValueError(f"update_decay must be >= 1, got {self.update_decay}")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown sampler config keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class SamplingPlan:
    probs: np.ndarray
    accepted: np.ndarray
    weights: np.ndarray

    @property
    def n_accepted(self):
        return int(self.accepted.sum())

    @property
    def indices(self):
        return np.flatnonzero(self.accepted)


def accept_probabilities(est_losses, target_ratio, p_min):
    est = np.asarray(est_losses, dtype=np.float64)
    if est.ndim != 1 or len(est) < 1:
        raise ValueError("need a non-empty vector of loss estimates")
    if not np.isfinite(est).all():
        raise ValueError("loss estimates must be finite")
    pos = np.maximum(est, 0.0)
    total = pos.sum()
    if total <= 0:
        return np.full(len(est), float(target_ratio))
    return np.clip(target_ratio * len(est) * pos / total, p_min, 1.0)


def make_plan(est_losses, cfg, rng):
    """Draw one accept/reject decision per example.

    ``rng`` is a ``numpy.random.Generator``; exactly ``n`` uniforms are drawn.
    """
    probs = accept_probabilities(est_losses, cfg.target_ratio, cfg.p_min)
    accepted = rng.random(len(probs)) < probs
    weights = np.where(accepted, 1.0 / probs, 0.0)
    return SamplingPlan(probs=probs, accepted=accepted, weights=weights)


def debiased_batch_loss(plan, true_losses):
    true_losses = np.asarray(true_losses, dtype=np.float64)
    if true_losses.shape != plan.weights.shape:
        raise ValueError(f"plan covers {len(plan.weights)} examples, got {len(true_losses)} losses")
    return float(np.sum(plan.weights[plan.accepted] * true_losses[plan.accepted]))


def update_rounds(cfg):
    """Yield post-warm-up sketch update iterations in increasing order."""
    it = cfg.warmup_iters
    gap = cfg.update_period_0
    while True:
        yield it
        it += gap
        if cfg.update_decay > 1:
            gap = math.ceil(gap * cfg.update_decay)


def should_update_sketch(iteration, cfg):
    """Whether ``iteration`` (0-based) writes losses back into the sketch.

    Every warm-up iteration updates. Afterwards updates happen at the warm-up
    end and then after gaps ``g0 = update_period_0``, ``g_{k+1} = ceil(g_k * update_decay)``;
    ``update_decay == 1`` keeps a fixed period.
    """
    if iteration < cfg.warmup_iters:
        return True
    if cfg.update_decay == 1:
        return (iteration - cfg.warmup_iters) % cfg.update_period_0 == 0
    for it in update_rounds(cfg):
        if it >= iteration:
            return it == iteration
