"""
Optimizer recipes: SGD with momentum and polynomial decay, AdamW with
linear warm-up and cosine decay

Both updates are pure with respect to the TrainState they receive: a new
state is returned and the parameters are updated in place.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, Mapping, Optional, Tuple

import numpy as np

from ..core.errors import ConfigError
from ..core.module import Parameter

logger = logging.getLogger(__name__)


class OptimizerKind(Enum):
    SGD_POLY = "sgd-poly"
    ADAMW_COSINE = "adamw-cosine"


@dataclass
class RecipeConfig:
    """
    Training recipe

    Attributes:
        optimizer: sgd-poly (segmentation) or adamw-cosine (classification)
        base_lr: peak learning rate
        max_iters: total optimizer steps
        batch_size: samples per step
        seed: drives batch order, augmentation and stochastic layers
        deterministic: single-threaded numerics (set by the CLI before numpy loads)
        momentum: SGD momentum
        weight_decay: None selects the recipe default (0 for SGD, 0.05 for AdamW)
        poly_power: exponent of the polynomial decay
        betas / eps: AdamW moment decay rates and denominator epsilon
        warmup_iters / warmup_start_lr: linear warm-up of the cosine schedule
        min_lr: floor reached at the end of the cosine schedule
        eval_interval: steps between evaluations (0 disables)
        checkpoint_interval: steps between checkpoints (0 saves only at the end)
        aux_weight: None uses the decoder's configured weight
    """
    optimizer: OptimizerKind = OptimizerKind.SGD_POLY
    base_lr: float = 0.01
    max_iters: int = 200
    batch_size: int = 2
    seed: int = 0
    deterministic: bool = False
    momentum: float = 0.9
    weight_decay: Optional[float] = None
    poly_power: float = 0.9
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    warmup_iters: int = 0
    warmup_start_lr: float = 0.0
    min_lr: float = 0.0
    eval_interval: int = 50
    checkpoint_interval: int = 0
    aux_weight: Optional[float] = None

    @property
    def effective_weight_decay(self) -> float:
        if self.weight_decay is not None:
            return self.weight_decay
        return 0.05 if self.optimizer is OptimizerKind.ADAMW_COSINE else 0.0

    def validate(self) -> None:
        if self.max_iters < 1 or self.batch_size < 1:
            raise ConfigError(f"max_iters and batch_size must be positive ({self.max_iters}, {self.batch_size})")
        if self.base_lr <= 0:
            raise ConfigError(f"base_lr must be positive, got {self.base_lr}")
        if not 0 <= self.warmup_iters < self.max_iters:
            raise ConfigError(f"warmup_iters {self.warmup_iters} must lie in [0, {self.max_iters})")
        if not 0 <= self.min_lr <= self.base_lr:
            raise ConfigError(f"min_lr {self.min_lr} must lie in [0, base_lr]")
        if self.eval_interval < 0 or self.checkpoint_interval < 0:
            raise ConfigError("eval_interval and checkpoint_interval must be >= 0")

    @classmethod
    def for_optimizer(cls, kind: OptimizerKind, **changes) -> "RecipeConfig":
        """Recipe defaults per optimizer, then explicit changes on top"""
        if kind is OptimizerKind.ADAMW_COSINE:
            max_iters = changes.get("max_iters", cls.max_iters)
            base = dict(optimizer=kind, base_lr=1e-3, weight_decay=0.05,
                        warmup_iters=max_iters // 20)
        else:
            base = dict(optimizer=kind, base_lr=0.01, weight_decay=0.0)
        base.update(changes)
        return cls(**base)


@dataclass
class TrainState:
    """
    Everything needed to continue a run exactly

    `moments` maps parameter name to its optimizer buffers ('momentum' for
    SGD, 'exp_avg' / 'exp_avg_sq' for AdamW). Random streams are derived
    from (seed, step), so no generator state is stored.
    """
    step: int = 0
    lr: float = 0.0
    seed: int = 0
    moments: Dict[str, Dict[str, np.ndarray]] = field(default_factory=dict)


# ---------------------------------------------------------------------------
# schedules
# ---------------------------------------------------------------------------
def poly_lr(step: int, base_lr: float, max_iters: int, power: float = 0.9) -> float:
    """base * (1 - t / max_iters) ^ power; exactly 0 at t == max_iters"""
    if not 0 <= step <= max_iters:
        raise ValueError(f"step {step} is outside [0, {max_iters}]")
    return base_lr * (1.0 - step / max_iters) ** power


def cosine_lr(step: int, base_lr: float, max_iters: int, warmup_iters: int = 0,
              warmup_start_lr: float = 0.0, min_lr: float = 0.0) -> float:
    """
    Linear ramp warmup_start_lr -> base_lr over warmup_iters, then half a
    cosine from base_lr down to min_lr at max_iters
    """
    if not 0 <= step <= max_iters:
        raise ValueError(f"step {step} is outside [0, {max_iters}]")
    if step < warmup_iters:
        return warmup_start_lr + (base_lr - warmup_start_lr) * step / warmup_iters
    span = max_iters - warmup_iters
    progress = 1.0 if span == 0 else (step - warmup_iters) / span
    return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + math.cos(math.pi * progress))


def learning_rate(step: int, recipe: RecipeConfig) -> float:
    if recipe.optimizer is OptimizerKind.SGD_POLY:
        return poly_lr(step, recipe.base_lr, recipe.max_iters, recipe.poly_power)
    return cosine_lr(step, recipe.base_lr, recipe.max_iters, recipe.warmup_iters,
                     recipe.warmup_start_lr, recipe.min_lr)


# ---------------------------------------------------------------------------
# updates
# ---------------------------------------------------------------------------
def _check_step(state: TrainState, recipe: RecipeConfig) -> None:
    if state.step >= recipe.max_iters:
        raise ValueError(f"step {state.step} has reached max_iters {recipe.max_iters}")


def sgd_poly_step(state: TrainState, params: Mapping[str, Parameter],
                  grads: Mapping[str, np.ndarray], recipe: RecipeConfig) -> TrainState:
    """
    buf = momentum * buf + (g + wd * p);  p -= lr(t) * buf

    Parameters without a gradient are left untouched.
    """
    _check_step(state, recipe)
    lr = poly_lr(state.step, recipe.base_lr, recipe.max_iters, recipe.poly_power)
    wd = recipe.effective_weight_decay
    moments = dict(state.moments)
    for name, param in params.items():
        grad = grads.get(name)
        if grad is None:
            continue
        if wd:
            grad = grad + wd * param.data
        previous = moments.get(name, {}).get("momentum")
        buf = grad.copy() if previous is None else recipe.momentum * previous + grad
        moments[name] = {"momentum": buf.astype(param.dtype, copy=False)}
        param.data = (param.data - lr * buf).astype(param.dtype, copy=False)
    return replace(state, step=state.step + 1, lr=lr, moments=moments)


def adamw_cosine_step(state: TrainState, params: Mapping[str, Parameter],
                      grads: Mapping[str, np.ndarray], recipe: RecipeConfig) -> TrainState:
    """
    Bias-corrected Adam with decoupled weight decay

    Weight decay applies only to matrices and kernels (ndim >= 2); norms and
    biases are exempt.
    """
    _check_step(state, recipe)
    lr = cosine_lr(state.step, recipe.base_lr, recipe.max_iters, recipe.warmup_iters,
                   recipe.warmup_start_lr, recipe.min_lr)
    beta1, beta2 = recipe.betas
    t = state.step + 1
    wd = recipe.effective_weight_decay
    moments = dict(state.moments)
    for name, param in params.items():
        grad = grads.get(name)
        if grad is None:
            continue
        slot = moments.get(name)
        if slot is None:
            slot = {"exp_avg": np.zeros_like(param.data), "exp_avg_sq": np.zeros_like(param.data)}
        exp_avg = beta1 * slot["exp_avg"] + (1.0 - beta1) * grad
        exp_avg_sq = beta2 * slot["exp_avg_sq"] + (1.0 - beta2) * grad * grad
        m_hat = exp_avg / (1.0 - beta1 ** t)
        v_hat = exp_avg_sq / (1.0 - beta2 ** t)
        value = param.data
        if wd and param.ndim >= 2:
            value = value * (1.0 - lr * wd)
        value = value - lr * m_hat / (np.sqrt(v_hat) + recipe.eps)
        param.data = value.astype(param.dtype, copy=False)
        moments[name] = {
            "exp_avg": exp_avg.astype(param.dtype, copy=False),
            "exp_avg_sq": exp_avg_sq.astype(param.dtype, copy=False),
        }
    return replace(state, step=state.step + 1, lr=lr, moments=moments)


def optimizer_step(state: TrainState, params: Mapping[str, Parameter],
                   grads: Mapping[str, np.ndarray], recipe: RecipeConfig) -> TrainState:
    if recipe.optimizer is OptimizerKind.SGD_POLY:
        return sgd_poly_step(state, params, grads, recipe)
    return adamw_cosine_step(state, params, grads, recipe)
