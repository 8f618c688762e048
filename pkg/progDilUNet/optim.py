# -*- coding: utf-8 -*-
"""Adam, Glorot initialisation and the learning rate plateau schedule."""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, Optional, Tuple, Union

import numpy as np

from progDilUNet.exceptions import ShapeError, TrainingFault
from progDilUNet.settings import (
    ADAM_EPS_DFT,
    BETA1_DFT,
    BETA2_DFT,
    LR_DFT,
    LR_FACTOR_DFT,
    PATIENCE_DFT,
)
from progDilUNet.tensor import DTYPE, Shape, Tensor

logger = logging.getLogger(__name__)

rngT = Union[None, int, np.random.Generator]


def glorot_bound(shape) -> float:
    """sqrt(6 / (fan_in + fan_out)) for an (out, in, k, k) weight."""
    out_c, in_c, kh, kw = Shape(shape).dims
    fan_in, fan_out = in_c * kh * kw, out_c * kh * kw
    return math.sqrt(6.0 / (fan_in + fan_out))


def glorot_init(shape, rng: rngT = None, dtype=DTYPE) -> Tensor:
    """Uniform samples in +-glorot_bound(shape); an int rng is a seed."""
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    bound = glorot_bound(shape)
    return Tensor(rng.uniform(-bound, bound, size=Shape(shape).dims), dtype=dtype)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = LR_DFT
    beta1: float = BETA1_DFT
    beta2: float = BETA2_DFT
    eps: float = ADAM_EPS_DFT

    @classmethod
    def like(cls, param: Tensor, **kwargs) -> "AdamState":
        return cls(np.zeros_like(param.data), np.zeros_like(param.data), **kwargs)


def adam_step(param: Tensor, grad, state: AdamState) -> Tuple[Tensor, AdamState]:
    """One bias corrected Adam update, param and state are modified in place."""
    g = np.asarray(grad)
    if g.shape != param.data.shape or state.m.shape != g.shape:
        raise ShapeError(f"adam: param {param.data.shape}, grad {g.shape}, m {state.m.shape}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    state.m[...] = b1 * state.m + (1 - b1) * g
    state.v[...] = b2 * state.v + (1 - b2) * g * g
    m_hat = state.m / (1 - b1 ** state.t)
    v_hat = state.v / (1 - b2 ** state.t)
    param.data[...] = param.data - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return param, state


class Adam:
    """Adam over a named parameter registry, one AdamState per parameter."""

    def __init__(
        self,
        params: Dict[str, Tensor],
        lr: float = LR_DFT,
        betas: Tuple[float, float] = (BETA1_DFT, BETA2_DFT),
        eps: float = ADAM_EPS_DFT,
    ):
        if lr <= 0:
            raise ValueError(f"lr must be > 0, got {lr}")
        self.params = params
        self.states = {
            name: AdamState.like(p, lr=lr, beta1=betas[0], beta2=betas[1], eps=eps)
            for name, p in params.items()
        }

    @property
    def lr(self) -> float:
        return next(iter(self.states.values())).lr

    @lr.setter
    def lr(self, value: float) -> None:
        for s in self.states.values():
            s.lr = value

    @property
    def t(self) -> int:
        return next(iter(self.states.values())).t

    @t.setter
    def t(self, value: int) -> None:
        for s in self.states.values():
            s.t = value

    def step(self) -> None:
        for name, p in self.params.items():
            if p.grad is None:
                continue
            adam_step(p, p.grad, self.states[name])

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def moments(self) -> Iterable[Tuple[str, np.ndarray]]:
        """Named first and second moments, for checkpoints."""
        for name, s in self.states.items():
            yield f"adam.m.{name}", s.m
            yield f"adam.v.{name}", s.v


@dataclass
class PlateauSchedule:
    """Multiply lr by factor after `patience` epochs without strict improvement."""

    lr: float = LR_DFT
    patience: int = PATIENCE_DFT
    factor: float = LR_FACTOR_DFT
    best_metric: Optional[float] = None
    epochs_since_improvement: int = 0
    halvings: int = field(default=0)

    def state(self) -> dict:
        return {
            "lr": self.lr,
            "best_metric": self.best_metric,
            "epochs_since_improvement": self.epochs_since_improvement,
            "halvings": self.halvings,
        }

    def load_state(self, state: dict) -> None:
        for k, v in state.items():
            setattr(self, k, v)


def schedule_update(s: PlateauSchedule, val_metric: float) -> float:
    """Feed one validation metric (higher is better), return the new lr."""
    if val_metric is None or not math.isfinite(val_metric):
        raise TrainingFault(f"validation metric is {val_metric}")
    if s.best_metric is None or val_metric > s.best_metric:
        s.best_metric = val_metric
        s.epochs_since_improvement = 0
        return s.lr

    s.epochs_since_improvement += 1
    if s.epochs_since_improvement >= s.patience:
        old = s.lr
        s.lr = s.lr * s.factor
        s.epochs_since_improvement = 0
        s.halvings += 1
        logger.warning(f"No improvement for {s.patience} epochs, lr {old:g} -> {s.lr:g}")
    return s.lr
