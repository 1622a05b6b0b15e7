"""
参数更新规则与学习率调度
"""

import math
from dataclasses import dataclass, field
from typing import Dict, Mapping, Tuple

import numpy as np

from ..models.params import ParamSet
from ..utils.exceptions import ConfigError, OptimizerStateError

def sgd_step(params: ParamSet, grads: Mapping[str, np.ndarray], lr: float) -> ParamSet:
    """p ← p − lr·g，返回新的参数集"""
    params.check_aligned(grads, 'sgd_step')
    return params.replace({name: value - lr * np.asarray(grads[name]) for name, value in params.items()})

@dataclass
class AdamState:
    """Adam的一阶、二阶矩与步数"""
    m: Dict[str, np.ndarray]
    v: Dict[str, np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    consumed: bool = field(default=False, repr=False)

    @classmethod
    def zeros(cls, params: ParamSet, **hyper) -> 'AdamState':
        return cls(
            m={name: np.zeros_like(value) for name, value in params.items()},
            v={name: np.zeros_like(value) for name, value in params.items()},
            **hyper
        )

def adam_step(
    state: AdamState,
    params: ParamSet,
    grads: Mapping[str, np.ndarray],
    lr: float
) -> Tuple[ParamSet, AdamState]:
    """带偏差修正的Adam更新

    每个状态只能使用一次；对已使用过的状态再次更新视为步数倒退。

    Raises:
        OptimizerStateError: 状态已被使用
    """
    if state.consumed:
        raise OptimizerStateError(f"Adam状态 (t={state.t}) 已被使用，不能重复更新")
    params.check_aligned(grads, 'adam_step')
    if set(state.m) != set(params.names()):
        raise OptimizerStateError("Adam状态与参数集不匹配")

    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1 ** t
    correction2 = 1.0 - b2 ** t
    new_m, new_v, updated = {}, {}, {}
    for name, value in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * g * g
        m_hat = m / correction1
        v_hat = v / correction2
        updated[name] = value - lr * m_hat / (np.sqrt(v_hat) + state.eps)
        new_m[name], new_v[name] = m, v

    state.consumed = True
    new_state = AdamState(new_m, new_v, t, b1, b2, state.eps)
    return params.replace(updated), new_state

@dataclass(frozen=True)
class CosineSchedule:
    lr_max: float
    total_steps: int
    lr_min: float = 0.0

    def __post_init__(self):
        if not self.lr_max > 0:
            raise ConfigError(f"CosineSchedule.lr_max 必须为正: {self.lr_max}")
        if self.lr_min < 0 or self.lr_min > self.lr_max:
            raise ConfigError(f"CosineSchedule.lr_min 必须在[0, lr_max]内: {self.lr_min}")
        if self.total_steps < 1:
            raise ConfigError(f"CosineSchedule.total_steps 必须为正: {self.total_steps}")

def cosine_lr(schedule: CosineSchedule, step: int) -> float:
    """lr_min + 0.5·(lr_max − lr_min)·(1 + cos(π·step/total_steps))"""
    if not 0 <= step <= schedule.total_steps:
        raise ConfigError(f"步数超出范围[0, {schedule.total_steps}]: {step}")
    if step == 0:
        return schedule.lr_max
    if step == schedule.total_steps:
        return schedule.lr_min
    cosine = math.cos(math.pi * step / schedule.total_steps)
    return schedule.lr_min + 0.5 * (schedule.lr_max - schedule.lr_min) * (1.0 + cosine)

def constant_or_cosine(lr: float, total_steps: int, lr_min: float = 0.0):
    """lr 为0时返回恒为0的调度函数，否则返回余弦退火调度函数"""
    if lr == 0 or total_steps < 1:
        return lambda step: 0.0 if lr == 0 else lr
    schedule = CosineSchedule(lr_max=lr, total_steps=total_steps, lr_min=min(lr_min, lr))
    return lambda step: cosine_lr(schedule, step)
