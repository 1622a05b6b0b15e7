"""
元测试与遗忘评估
"""

import time
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np
from loguru import logger

from ..handlers.dataset import TaskStream
from ..models.network import RngKey, init_pln
from ..models.params import ParamSet
from ..utils.exceptions import DataError, MetricError
from .config import MetaConfig
from .meta_learner import DatasetCache, evaluate, joint_finetune

# 元测试任务头使用与元训练不重叠的种子流
TEST_HEAD_OFFSET = 1_000_000

@dataclass
class ForgettingMatrix:
    """每个任务微调后立即测得的指标与整个目标流结束后重测的指标"""
    tasks: List[str]
    metrics: List[str]
    immediate: List[float]
    final: List[float]
    immediate_loss: List[float] = field(default_factory=list)
    final_loss: List[float] = field(default_factory=list)

    def __post_init__(self):
        n = len(self.tasks)
        if not (len(self.metrics) == len(self.immediate) == len(self.final) == n):
            raise MetricError("ForgettingMatrix: 各列长度必须一致")

    def __len__(self) -> int:
        return len(self.tasks)

    def rows(self) -> List[Dict[str, Any]]:
        """报告行：task, metric, immediate, final, delta"""
        return [
            {
                'task': task,
                'metric': metric,
                'immediate': imm,
                'final': fin,
                'delta': imm - fin,
            }
            for task, metric, imm, fin in zip(self.tasks, self.metrics, self.immediate, self.final)
        ]

@dataclass
class ForgettingSummary:
    deltas: Dict[str, float]
    mean: Optional[float]

def forgetting_delta(matrix: ForgettingMatrix) -> ForgettingSummary:
    """delta_i = immediate_i − final_i；最后一个任务之后没有训练，不计入"""
    deltas = {
        task: imm - fin
        for task, imm, fin in zip(matrix.tasks[:-1], matrix.immediate[:-1], matrix.final[:-1])
    }
    mean = float(np.mean(list(deltas.values()))) if deltas else None
    return ForgettingSummary(deltas, mean)

@dataclass
class EvalReport:
    matrix: ForgettingMatrix
    config: Dict[str, Any]
    seed: int
    duration: float
    checkpoint: Optional[str] = None
    suite: str = 'default'

    @property
    def method(self) -> str:
        return str(self.config.get('experiment', {}).get('method', 'unknown'))

    def to_dict(self) -> Dict[str, Any]:
        summary = forgetting_delta(self.matrix)
        return {
            'tasks': self.matrix.rows(),
            'losses': {
                'immediate': dict(zip(self.matrix.tasks, self.matrix.immediate_loss)),
                'final': dict(zip(self.matrix.tasks, self.matrix.final_loss)),
            },
            'mean_forgetting_delta': summary.mean,
            'config': self.config,
            'seed': self.seed,
            'duration_seconds': self.duration,
            'checkpoint': self.checkpoint,
            'suite': self.suite,
            'method': self.method,
        }

def meta_test(
    theta: ParamSet,
    targets: TaskStream,
    config: MetaConfig,
    head_hidden_dim: int = 0
) -> ForgettingMatrix:
    """按顺序在目标任务上联合微调 θ 与新的 W，记录即时指标；最后用各任务保留的 W_i
    与最终的共享 θ 重新评估

    θ 的修改在任务之间累积（持续学习设定），传入的参数集本身不会被修改。

    Raises:
        DataError: 任务缺少 train 或 eval 划分
    """
    if len(targets) == 0:
        raise DataError("meta_test: 目标任务流为空")
    for task in targets:
        task.split('train')
        task.split('eval')

    encoder = theta.spec
    cache = DatasetCache(encoder)
    base_key = RngKey(config.seed).fold_in(9)
    heads: List[ParamSet] = []
    immediate, immediate_loss = [], []

    for index, task in enumerate(targets):
        w = init_pln(task.head_spec(encoder, head_hidden_dim), config.seed, task_index=TEST_HEAD_OFFSET + index)
        theta, w = joint_finetune(
            theta, w, cache.get(task, 'train'), config.inner_steps_test,
            config.finetune_lr, config.batch_size, base_key.fold_in(index), config.finetune_theta_lr
        )
        value, task_loss = evaluate(theta, w, cache.get(task, 'eval'), task.metric)
        heads.append(w)
        immediate.append(value)
        immediate_loss.append(task_loss)
        logger.info(f"元测试任务 {task.id}: {task.metric}={value:.4f} loss={task_loss:.4f}")

    final, final_loss = [], []
    for task, w in zip(targets, heads):
        value, task_loss = evaluate(theta, w, cache.get(task, 'eval'), task.metric)
        final.append(value)
        final_loss.append(task_loss)

    matrix = ForgettingMatrix(
        tasks=targets.ids,
        metrics=[task.metric for task in targets],
        immediate=immediate,
        final=final,
        immediate_loss=immediate_loss,
        final_loss=final_loss,
    )
    summary = forgetting_delta(matrix)
    logger.info(f"元测试完成: 平均遗忘量 {summary.mean}")
    return matrix

def run_meta_test(
    theta: ParamSet,
    targets: TaskStream,
    config: MetaConfig,
    snapshot: Dict[str, Any],
    head_hidden_dim: int = 0,
    checkpoint: Optional[str] = None,
    suite: str = 'default'
) -> EvalReport:
    """执行 meta_test 并附带配置快照、种子与耗时"""
    started = time.perf_counter()
    matrix = meta_test(theta, targets, config, head_hidden_dim)
    return EvalReport(matrix, snapshot, config.seed, time.perf_counter() - started, checkpoint, suite)
