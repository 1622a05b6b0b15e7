"""
核心功能模块：自动微分、优化器、元学习目标与实验运行
"""

from .tensor import Graph, Tensor, backward
from .config import ExperimentConfig, MetaConfig
from .meta_learner import inner_adapt, meta_train, oml_objective, outer_grad, sequential_baseline
from .evaluator import ForgettingMatrix, forgetting_delta, meta_test
from .runner import ExperimentRunner, run_command

__all__ = [
    'Graph',
    'Tensor',
    'backward',
    'ExperimentConfig',
    'MetaConfig',
    'inner_adapt',
    'meta_train',
    'oml_objective',
    'outer_grad',
    'sequential_baseline',
    'ForgettingMatrix',
    'forgetting_delta',
    'meta_test',
    'ExperimentRunner',
    'run_command'
]
