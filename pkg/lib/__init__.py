"""
元持续学习实验框架核心库
"""

from .core.config import ExperimentConfig, MetaConfig
from .core.runner import ExperimentRunner, run_command
from .utils.logger import LoggerManager

__version__ = '0.1.0'

__all__ = [
    'ExperimentConfig',
    'MetaConfig',
    'ExperimentRunner',
    'run_command',
    'LoggerManager'
]
