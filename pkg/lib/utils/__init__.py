"""
工具模块
"""

from .exceptions import (
    MetaCLError,
    ConfigError,
    ShapeError,
    NumericError,
    GraphError,
    DataError,
    CheckpointError,
    MetaGradientError,
    OptimizerStateError,
    FreezeViolationError,
    MetricError,
    ReportError
)
from .helpers import (
    format_json,
    validate_task_id,
    ensure_directory,
    merge_dicts,
    array_checksum
)
from .logger import LoggerManager

__all__ = [
    # 异常类
    'MetaCLError',
    'ConfigError',
    'ShapeError',
    'NumericError',
    'GraphError',
    'DataError',
    'CheckpointError',
    'MetaGradientError',
    'OptimizerStateError',
    'FreezeViolationError',
    'MetricError',
    'ReportError',
    # 工具函数
    'format_json',
    'validate_task_id',
    'ensure_directory',
    'merge_dicts',
    'array_checksum',
    # 日志管理
    'LoggerManager'
]
