"""
报告生成模块
"""

from .forgetting_reporter import ForgettingReporter
from .comparison_reporter import ComparisonReporter

__all__ = ['ForgettingReporter', 'ComparisonReporter']
