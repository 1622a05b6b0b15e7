"""
数据处理模块
"""

from .dataset import Sample, Task, TaskStream, split_support_query
from .dataset_handler import (
    BaseDatasetHandler,
    JSONLDatasetHandler,
    TSVDatasetHandler,
    load_jsonl,
    load_tsv
)
from .synthetic import SyntheticSpec, gen_synthetic_stream
from .tokenizer import tokenize

__all__ = [
    'Sample',
    'Task',
    'TaskStream',
    'split_support_query',
    'BaseDatasetHandler',
    'JSONLDatasetHandler',
    'TSVDatasetHandler',
    'load_jsonl',
    'load_tsv',
    'SyntheticSpec',
    'gen_synthetic_stream',
    'tokenize'
]
