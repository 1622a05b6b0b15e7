import csv
import json
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd
from loguru import logger

from ..models.network import TaskKind
from ..utils.exceptions import DataError
from .dataset import Sample

@dataclass(frozen=True)
class DatasetSchema:
    """JSON-lines 数据的字段映射"""
    kind: TaskKind = TaskKind.CLASSIFICATION
    text_field: str = 'text'
    pair_field: Optional[str] = 'text_pair'
    label_field: str = 'label'
    label_map: Optional[Dict[str, int]] = None

@dataclass(frozen=True)
class ColumnSpec:
    """TSV 数据的列下标（从0开始）"""
    text: int
    label: int
    pair: Optional[int] = None
    kind: TaskKind = TaskKind.CLASSIFICATION
    label_map: Optional[Dict[str, int]] = None

class BaseDatasetHandler(ABC):
    """数据集加载器基类"""
    def __init__(self, path: str, kind: TaskKind, label_map: Optional[Dict[str, int]] = None):
        self.path = str(path)
        self.kind = TaskKind(kind)
        self.label_map = {str(k): int(v) for k, v in label_map.items()} if label_map else None
        if not Path(self.path).is_file():
            raise DataError("数据文件不存在", self.path)

    @abstractmethod
    def load_samples(self) -> List[Sample]:
        """加载全部样本"""
        pass

    def convert_label(self, raw: Any, line: int) -> Any:
        """把原始标签转换为类别下标或浮点目标

        Raises:
            DataError: 标签无法映射，附带行号
        """
        if self.kind is TaskKind.REGRESSION:
            try:
                value = float(raw)
            except (TypeError, ValueError):
                raise DataError(f"无法解析回归目标 {raw!r}", self.path, line)
            if not np.isfinite(value):
                raise DataError(f"回归目标不是有限数值 {raw!r}", self.path, line)
            return value

        if self.label_map is not None:
            key = str(raw)
            if key not in self.label_map:
                raise DataError(f"未知的标签 {raw!r}，可选 {sorted(self.label_map)}", self.path, line)
            return self.label_map[key]
        try:
            value = float(raw)
        except (TypeError, ValueError):
            raise DataError(f"未知的标签 {raw!r}（未提供 label_map）", self.path, line)
        if value != int(value) or value < 0:
            raise DataError(f"分类标签必须是非负整数: {raw!r}", self.path, line)
        return int(value)

    def make_sample(self, text: Any, pair: Any, label: Any, line: int) -> Sample:
        if not isinstance(text, str):
            raise DataError(f"文本字段必须是字符串: {text!r}", self.path, line)
        if pair is not None and not isinstance(pair, str):
            raise DataError(f"句对字段必须是字符串: {pair!r}", self.path, line)
        return Sample(text=text, label=self.convert_label(label, line), text_pair=pair)

class JSONLDatasetHandler(BaseDatasetHandler):
    """JSON-lines 数据加载器，每行一个对象"""
    def __init__(self, path: str, schema: DatasetSchema):
        super().__init__(path, schema.kind, schema.label_map)
        self.schema = schema

    def load_samples(self) -> List[Sample]:
        samples = []
        with open(self.path, 'r', encoding='utf-8') as f:
            for line_no, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                try:
                    row = json.loads(line)
                except json.JSONDecodeError as e:
                    raise DataError(f"JSON格式错误: {e.msg}", self.path, line_no)
                if not isinstance(row, dict):
                    raise DataError("每行必须是JSON对象", self.path, line_no)
                for key in (self.schema.text_field, self.schema.label_field):
                    if key not in row:
                        raise DataError(f"缺少字段 {key!r}", self.path, line_no)
                pair = row.get(self.schema.pair_field) if self.schema.pair_field else None
                samples.append(self.make_sample(
                    row[self.schema.text_field], pair, row[self.schema.label_field], line_no
                ))
        logger.info(f"成功从 {self.path} 加载 {len(samples)} 个样本")
        return samples

class TSVDatasetHandler(BaseDatasetHandler):
    """制表符分隔数据加载器（GLUE格式）"""
    def __init__(self, path: str, columns: ColumnSpec, has_header: bool = True):
        super().__init__(path, columns.kind, columns.label_map)
        self.columns = columns
        self.has_header = has_header

    def load_samples(self) -> List[Sample]:
        try:
            df = pd.read_csv(
                self.path,
                sep='\t',
                header=0 if self.has_header else None,
                dtype=str,
                keep_default_na=False,
                quoting=csv.QUOTE_NONE,
                encoding='utf-8'
            )
        except pd.errors.ParserError as e:
            raise DataError(f"TSV格式错误: {e}", self.path)
        except pd.errors.EmptyDataError:
            return []

        wanted = [c for c in (self.columns.text, self.columns.pair, self.columns.label) if c is not None]
        if max(wanted) >= df.shape[1]:
            raise DataError(f"列下标 {max(wanted)} 超出列数 {df.shape[1]}", self.path)

        offset = 2 if self.has_header else 1
        samples = []
        for position, row in enumerate(df.itertuples(index=False, name=None)):
            line_no = position + offset
            values = {}
            for role, column in (('text', self.columns.text), ('pair', self.columns.pair), ('label', self.columns.label)):
                if column is None:
                    values[role] = None
                    continue
                value = row[column]
                if value is None or (isinstance(value, float) and np.isnan(value)):
                    raise DataError(f"第 {column} 列缺失", self.path, line_no)
                values[role] = value
            samples.append(self.make_sample(values['text'], values['pair'], values['label'], line_no))
        logger.info(f"成功从 {self.path} 加载 {len(samples)} 个样本")
        return samples

def load_jsonl(path: str, schema: DatasetSchema) -> List[Sample]:
    """加载 JSON-lines 数据集"""
    return JSONLDatasetHandler(path, schema).load_samples()

def load_tsv(path: str, columns: ColumnSpec, has_header: bool = True) -> List[Sample]:
    """加载 TSV 数据集"""
    return TSVDatasetHandler(path, columns, has_header).load_samples()
