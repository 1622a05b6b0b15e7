"""
评价指标：准确率、Matthews相关系数、Pearson相关系数
"""

from typing import Sequence, Union

import numpy as np

from .exceptions import MetricError

ArrayLike = Union[Sequence[float], np.ndarray]

def _paired(predictions: ArrayLike, labels: ArrayLike, name: str, min_len: int = 1):
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.ndim != 1 or labels.ndim != 1:
        raise MetricError(f"{name}: 输入必须是一维序列")
    if len(predictions) != len(labels):
        raise MetricError(f"{name}: 长度不一致 {len(predictions)} 与 {len(labels)}")
    if len(predictions) < min_len:
        raise MetricError(f"{name}: 至少需要 {min_len} 个样本")
    return predictions, labels

def accuracy(predictions: ArrayLike, labels: ArrayLike) -> float:
    """完全匹配的比例

    Raises:
        MetricError: 长度不一致或为空
    """
    predictions, labels = _paired(predictions, labels, 'accuracy')
    return float(np.mean(predictions == labels))

def matthews_corr(predictions: ArrayLike, labels: ArrayLike) -> float:
    """二分类Matthews相关系数

    任一分母因子为0时返回0。

    Raises:
        MetricError: 非二值输入或长度不一致
    """
    predictions, labels = _paired(predictions, labels, 'matthews_corr')
    for name, values in (('predictions', predictions), ('labels', labels)):
        if not np.all(np.isin(values, (0, 1))):
            raise MetricError(f"matthews_corr: {name} 必须是0/1二值")
    predictions = predictions.astype(bool)
    labels = labels.astype(bool)

    tp = float(np.sum(predictions & labels))
    tn = float(np.sum(~predictions & ~labels))
    fp = float(np.sum(predictions & ~labels))
    fn = float(np.sum(~predictions & labels))

    denominator = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    if denominator == 0:
        return 0.0
    return float((tp * tn - fp * fn) / np.sqrt(denominator))

def pearson_corr(x: ArrayLike, y: ArrayLike) -> float:
    """样本Pearson相关系数

    Raises:
        MetricError: 长度不足2、长度不一致或任一向量为常数（未定义）
    """
    x, y = _paired(x, y, 'pearson_corr', min_len=2)
    x = x.astype(np.float64)
    y = y.astype(np.float64)
    # 常数判定基于原始输入，不看居中后的方差
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise MetricError("pearson_corr: 常数向量的相关系数未定义")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(np.dot(dx, dx))
    syy = float(np.dot(dy, dy))
    if sxx == 0.0 or syy == 0.0:
        raise MetricError("pearson_corr: 常数向量的相关系数未定义")
    r = float(np.dot(dx, dy)) / np.sqrt(sxx * syy)
    return float(np.clip(r, -1.0, 1.0))

METRICS = {
    'accuracy': accuracy,
    'matthews': matthews_corr,
    'pearson': pearson_corr,
}

def compute_metric(name: str, predictions: ArrayLike, labels: ArrayLike) -> float:
    """按名称计算指标"""
    if name not in METRICS:
        raise MetricError(f"未知的评价指标: {name}")
    return METRICS[name](predictions, labels)
