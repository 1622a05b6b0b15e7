"""
有限差分梯度：既是测试基准，也是精确元梯度模式的实现基础
"""

from typing import Callable, Dict, Mapping

import numpy as np
from loguru import logger

from ..models.params import ParamSet
from ..utils.exceptions import ConfigError, MetaGradientError

def finite_diff_grad(
    f: Callable[[ParamSet], float],
    params: ParamSet,
    epsilon: float = 1e-6
) -> Dict[str, np.ndarray]:
    """逐坐标中心差分 (f(p+εe) − f(p−εe)) / 2ε

    Args:
        f: 参数集 → 标量，必须是确定性的（调用方负责固定所有随机种子）
        params: 求导点
        epsilon: 差分步长

    Returns:
        参数名 → 梯度估计

    Raises:
        ConfigError: epsilon 非正
        MetaGradientError: 检测到 f 不确定
    """
    if not epsilon > 0:
        raise ConfigError(f"epsilon 必须为正数: {epsilon}")
    if float(f(params)) != float(f(params)):
        raise MetaGradientError("有限差分要求确定性的目标函数，两次求值结果不同")

    base = params.flatten()
    grad = np.zeros_like(base)
    for i in range(base.size):
        original = base[i]
        base[i] = original + epsilon
        plus = float(f(params.unflatten(base)))
        base[i] = original - epsilon
        minus = float(f(params.unflatten(base)))
        base[i] = original
        grad[i] = (plus - minus) / (2.0 * epsilon)
    logger.debug(f"有限差分完成: {base.size} 个坐标, epsilon={epsilon}")

    flat = params.unflatten(grad)
    return {name: np.array(value) for name, value in flat.items()}

def relative_error(a: Mapping[str, np.ndarray], b: Mapping[str, np.ndarray], floor: float = 1e-5) -> float:
    """两个梯度映射之间的最大相对误差 |a−b| / max(|a|, |b|, floor)"""
    worst = 0.0
    for name in a:
        x = np.asarray(a[name], dtype=np.float64)
        y = np.asarray(b[name], dtype=np.float64)
        denominator = np.maximum(np.maximum(np.abs(x), np.abs(y)), floor)
        if x.size:
            worst = max(worst, float(np.max(np.abs(x - y) / denominator)))
    return worst
