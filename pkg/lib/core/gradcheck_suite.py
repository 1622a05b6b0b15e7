"""
梯度自检：在缩小后的模型上用有限差分核对反向传播与元梯度
"""

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np
from loguru import logger

from ..handlers.dataset import EncodedDataset
from ..models.network import EncoderSpec, HeadSpec, TaskKind, head_spec_for, init_pln, init_rln
from ..models.params import ParamSet
from .config import GradMode, InnerMode, MetaConfig
from .gradcheck import finite_diff_grad, relative_error
from .meta_learner import head_loss, loss_value, outer_grad
from .tensor import backward

GradHook = Callable[[Dict[str, np.ndarray]], Dict[str, np.ndarray]]

DEFAULT_TOLERANCE = 1e-4

@dataclass
class CheckResult:
    name: str
    error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.error)) and self.error <= self.tolerance

@dataclass
class GradCheckSummary:
    results: List[CheckResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return bool(self.results) and all(r.passed for r in self.results)

    def to_dict(self) -> Dict[str, object]:
        return {
            'passed': self.passed,
            'checks': [
                {'name': r.name, 'error': r.error, 'tolerance': r.tolerance, 'passed': r.passed}
                for r in self.results
            ],
        }

def corrupt_gradient(grads: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
    """负对照：把每个梯度放大 10%"""
    return {name: value * 1.1 + 1e-3 for name, value in grads.items()}

def reduced_spec(spec: EncoderSpec) -> EncoderSpec:
    """保持结构、缩小尺寸的编码器规格"""
    return EncoderSpec(
        vocab_size=min(spec.vocab_size, 24),
        embed_dim=min(spec.embed_dim, 4),
        hidden_dims=tuple(min(d, 5) for d in spec.hidden_dims),
        max_len=min(spec.max_len, 6),
        dropout_rate=spec.dropout_rate,
    )

def random_dataset(spec: EncoderSpec, kind: TaskKind, size: int, rng: np.random.Generator,
                   num_classes: int = 2) -> EncodedDataset:
    """随机词元与随机目标；每行至少一个有效位置"""
    token_ids = rng.integers(0, spec.vocab_size, size=(size, spec.max_len))
    lengths = rng.integers(1, spec.max_len + 1, size=size)
    mask = (np.arange(spec.max_len)[None, :] < lengths[:, None]).astype(np.float64)
    token_ids = np.where(mask > 0, token_ids, 0).astype(np.int64)
    if TaskKind(kind) is TaskKind.CLASSIFICATION:
        targets = rng.integers(0, num_classes, size=size).astype(np.int64)
    else:
        targets = rng.normal(size=size)
    return EncodedDataset(token_ids, mask, targets, TaskKind(kind))

def check_backward(
    theta: ParamSet,
    w: ParamSet,
    data: EncodedDataset,
    epsilon: float = 1e-6,
    tolerance: float = DEFAULT_TOLERANCE,
    hook: Optional[GradHook] = None,
    name: str = 'backward'
) -> CheckResult:
    """联合反向传播得到的 θ、W 梯度与中心差分的最大相对误差"""
    root = head_loss(theta, w, data, theta_trainable=True, w_trainable=True)
    analytic = backward(root, [theta, w])
    if hook is not None:
        analytic = hook(analytic)
    numeric = dict(finite_diff_grad(lambda th: loss_value(th, w, data), theta, epsilon))
    numeric.update(finite_diff_grad(lambda ww: loss_value(theta, ww, data), w, epsilon))
    return CheckResult(name, relative_error(analytic, numeric), tolerance)

def check_zero_step_consistency(
    theta: ParamSet,
    w0: ParamSet,
    support: EncodedDataset,
    query: EncodedDataset,
    config: MetaConfig,
    tolerance: float = DEFAULT_TOLERANCE,
    hook: Optional[GradHook] = None
) -> CheckResult:
    """inner_steps=0 时 first_order 与 exact_fd 应给出同一梯度"""
    base = config.replace(inner_steps_train=0, inner_mode=InnerMode.BATCHED.value)
    first = outer_grad(theta, w0, support, query, base.replace(grad_mode=GradMode.FIRST_ORDER.value))
    if hook is not None:
        first = hook(first)
    exact = outer_grad(theta, w0, support, query, base.replace(grad_mode=GradMode.EXACT_FD.value))
    return CheckResult('inner_steps=0 consistency', relative_error(first, exact), tolerance)

def run_gradcheck(
    spec: EncoderSpec,
    config: MetaConfig,
    head_hidden_dim: int = 0,
    hook: Optional[GradHook] = None
) -> GradCheckSummary:
    """在缩小模型上运行全部梯度检查

    Args:
        spec: 配置中的编码器规格（检查时缩小尺寸）
        config: 元学习配置，提供种子与差分步长
        head_hidden_dim: 任务头隐层宽度
        hook: 测试钩子，作用在解析梯度上（负对照）

    Returns:
        各项检查结果
    """
    small = reduced_spec(spec)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 11]))
    theta = init_rln(small, config.seed)
    summary = GradCheckSummary()

    for kind in (TaskKind.CLASSIFICATION, TaskKind.REGRESSION):
        head = head_spec_for(small, kind, 2, head_hidden_dim)
        w = init_pln(head, config.seed)
        data = random_dataset(small, kind, 6, rng)
        summary.results.append(check_backward(theta, w, data, hook=hook, name=f'backward ({kind.value})'))

    head = HeadSpec(TaskKind.CLASSIFICATION, small.rep_dim, 2, head_hidden_dim, small.dropout_rate)
    w0 = init_pln(head, config.seed, task_index=1)
    support = random_dataset(small, TaskKind.CLASSIFICATION, 4, rng)
    query = random_dataset(small, TaskKind.CLASSIFICATION, 4, rng)
    summary.results.append(check_zero_step_consistency(theta, w0, support, query, config, hook=hook))

    for result in summary.results:
        status = '通过' if result.passed else '失败'
        logger.info(f"梯度检查 {result.name}: 相对误差 {result.error:.3e} (阈值 {result.tolerance:.0e}) {status}")
    return summary
