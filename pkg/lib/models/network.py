"""
两段式模型：表示网络 RLN（参数 θ）与任务头 PLN（参数 W）

RLN: embedding_lookup → 掩码平均池化 → tanh MLP
PLN: [dropout] → [可选 tanh 隐层] → 线性输出
"""

from collections import OrderedDict
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Tuple

import numpy as np

from ..core import tensor as T
from ..core.tensor import Graph, Tensor
from ..utils.exceptions import ConfigError, DataError, GraphError, ShapeError
from .params import ParamSet, Role

class TaskKind(str, Enum):
    CLASSIFICATION = 'classification'
    REGRESSION = 'regression'

class Mode(str, Enum):
    TRAIN = 'train'
    EVAL = 'eval'

@dataclass(frozen=True)
class RngKey:
    """基于计数器的随机数键

    (全局种子, 步数路径, 层编号) 唯一确定一个 Philox 生成器，同一运行可精确复现。
    """
    seed: int
    path: Tuple[int, ...] = ()

    def fold_in(self, step: int) -> 'RngKey':
        return RngKey(self.seed, self.path + (int(step),))

    def generator(self, layer_id: int) -> np.random.Generator:
        sequence = np.random.SeedSequence([self.seed, *self.path, layer_id])
        return np.random.Generator(np.random.Philox(sequence))

@dataclass(frozen=True)
class EncoderSpec:
    vocab_size: int = 4096
    embed_dim: int = 64
    hidden_dims: Tuple[int, ...] = (128, 64)
    max_len: int = 64
    dropout_rate: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, 'hidden_dims', tuple(int(d) for d in self.hidden_dims))
        for name in ('vocab_size', 'embed_dim', 'max_len'):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"EncoderSpec.{name} 必须为正整数")
        if any(d < 1 for d in self.hidden_dims):
            raise ConfigError("EncoderSpec.hidden_dims 必须全为正整数")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("EncoderSpec.dropout_rate 必须在[0,1)内")

    @property
    def rep_dim(self) -> int:
        return self.hidden_dims[-1] if self.hidden_dims else self.embed_dim

@dataclass(frozen=True)
class HeadSpec:
    task_kind: TaskKind
    input_dim: int
    num_classes: int = 2
    hidden_dim: int = 0
    dropout_rate: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, 'task_kind', TaskKind(self.task_kind))
        if self.input_dim < 1:
            raise ConfigError("HeadSpec.input_dim 必须为正整数")
        if self.task_kind is TaskKind.CLASSIFICATION and self.num_classes < 2:
            raise ConfigError("分类任务的类别数至少为2")
        if self.hidden_dim < 0:
            raise ConfigError("HeadSpec.hidden_dim 不能为负")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("HeadSpec.dropout_rate 必须在[0,1)内")

    @property
    def output_dim(self) -> int:
        return self.num_classes if self.task_kind is TaskKind.CLASSIFICATION else 1

def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))

def init_rln(spec: EncoderSpec, seed: int) -> ParamSet:
    """初始化表示网络参数 θ；权重缩放均匀分布，偏置为零"""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    entries = OrderedDict()
    entries['rln.embedding'] = glorot_uniform(rng, spec.vocab_size, spec.embed_dim)
    fan_in = spec.embed_dim
    for i, width in enumerate(spec.hidden_dims):
        entries[f'rln.layer{i}.weight'] = glorot_uniform(rng, fan_in, width)
        entries[f'rln.layer{i}.bias'] = np.zeros(width)
        fan_in = width
    return ParamSet(entries, Role.RLN, spec)

def init_pln(spec: HeadSpec, seed: int, task_index: int = 0) -> ParamSet:
    """随机初始化任务头参数 W；每个任务下标使用独立的种子流"""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1, task_index]))
    entries = OrderedDict()
    fan_in = spec.input_dim
    if spec.hidden_dim:
        entries['pln.hidden.weight'] = glorot_uniform(rng, fan_in, spec.hidden_dim)
        entries['pln.hidden.bias'] = np.zeros(spec.hidden_dim)
        fan_in = spec.hidden_dim
    entries['pln.out.weight'] = glorot_uniform(rng, fan_in, spec.output_dim)
    entries['pln.out.bias'] = np.zeros(spec.output_dim)
    return ParamSet(entries, Role.PLN, spec)

def encode(
    theta: ParamSet,
    token_ids: np.ndarray,
    mask: np.ndarray,
    mode: Mode = Mode.EVAL,
    rng_key: Optional[RngKey] = None,
    graph: Optional[Graph] = None,
    trainable: bool = True
) -> Tensor:
    """RLN前向：输出 [batch, rep_dim]

    填充位置（mask=0）不影响输出。RLN不含dropout，两种模式结果一致。

    Raises:
        DataError: 词元ID超出词表
    """
    Mode(mode)
    token_ids = np.asarray(token_ids)
    mask = np.asarray(mask, dtype=np.float64)
    if token_ids.ndim != 2 or mask.shape != token_ids.shape:
        raise ShapeError('encode', token_ids.shape, mask.shape)
    vocab_size = theta['rln.embedding'].shape[0]
    if token_ids.size and (token_ids.min() < 0 or token_ids.max() >= vocab_size):
        raise DataError(f"词元ID超出范围[0, {vocab_size}): [{token_ids.min()}, {token_ids.max()}]")

    graph = graph if graph is not None else Graph()
    p = graph.watch(theta, trainable)
    h = T.masked_mean_pool(T.embedding_lookup(p['rln.embedding'], token_ids), mask)
    i = 0
    while f'rln.layer{i}.weight' in p:
        h = T.tanh(T.add(T.matmul(h, p[f'rln.layer{i}.weight']), p[f'rln.layer{i}.bias']))
        i += 1
    return h

def predict(
    w: ParamSet,
    rep: Tensor,
    mode: Mode = Mode.EVAL,
    rng_key: Optional[RngKey] = None,
    graph: Optional[Graph] = None,
    trainable: bool = True
) -> Tensor:
    """PLN前向：分类输出 logits [batch, C]，回归输出 [batch, 1]"""
    mode = Mode(mode)
    first = 'pln.hidden.weight' if 'pln.hidden.weight' in w else 'pln.out.weight'
    if rep.data.ndim != 2 or rep.shape[1] != w[first].shape[0]:
        raise ShapeError('predict', rep.shape, w[first].shape)

    graph = graph if graph is not None else (rep.graph if rep.graph is not None else Graph())
    p = graph.watch(w, trainable)
    rate = w.spec.dropout_rate if isinstance(w.spec, HeadSpec) else 0.0
    training = mode is Mode.TRAIN
    rng = rng_key.generator(layer_id=1) if (training and rate > 0 and rng_key is not None) else None
    if training and rate > 0 and rng is None:
        raise GraphError("训练模式下的PLN需要 rng_key")

    h = T.dropout(rep, rate, rng, training)
    if 'pln.hidden.weight' in p:
        h = T.tanh(T.add(T.matmul(h, p['pln.hidden.weight']), p['pln.hidden.bias']))
    return T.add(T.matmul(h, p['pln.out.weight']), p['pln.out.bias'])

def loss(output: Tensor, targets: np.ndarray, task_kind: TaskKind) -> Tensor:
    """批平均损失：分类为softmax交叉熵，回归为均方误差

    Raises:
        DataError: 目标类型与任务类型不符
    """
    task_kind = TaskKind(task_kind)
    targets = np.asarray(targets)
    if task_kind is TaskKind.CLASSIFICATION:
        if not np.issubdtype(targets.dtype, np.integer):
            raise DataError(f"分类任务的目标必须是整数类别下标，实际类型 {targets.dtype}")
        return T.softmax_cross_entropy(output, targets)
    if output.data.ndim != 2 or output.shape[1] != 1:
        raise DataError(f"回归任务的输出必须为 [batch, 1]，实际 {output.shape}")
    if not np.issubdtype(targets.dtype, np.number):
        raise DataError(f"回归任务的目标必须是数值，实际类型 {targets.dtype}")
    return T.mse(output, targets.astype(np.float64))

def to_predictions(output: np.ndarray, task_kind: TaskKind) -> np.ndarray:
    """把模型输出转为用于计算指标的预测值"""
    if TaskKind(task_kind) is TaskKind.CLASSIFICATION:
        return np.argmax(output, axis=1)
    return output[:, 0]

def head_spec_for(encoder: EncoderSpec, task_kind: TaskKind, num_classes: int = 2, hidden_dim: int = 0) -> HeadSpec:
    """按编码器输出维度构造任务头规格"""
    return HeadSpec(
        task_kind=task_kind,
        input_dim=encoder.rep_dim,
        num_classes=num_classes,
        hidden_dim=hidden_dim,
        dropout_rate=encoder.dropout_rate
    )
