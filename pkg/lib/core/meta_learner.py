"""
元训练：MAML-Rep、OML（逐样本内循环）、OML目标值与顺序微调基线

内循环只更新任务头 W，θ 保持冻结；外循环用 query 损失更新 θ。
"""

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple, Union

import numpy as np
from loguru import logger

from ..handlers.dataset import EncodedDataset, Task, TaskStream
from ..models.network import (EncoderSpec, Mode, RngKey, encode, init_pln, init_rln, loss,
                              predict, to_predictions)
from ..models.params import ParamSet
from ..utils.exceptions import ConfigError, DataError, FreezeViolationError, MetaGradientError
from ..utils.metrics import compute_metric
from .config import GradMode, InnerMode, MetaConfig
from .gradcheck import finite_diff_grad
from .optim import AdamState, adam_step, constant_or_cosine, sgd_step
from .tensor import Graph, Tensor, backward

JOINT_MODE = 'joint'

@dataclass(frozen=True)
class Trajectory:
    """同一任务中按顺序排列的 k 个样本"""
    task_id: str
    indices: Tuple[int, ...]
    data: EncodedDataset

    @property
    def k(self) -> int:
        return len(self.indices)

def sample_trajectory(task_id: str, dataset: EncodedDataset, k: int, rng: np.random.Generator) -> Trajectory:
    """随机选起点 j，取连续的 k 个样本 j..j+k-1"""
    if k < 1:
        raise ConfigError(f"轨迹长度至少为1: {k}")
    if k > len(dataset):
        raise DataError(f"任务 {task_id}: 轨迹长度 {k} 超过可用样本数 {len(dataset)}")
    start = int(rng.integers(0, len(dataset) - k + 1))
    indices = tuple(range(start, start + k))
    return Trajectory(task_id, indices, dataset.take(indices))

@dataclass(frozen=True)
class TrainRecord:
    epoch: int
    task: str
    loss: float
    lr: float
    mode: str

class TrainingLog:
    """逐 (epoch, task) 的训练记录，以 JSON-lines 保存"""

    def __init__(self, records: Optional[List[TrainRecord]] = None):
        self.records: List[TrainRecord] = list(records or [])

    def append(self, record: TrainRecord) -> None:
        self.records.append(record)
        logger.info(
            f"epoch={record.epoch} task={record.task} loss={record.loss:.6f} "
            f"lr={record.lr:.3e} mode={record.mode}"
        )

    def __len__(self) -> int:
        return len(self.records)

    def epoch_mean(self, epoch: int) -> float:
        losses = [r.loss for r in self.records if r.epoch == epoch]
        if not losses:
            raise KeyError(f"没有第 {epoch} 轮的记录")
        return float(np.mean(losses))

    def to_jsonl(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        with open(path, 'w', encoding='utf-8') as f:
            for record in self.records:
                f.write(json.dumps(asdict(record), sort_keys=True) + '\n')
        return path

    @classmethod
    def from_jsonl(cls, path: Union[str, Path]) -> 'TrainingLog':
        with open(path, 'r', encoding='utf-8') as f:
            return cls([TrainRecord(**json.loads(line)) for line in f if line.strip()])

@dataclass
class MetaTrainResult:
    theta: ParamSet
    log: TrainingLog
    checkpoints: Dict[int, ParamSet] = field(default_factory=dict)
    inner_calls: int = 0

class DatasetCache:
    """按 (任务, 划分) 缓存分词结果"""

    def __init__(self, spec: EncoderSpec):
        self.spec = spec
        self._cache: Dict[Tuple[int, str], EncodedDataset] = {}

    def get(self, task: Task, split: str) -> EncodedDataset:
        key = (id(task), split)
        if key not in self._cache:
            self._cache[key] = EncodedDataset.from_samples(task.split(split), task.kind, self.spec)
        return self._cache[key]

def head_loss(
    theta: ParamSet,
    w: ParamSet,
    data: EncodedDataset,
    mode: Mode = Mode.EVAL,
    rng_key: Optional[RngKey] = None,
    theta_trainable: bool = False,
    w_trainable: bool = False
) -> Tensor:
    """在同一张新图上计算 data 的批平均损失"""
    graph = Graph()
    rep = encode(theta, data.token_ids, data.mask, mode, rng_key, graph=graph, trainable=theta_trainable)
    output = predict(w, rep, mode, rng_key, graph=graph, trainable=w_trainable)
    return loss(output, data.targets, data.task_kind)

def loss_value(theta: ParamSet, w: ParamSet, data: EncodedDataset) -> float:
    """评估模式下的损失值"""
    return head_loss(theta, w, data).item()

def evaluate(theta: ParamSet, w: ParamSet, data: EncodedDataset, metric: str) -> Tuple[float, float]:
    """评估模式下计算 (指标, 损失)"""
    graph = Graph()
    rep = encode(theta, data.token_ids, data.mask, Mode.EVAL, graph=graph, trainable=False)
    output = predict(w, rep, Mode.EVAL, graph=graph, trainable=False)
    value = compute_metric(metric, to_predictions(output.data, data.task_kind), data.targets)
    return value, loss(output, data.targets, data.task_kind).item()

def inner_adapt(
    theta: ParamSet,
    w0: ParamSet,
    support: EncodedDataset,
    steps: int,
    alpha: float,
    mode: InnerMode = InnerMode.BATCHED,
    rng_key: Optional[RngKey] = None,
    batch_size: int = 16,
    optimizer: str = 'sgd',
    phase: Optional[Mode] = None,
    check_freeze: bool = True
) -> ParamSet:
    """冻结 θ，在 support 上更新任务头 W

    batched 模式第 j 步使用第 j 个大小为 batch_size 的批次；per_sample 模式第 j 步
    只使用第 j 个样本。数据不足时报错，不循环复用。
    phase 缺省时：提供 rng_key 则为训练模式（PLN dropout生效），否则为评估模式。

    Returns:
        更新后的 W

    Raises:
        DataError: support 为空或步数超出可用数据
        FreezeViolationError: θ 在内循环中被修改
    """
    mode = InnerMode(mode)
    if len(support) == 0:
        raise DataError("inner_adapt: support 为空")
    if steps < 0:
        raise ConfigError(f"inner_adapt: 步数不能为负: {steps}")
    if steps == 0:
        return w0

    size = 1 if mode is InnerMode.PER_SAMPLE else batch_size
    if steps * size > len(support):
        raise DataError(
            f"inner_adapt({mode.value}): {steps} 步 × {size} 个样本超出 support 大小 {len(support)}"
        )
    before = theta.checksum() if check_freeze else None
    phase = Mode(phase) if phase is not None else (Mode.TRAIN if rng_key is not None else Mode.EVAL)

    # θ 冻结：表示只需计算一次
    rep = encode(theta, support.token_ids[:steps * size], support.mask[:steps * size], Mode.EVAL,
                 trainable=False).data
    w = w0
    adam = AdamState.zeros(w0) if optimizer == 'adam' else None
    for step in range(steps):
        lo, hi = step * size, (step + 1) * size
        graph = Graph()
        key = rng_key.fold_in(step) if rng_key is not None else None
        output = predict(w, Tensor(rep[lo:hi]), phase, key, graph=graph)
        step_loss = loss(output, support.targets[lo:hi], support.task_kind)
        grads = backward(step_loss, w)
        if adam is not None:
            w, adam = adam_step(adam, w, grads, alpha)
        else:
            w = sgd_step(w, grads, alpha)

    if check_freeze and theta.checksum() != before:
        raise FreezeViolationError("inner_adapt 修改了被冻结的 θ")
    return w

def inner_steps_for(config: MetaConfig) -> int:
    """per_sample 模式沿长度为 trajectory_len 的轨迹更新，batched 模式使用 inner_steps_train"""
    if InnerMode(config.inner_mode) is InnerMode.PER_SAMPLE:
        return config.trajectory_len
    return config.inner_steps_train

def outer_loss_and_grad(
    theta: ParamSet,
    w0: ParamSet,
    support: EncodedDataset,
    query: EncodedDataset,
    config: MetaConfig,
    rng_key: Optional[RngKey] = None
) -> Tuple[float, Dict[str, np.ndarray]]:
    """返回 (query 损失, θ 的元梯度)

    first_order: 适应后的 W_k 视为常数。
    exact_fd: 对整个 适应→评估 流程关于展平 θ 做中心差分（关闭dropout，固定随机性）。

    Raises:
        DataError: query 为空
        MetaGradientError: exact_fd 模式下 θ 坐标数超出预算
    """
    if len(query) == 0:
        raise DataError("outer_grad: query 为空")
    steps = inner_steps_for(config)
    grad_mode = GradMode(config.grad_mode)

    if grad_mode is GradMode.EXACT_FD:
        if theta.num_coordinates > config.fd_max_coordinates:
            raise MetaGradientError(
                f"exact_fd: θ 有 {theta.num_coordinates} 个坐标，超出预算 {config.fd_max_coordinates}，"
                f"请使用更小的模型或 first_order 模式"
            )

        def pipeline(th: ParamSet) -> float:
            w_k = inner_adapt(th, w0, support, steps, config.inner_lr, config.inner_mode,
                              batch_size=config.batch_size, optimizer=config.inner_optimizer,
                              phase=Mode.EVAL, check_freeze=False)
            return loss_value(th, w_k, query)

        grads = finite_diff_grad(pipeline, theta, config.fd_epsilon)
        return pipeline(theta), grads

    w_k = inner_adapt(theta, w0, support, steps, config.inner_lr, config.inner_mode,
                      rng_key=rng_key.fold_in(0) if rng_key is not None else None,
                      batch_size=config.batch_size, optimizer=config.inner_optimizer,
                      check_freeze=config.check_freeze)
    query_key = rng_key.fold_in(1) if rng_key is not None else None
    mode = Mode.TRAIN if query_key is not None else Mode.EVAL
    root = head_loss(theta, w_k, query, mode, query_key, theta_trainable=True)
    value = root.item()
    return value, backward(root, theta)

def outer_grad(
    theta: ParamSet,
    w0: ParamSet,
    support: EncodedDataset,
    query: EncodedDataset,
    config: MetaConfig,
    rng_key: Optional[RngKey] = None
) -> Dict[str, np.ndarray]:
    """θ 的元梯度（见 outer_loss_and_grad）"""
    return outer_loss_and_grad(theta, w0, support, query, config, rng_key)[1]

def _task_order(stream: TaskStream, config: MetaConfig, epoch: int) -> List[int]:
    order = list(range(len(stream)))
    if config.shuffle_tasks:
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, 6, epoch]))
        order = [int(i) for i in rng.permutation(order)]
    return order

def meta_train(
    stream: TaskStream,
    config: MetaConfig,
    encoder: Optional[EncoderSpec] = None,
    head_hidden_dim: int = 0,
    theta: Optional[ParamSet] = None
) -> MetaTrainResult:
    """MAML-Rep / OML 元训练

    每次访问任务：随机初始化 W → 冻结 θ 在 support 上适应 W → 用 query 损失
    对 θ 做一次 Adam 更新（余弦退火的外循环学习率）。每 checkpoint_every 轮保存 θ。

    Raises:
        DataError: 任务流为空
    """
    if len(stream) == 0:
        raise DataError("meta_train: 任务流为空")
    encoder = encoder or (theta.spec if theta is not None else EncoderSpec())
    theta = theta if theta is not None else init_rln(encoder, config.seed)
    cache = DatasetCache(encoder)
    inner_mode = InnerMode(config.inner_mode).value

    total_steps = config.meta_epochs * len(stream)
    schedule = constant_or_cosine(config.outer_lr, total_steps, config.outer_lr_min)
    adam = AdamState.zeros(theta)
    result = MetaTrainResult(theta, TrainingLog())
    base_key = RngKey(config.seed).fold_in(7)
    logger.info(f"开始元训练: {len(stream)} 个任务, {config.meta_epochs} 轮, mode={inner_mode}, grad={config.grad_mode}")

    step = 0
    for epoch in range(1, config.meta_epochs + 1):
        for index in _task_order(stream, config, epoch):
            task = stream[index]
            w0 = init_pln(task.head_spec(encoder, head_hidden_dim), config.seed, task_index=step)
            query_loss, grads = outer_loss_and_grad(
                theta, w0, cache.get(task, 'support'), cache.get(task, 'query'), config,
                base_key.fold_in(step)
            )
            result.inner_calls += 1
            lr = schedule(step)
            theta, adam = adam_step(adam, theta, grads, lr)
            result.log.append(TrainRecord(epoch, task.id, query_loss, lr, inner_mode))
            step += 1
        if epoch % config.checkpoint_every == 0:
            result.checkpoints[epoch] = theta
            logger.debug(f"保存第 {epoch} 轮的 θ 检查点")

    result.theta = theta
    logger.info(f"元训练完成: 共 {step} 次外循环更新")
    return result

def oml_objective(
    theta: ParamSet,
    head_seed: int,
    tasks: Iterable[Task],
    k: int,
    alpha: float,
    config: MetaConfig,
    head_hidden_dim: int = 0
) -> float:
    """OML目标值：每个任务沿长度为 k 的轨迹逐样本适应 W，累加 query 上的适应后损失

    Raises:
        DataError: 任务样本不足以提供 k 个轨迹样本和非空的评估样本
    """
    if k < 1:
        raise ConfigError(f"轨迹长度至少为1: {k}")
    encoder = theta.spec
    cache = DatasetCache(encoder)
    rng = np.random.default_rng(np.random.SeedSequence([head_seed, 5]))
    total = 0.0
    for index, task in enumerate(tasks):
        support = cache.get(task, 'support')
        held_out = cache.get(task, 'query')
        if len(support) < k:
            raise DataError(f"任务 {task.id}: support 只有 {len(support)} 个样本，少于轨迹长度 {k}")
        trajectory = sample_trajectory(task.id, support, k, rng)
        w0 = init_pln(task.head_spec(encoder, head_hidden_dim), head_seed, task_index=index)
        w_k = inner_adapt(theta, w0, trajectory.data, k, alpha, InnerMode.PER_SAMPLE,
                          optimizer=config.inner_optimizer, phase=Mode.EVAL,
                          check_freeze=config.check_freeze)
        total += loss_value(theta, w_k, held_out)
    return total

def joint_finetune(
    theta: ParamSet,
    w: ParamSet,
    data: EncodedDataset,
    steps: int,
    lr: float,
    batch_size: int,
    rng_key: Optional[RngKey] = None,
    theta_lr: Optional[float] = None
) -> Tuple[ParamSet, ParamSet]:
    """同时微调 θ 与 W：Adam + 余弦退火；第 s 步取第 s 个小批次（回绕）

    lr 作用于 W；theta_lr 作用于 θ，为 None 时与 lr 相同。两者各自按余弦退火。
    """
    if len(data) == 0:
        raise DataError("joint_finetune: 数据为空")
    w_schedule = constant_or_cosine(lr, steps)
    theta_schedule = constant_or_cosine(lr if theta_lr is None else theta_lr, steps)
    adam_theta, adam_w = AdamState.zeros(theta), AdamState.zeros(w)
    for step in range(steps):
        batch = data.cyclic_batch(step, batch_size)
        key = rng_key.fold_in(step) if rng_key is not None else None
        mode = Mode.TRAIN if key is not None else Mode.EVAL
        root = head_loss(theta, w, batch, mode, key, theta_trainable=True, w_trainable=True)
        grads = backward(root, [theta, w])
        theta, adam_theta = adam_step(adam_theta, theta, {n: grads[n] for n in theta.names()}, theta_schedule(step))
        w, adam_w = adam_step(adam_w, w, {n: grads[n] for n in w.names()}, w_schedule(step))
    return theta, w

def last_finetune_lr(lr: float, steps: int) -> float:
    """joint_finetune 最后一步实际使用的学习率；steps 为0时没有更新，返回0"""
    if steps < 1:
        return 0.0
    return constant_or_cosine(lr, steps)(steps - 1)

def sequential_baseline(
    stream: TaskStream,
    config: MetaConfig,
    encoder: Optional[EncoderSpec] = None,
    head_hidden_dim: int = 0,
    theta: Optional[ParamSet] = None
) -> MetaTrainResult:
    """顺序微调基线：一个共享 θ，每个任务一个新的 W，按顺序联合微调（无冻结、无外循环）

    轮数取 config.baseline_epochs，未设置时与 meta_epochs 相同；为0时直接返回初始 θ。
    日志中的 lr 是每次访问最后一步作用于 θ 的学习率。

    Raises:
        DataError: 任务流为空
    """
    if len(stream) == 0:
        raise DataError("sequential_baseline: 任务流为空")
    encoder = encoder or (theta.spec if theta is not None else EncoderSpec())
    theta = theta if theta is not None else init_rln(encoder, config.seed)
    cache = DatasetCache(encoder)
    result = MetaTrainResult(theta, TrainingLog())
    base_key = RngKey(config.seed).fold_in(8)
    epochs = config.baseline_passes()
    theta_lr = config.theta_finetune_lr()
    logged_lr = last_finetune_lr(theta_lr, config.inner_steps_test)
    logger.info(f"开始顺序微调基线: {len(stream)} 个任务, {epochs} 轮")

    visit = 0
    for epoch in range(1, epochs + 1):
        for index in _task_order(stream, config, epoch):
            task = stream[index]
            w = init_pln(task.head_spec(encoder, head_hidden_dim), config.seed, task_index=visit)
            theta, w = joint_finetune(
                theta, w, cache.get(task, 'support'), config.inner_steps_test,
                config.finetune_lr, config.batch_size, base_key.fold_in(visit), theta_lr
            )
            query_loss = loss_value(theta, w, cache.get(task, 'query'))
            result.log.append(TrainRecord(epoch, task.id, query_loss, logged_lr, JOINT_MODE))
            visit += 1
        if epoch % config.checkpoint_every == 0:
            result.checkpoints[epoch] = theta

    result.theta = theta
    logger.info(f"顺序微调基线完成: 共 {visit} 次任务访问")
    return result
