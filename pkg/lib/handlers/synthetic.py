"""
合成任务流生成

分类任务：序列中出现任务私有的秘密词元集合中的词 ⇒ 标签为1。
回归任务：句对词元集合的Jaccard重叠 × 5（类似STS的0~5分）。
不同任务的秘密词元集合两两不相交。
"""

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
from loguru import logger

from ..models.network import TaskKind
from ..utils.exceptions import DataError
from .dataset import METRIC_KINDS, Phase, Sample, Task, TaskStream, assign_splits

MIN_FILLER_WORDS = 16
MAX_SCORE = 5.0

@dataclass(frozen=True)
class SyntheticSpec:
    n_tasks: int = 4
    samples_per_task: int = 400
    vocab: int = 2000
    kinds: Tuple[str, ...] = ('accuracy',)
    noise_rate: float = 0.0
    secret_size: int = 4
    min_len: int = 8
    max_len: int = 24
    disjoint_filler: bool = False
    support_size: int = 128
    query_size: int = 112
    train_size: int = 100

    def __post_init__(self):
        object.__setattr__(self, 'kinds', tuple(self.kinds))
        if self.n_tasks < 1:
            raise DataError(f"n_tasks 至少为1: {self.n_tasks}")
        if not self.kinds or any(k not in METRIC_KINDS for k in self.kinds):
            raise DataError(f"kinds 必须取自 {sorted(METRIC_KINDS)}: {self.kinds}")
        if not 0.0 <= self.noise_rate <= 1.0:
            raise DataError(f"noise_rate 必须在[0,1]内: {self.noise_rate}")
        if not 1 <= self.min_len <= self.max_len:
            raise DataError(f"序列长度范围非法: [{self.min_len}, {self.max_len}]")
        if self.secret_size < 1:
            raise DataError(f"secret_size 至少为1: {self.secret_size}")

def word(index: int) -> str:
    return f"w{index}"

def secret_oracle(sample: Sample, secret: Sequence[str]) -> int:
    """能看到秘密词元集合的分类器"""
    secret = set(secret)
    return int(any(tok in secret for tok in sample.text.split()))

def _partition_vocab(spec: SyntheticSpec, rng: np.random.Generator) -> Tuple[List[List[str]], List[List[str]]]:
    n_secret = spec.n_tasks * spec.secret_size
    n_filler = spec.vocab - n_secret
    min_filler = MIN_FILLER_WORDS * (spec.n_tasks if spec.disjoint_filler else 1)
    if n_filler < min_filler:
        raise DataError(
            f"词表过小: {spec.vocab} 个词无法容纳 {spec.n_tasks} 个大小为 {spec.secret_size} "
            f"的不相交秘密集合及至少 {min_filler} 个填充词"
        )
    order = [word(i) for i in rng.permutation(spec.vocab)]
    secrets = [order[t * spec.secret_size:(t + 1) * spec.secret_size] for t in range(spec.n_tasks)]
    filler = order[n_secret:]
    if spec.disjoint_filler:
        fillers = [list(chunk) for chunk in np.array_split(np.array(filler, dtype=object), spec.n_tasks)]
    else:
        fillers = [filler] * spec.n_tasks
    return secrets, fillers

def _classification_samples(
    spec: SyntheticSpec, secret: List[str], filler: List[str], rng: np.random.Generator
) -> List[Sample]:
    n = spec.samples_per_task
    labels = rng.permutation(np.arange(n) % 2)
    samples = []
    for label in labels:
        length = int(rng.integers(spec.min_len, spec.max_len + 1))
        tokens = list(rng.choice(filler, size=length))
        if label == 1:
            n_secret = int(rng.integers(1, min(2, length) + 1))
            positions = rng.choice(length, size=n_secret, replace=False)
            for pos in positions:
                tokens[pos] = secret[int(rng.integers(len(secret)))]
        observed = int(label)
        if rng.random() < spec.noise_rate:
            observed = 1 - observed
        samples.append(Sample(text=' '.join(tokens), label=observed))
    return samples

def _regression_samples(
    spec: SyntheticSpec, secret: List[str], filler: List[str], rng: np.random.Generator
) -> List[Sample]:
    pool = list(filler) + list(secret)
    samples = []
    for _ in range(spec.samples_per_task):
        length = int(rng.integers(spec.min_len, spec.max_len + 1))
        first = list(rng.choice(pool, size=length))
        shared = int(round(rng.random() * length))
        second = list(rng.choice(first, size=shared, replace=False)) if shared else []
        second += list(rng.choice(pool, size=length - shared))
        second = [second[i] for i in rng.permutation(len(second))]
        a, b = set(first), set(second)
        score = MAX_SCORE * len(a & b) / len(a | b)
        if rng.random() < spec.noise_rate:
            score = float(rng.uniform(0.0, MAX_SCORE))
        samples.append(Sample(text=' '.join(first), label=float(score), text_pair=' '.join(second)))
    return samples

def gen_synthetic_stream(spec: SyntheticSpec, seed: int, phase: Phase = Phase.META_TRAIN) -> TaskStream:
    """按 (spec, seed) 确定性地生成任务流

    Raises:
        DataError: 词表过小或样本不足以完成划分
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 3]))
    secrets, fillers = _partition_vocab(spec, rng)
    tasks = []
    for t in range(spec.n_tasks):
        metric = spec.kinds[t % len(spec.kinds)]
        kind = METRIC_KINDS[metric]
        task_rng = np.random.default_rng(np.random.SeedSequence([seed, 4, t]))
        if kind is TaskKind.CLASSIFICATION:
            samples = _classification_samples(spec, secrets[t], fillers[t], task_rng)
        else:
            samples = _regression_samples(spec, secrets[t], fillers[t], task_rng)
        splits = assign_splits(
            samples, spec.support_size, spec.query_size, spec.train_size,
            seed=seed * 1000 + t, require_eval=True
        )
        tasks.append(Task(
            id=f"synth{t:02d}_{metric}",
            kind=kind,
            metric=metric,
            num_classes=2,
            splits=splits,
            metadata={'secret_tokens': list(secrets[t])}
        ))
    logger.info(f"生成合成任务流: {spec.n_tasks} 个任务, 每个任务 {spec.samples_per_task} 个样本, seed={seed}")
    return TaskStream(tasks, phase)

def partition_stream(stream: TaskStream, n_train: int) -> Tuple[TaskStream, TaskStream]:
    """前 n_train 个任务作为元训练流，其余作为元测试目标流"""
    if not 0 < n_train < len(stream):
        raise DataError(f"无法把 {len(stream)} 个任务划分为 {n_train} 个训练任务和至少1个目标任务")
    return (
        TaskStream(stream.tasks[:n_train], Phase.META_TRAIN),
        TaskStream(stream.tasks[n_train:], Phase.META_TEST),
    )
