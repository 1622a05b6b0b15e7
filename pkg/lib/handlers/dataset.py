"""
任务、任务流与编码后的数据集
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..models.network import EncoderSpec, HeadSpec, TaskKind, head_spec_for
from ..utils.exceptions import DataError
from ..utils.helpers import validate_task_id
from .tokenizer import tokenize_batch

SPLITS = ('support', 'query', 'train', 'eval')
METRIC_KINDS = {
    'accuracy': TaskKind.CLASSIFICATION,
    'matthews': TaskKind.CLASSIFICATION,
    'pearson': TaskKind.REGRESSION,
}

@dataclass(frozen=True, eq=False)
class Sample:
    text: str
    label: Union[int, float]
    text_pair: Optional[str] = None

class Phase(str, Enum):
    META_TRAIN = 'meta_train'
    META_TEST = 'meta_test'

@dataclass(eq=False)
class Task:
    id: str
    kind: TaskKind
    metric: str
    num_classes: int = 2
    splits: Dict[str, List[Sample]] = field(default_factory=dict)
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.kind = TaskKind(self.kind)
        if not validate_task_id(self.id):
            raise DataError(f"非法的任务ID: {self.id!r}")
        if self.metric not in METRIC_KINDS:
            raise DataError(f"任务 {self.id}: 未知的评价指标 {self.metric}")
        if METRIC_KINDS[self.metric] is not self.kind:
            raise DataError(f"任务 {self.id}: 指标 {self.metric} 不适用于 {self.kind.value} 任务")
        if self.metric == 'matthews' and self.num_classes != 2:
            raise DataError(f"任务 {self.id}: matthews 指标只适用于二分类")
        unknown = set(self.splits) - set(SPLITS)
        if unknown:
            raise DataError(f"任务 {self.id}: 未知的数据划分 {sorted(unknown)}")

        seen = {}
        for split_name, samples in self.splits.items():
            for sample in samples:
                if id(sample) in seen and seen[id(sample)] != split_name:
                    raise DataError(f"任务 {self.id}: 样本同时出现在 {seen[id(sample)]} 与 {split_name} 中")
                seen[id(sample)] = split_name
                self._check_label(sample)

    def _check_label(self, sample: Sample) -> None:
        if self.kind is TaskKind.CLASSIFICATION:
            if not isinstance(sample.label, (int, np.integer)) or not 0 <= sample.label < self.num_classes:
                raise DataError(f"任务 {self.id}: 分类标签必须在[0,{self.num_classes})内: {sample.label!r}")
        elif not np.isfinite(float(sample.label)):
            raise DataError(f"任务 {self.id}: 回归目标必须是有限数值: {sample.label!r}")

    def split(self, name: str) -> List[Sample]:
        """取出指定划分，缺失或为空时报错"""
        samples = self.splits.get(name)
        if not samples:
            raise DataError(f"任务 {self.id} 缺少非空的 {name} 划分")
        return samples

    def head_spec(self, encoder: EncoderSpec, hidden_dim: int = 0) -> HeadSpec:
        return head_spec_for(encoder, self.kind, self.num_classes, hidden_dim)

@dataclass
class TaskStream:
    """有序任务流；顺序即持续学习的顺序"""
    tasks: List[Task]
    phase: Phase = Phase.META_TRAIN

    def __post_init__(self):
        self.phase = Phase(self.phase)
        ids = [task.id for task in self.tasks]
        duplicates = sorted({i for i in ids if ids.count(i) > 1})
        if duplicates:
            raise DataError(f"任务ID重复: {duplicates}")

    def __iter__(self) -> Iterator[Task]:
        return iter(self.tasks)

    def __len__(self) -> int:
        return len(self.tasks)

    def __getitem__(self, index: int) -> Task:
        return self.tasks[index]

    @property
    def ids(self) -> List[str]:
        return [task.id for task in self.tasks]

@dataclass(frozen=True)
class EncodedDataset:
    """分词后的数据：token_ids 与 mask 为 [N, max_len]，targets 为 [N]"""
    token_ids: np.ndarray
    mask: np.ndarray
    targets: np.ndarray
    task_kind: TaskKind

    @classmethod
    def from_samples(cls, samples: Sequence[Sample], task_kind: TaskKind, spec: EncoderSpec) -> 'EncodedDataset':
        task_kind = TaskKind(task_kind)
        token_ids, mask = tokenize_batch(
            [s.text for s in samples], spec.vocab_size, spec.max_len, [s.text_pair for s in samples]
        )
        dtype = np.int64 if task_kind is TaskKind.CLASSIFICATION else np.float64
        targets = np.array([s.label for s in samples], dtype=dtype)
        return cls(token_ids, mask, targets, task_kind)

    def __len__(self) -> int:
        return len(self.targets)

    def take(self, indices: Sequence[int]) -> 'EncodedDataset':
        indices = np.asarray(indices, dtype=np.int64)
        return EncodedDataset(self.token_ids[indices], self.mask[indices], self.targets[indices], self.task_kind)

    def cyclic_batch(self, step: int, batch_size: int) -> 'EncodedDataset':
        """第 step 个小批次，按顺序取样并在末尾回绕"""
        n = len(self)
        indices = (np.arange(batch_size) + step * batch_size) % n
        return self.take(indices)

def _permutation(n: int, seed: int) -> np.ndarray:
    return np.random.default_rng(np.random.SeedSequence([seed, 2])).permutation(n)

def split_support_query(
    samples: Sequence[Sample],
    n_support: int,
    n_query: int,
    seed: int
) -> Tuple[List[Sample], List[Sample]]:
    """带种子的无放回均匀抽样，得到互不相交的 support 与 query

    Raises:
        DataError: 样本数不足（不循环复用）
    """
    if n_support < 0 or n_query < 0:
        raise DataError(f"划分大小不能为负: support={n_support}, query={n_query}")
    if n_support + n_query > len(samples):
        raise DataError(f"样本不足: 需要 {n_support}+{n_query}，只有 {len(samples)}")
    order = _permutation(len(samples), seed)
    support = [samples[i] for i in order[:n_support]]
    query = [samples[i] for i in order[n_support:n_support + n_query]]
    return support, query

def assign_splits(
    samples: Sequence[Sample],
    n_support: int,
    n_query: int,
    n_train: int,
    seed: int,
    require_eval: bool = True
) -> Dict[str, List[Sample]]:
    """按 support → query → train → eval(剩余) 的顺序划分

    support 与 query 与 split_support_query 的结果一致。
    """
    total = n_support + n_query + n_train
    if total > len(samples) or (require_eval and total >= len(samples)):
        raise DataError(
            f"样本不足: support={n_support}, query={n_query}, train={n_train}"
            f"{' 且 eval 非空' if require_eval else ''}，只有 {len(samples)}"
        )
    order = _permutation(len(samples), seed)
    bounds = np.cumsum([0, n_support, n_query, n_train])
    splits = {
        name: [samples[i] for i in order[bounds[k]:bounds[k + 1]]]
        for k, name in enumerate(('support', 'query', 'train'))
    }
    splits['eval'] = [samples[i] for i in order[total:]]
    return splits
