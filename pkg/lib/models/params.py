from collections import OrderedDict
from enum import Enum
from typing import Any, Dict, Iterator, Mapping, Tuple

import numpy as np

from ..utils.exceptions import ConfigError, ShapeError
from ..utils.helpers import array_checksum

class Role(str, Enum):
    RLN = 'rln'
    PLN = 'pln'

class ParamSet:
    """有序的命名参数集合

    θ（表示网络，RLN）与 W（任务头，PLN）都用它保存。参数集本身视为不可变：
    所有更新都返回新的 ParamSet。
    """

    def __init__(self, entries: Mapping[str, np.ndarray], role: Role, spec: Any = None):
        self.role = Role(role)
        self.spec = spec
        self._entries: 'OrderedDict[str, np.ndarray]' = OrderedDict()
        for name, value in entries.items():
            if name in self._entries:
                raise ConfigError(f"参数名重复: {name}")
            array = np.array(value, dtype=np.float64)
            array.setflags(write=False)
            self._entries[name] = array

    def __getitem__(self, name: str) -> np.ndarray:
        return self._entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def names(self) -> Tuple[str, ...]:
        return tuple(self._entries)

    def items(self):
        return self._entries.items()

    def shapes(self) -> Dict[str, Tuple[int, ...]]:
        return {name: value.shape for name, value in self._entries.items()}

    @property
    def num_coordinates(self) -> int:
        return int(sum(value.size for value in self._entries.values()))

    def flatten(self) -> np.ndarray:
        """按参数顺序展平为一维向量"""
        if not self._entries:
            return np.zeros(0)
        return np.concatenate([value.reshape(-1) for value in self._entries.values()])

    def unflatten(self, vector: np.ndarray) -> 'ParamSet':
        """flatten 的逆操作，返回同结构的新参数集"""
        vector = np.asarray(vector, dtype=np.float64)
        if vector.shape != (self.num_coordinates,):
            raise ShapeError('unflatten', vector.shape, (self.num_coordinates,))
        entries, offset = OrderedDict(), 0
        for name, value in self._entries.items():
            entries[name] = vector[offset:offset + value.size].reshape(value.shape)
            offset += value.size
        return ParamSet(entries, self.role, self.spec)

    def replace(self, updates: Mapping[str, np.ndarray]) -> 'ParamSet':
        """返回用 updates 替换部分条目后的新参数集（形状必须一致）"""
        entries = OrderedDict(self._entries)
        for name, value in updates.items():
            if name not in entries:
                raise KeyError(f"未知参数: {name}")
            value = np.asarray(value, dtype=np.float64)
            if value.shape != entries[name].shape:
                raise ShapeError(f'replace({name})', entries[name].shape, value.shape)
            entries[name] = value
        return ParamSet(entries, self.role, self.spec)

    def checksum(self) -> str:
        """参数内容摘要，用于检验冻结约束"""
        return array_checksum(*self._entries.values())

    def check_aligned(self, grads: Mapping[str, np.ndarray], op: str) -> None:
        """检查梯度与参数逐项对齐"""
        if set(grads) != set(self._entries):
            missing = sorted(set(self._entries) - set(grads))
            extra = sorted(set(grads) - set(self._entries))
            raise ShapeError(f'{op}(参数名不对齐 缺少={missing} 多余={extra})')
        for name, value in self._entries.items():
            if np.shape(grads[name]) != value.shape:
                raise ShapeError(f'{op}({name})', value.shape, np.shape(grads[name]))

    def equals(self, other: 'ParamSet') -> bool:
        """按位相等"""
        return (self.names() == other.names()
                and all(np.array_equal(self[n], other[n]) for n in self.names()))

    def __repr__(self) -> str:
        return f"ParamSet(role={self.role.value}, params={len(self)}, coordinates={self.num_coordinates})"
