"""
反向模式自动微分

每次前向传播使用一张新的 Graph；节点按创建顺序追加，父节点总是先于子节点，
因此逆序遍历即为拓扑序。backward 对每张图只能调用一次。
"""

from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union, TYPE_CHECKING

import numpy as np
from loguru import logger

from ..utils.exceptions import ConfigError, GraphError, NumericError, ShapeError

if TYPE_CHECKING:
    from ..models.params import ParamSet

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

@dataclass(frozen=True)
class Node:
    op: str
    parents: Tuple[int, ...]
    backward: Optional[BackwardFn] = None

class Graph:
    """只追加的计算图"""

    def __init__(self):
        self.nodes: List[Node] = []
        self.params: Dict[str, int] = {}
        self.consumed = False
        self._watched: Dict[int, Dict[str, 'Tensor']] = {}

    def _append(self, op: str, parents: Tuple[int, ...], backward: Optional[BackwardFn]) -> int:
        if self.consumed:
            raise GraphError("计算图已执行过反向传播，不能继续追加节点")
        self.nodes.append(Node(op, parents, backward))
        return len(self.nodes) - 1

    def parameter(self, name: str, data: np.ndarray) -> 'Tensor':
        """登记一个参数叶子节点"""
        if name in self.params:
            raise GraphError(f"参数 {name} 已在计算图中登记")
        node_id = self._append('param', (), None)
        self.params[name] = node_id
        return Tensor(data, self, node_id)

    def watch(self, params: 'ParamSet', trainable: bool = True) -> Dict[str, 'Tensor']:
        """把参数集提升为本图中的张量

        同一参数集在同一张图中只登记一次。trainable=False 时作为常量，不产生梯度。
        """
        key = id(params)
        if key in self._watched:
            return self._watched[key]
        if trainable:
            lifted = {name: self.parameter(name, value) for name, value in params.items()}
        else:
            lifted = {name: Tensor(value) for name, value in params.items()}
        self._watched[key] = lifted
        return lifted

class Tensor:
    """参与反向模式微分的64位浮点稠密张量"""

    __slots__ = ('data', 'graph', 'node_id')

    def __init__(self, data, graph: Optional[Graph] = None, node_id: Optional[int] = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.graph = graph
        self.node_id = node_id

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def requires_grad(self) -> bool:
        return self.node_id is not None

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError('item', self.shape)
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, node_id={self.node_id})"

    def __add__(self, other: 'Tensor') -> 'Tensor':
        return add(self, other)

    def __mul__(self, other: 'Tensor') -> 'Tensor':
        return mul(self, other)

    def __matmul__(self, other: 'Tensor') -> 'Tensor':
        return matmul(self, other)

def _check_finite(op: str, *arrays: np.ndarray) -> None:
    for array in arrays:
        if not np.all(np.isfinite(array)):
            raise NumericError(f"{op}: 出现非有限数值 (NaN/Inf)")

def _graph_of(op: str, *tensors: Tensor) -> Optional[Graph]:
    graphs = {id(t.graph): t.graph for t in tensors if t.requires_grad}
    if len(graphs) > 1:
        raise GraphError(f"{op}: 输入来自不同的计算图")
    return next(iter(graphs.values()), None)

def _record(op: str, out: np.ndarray, inputs: Sequence[Tensor], backward: BackwardFn) -> Tensor:
    """生成输出张量；仅当存在需要梯度的输入时才登记节点"""
    _check_finite(op, out)
    graph = _graph_of(op, *inputs)
    if graph is None:
        return Tensor(out)
    parents = tuple(t.node_id if t.requires_grad else -1 for t in inputs)
    node_id = graph._append(op, parents, backward)
    return Tensor(out, graph, node_id)

def matmul(a: Tensor, b: Tensor) -> Tensor:
    _check_finite('matmul', a.data, b.data)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError('matmul', a.shape, b.shape)
    x, y = a.data, b.data

    def backward(g):
        return g @ y.T, x.T @ g

    return _record('matmul', x @ y, (a, b), backward)

def _broadcast_leading(op: str, a: Tensor, b: Tensor) -> bool:
    """b 与 a 同形状，或 b 的形状等于 a 去掉首轴后的形状"""
    if a.shape == b.shape:
        return False
    if a.data.ndim >= 1 and b.shape == a.shape[1:]:
        return True
    raise ShapeError(op, a.shape, b.shape)

def add(a: Tensor, b: Tensor) -> Tensor:
    _check_finite('add', a.data, b.data)
    broadcast = _broadcast_leading('add', a, b)

    def backward(g):
        return g, (g.sum(axis=0) if broadcast else g)

    return _record('add', a.data + b.data, (a, b), backward)

def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_finite('mul', a.data, b.data)
    broadcast = _broadcast_leading('mul', a, b)
    x, y = a.data, b.data

    def backward(g):
        gb = g * x
        return g * y, (gb.sum(axis=0) if broadcast else gb)

    return _record('mul', x * y, (a, b), backward)

def scale(a: Tensor, c: float) -> Tensor:
    _check_finite('scale', a.data, np.asarray(c))
    return _record('scale', a.data * c, (a,), lambda g: (g * c,))

def relu(a: Tensor) -> Tensor:
    _check_finite('relu', a.data)
    positive = a.data > 0
    return _record('relu', np.where(positive, a.data, 0.0), (a,), lambda g: (g * positive,))

def tanh(a: Tensor) -> Tensor:
    _check_finite('tanh', a.data)
    out = np.tanh(a.data)
    return _record('tanh', out, (a,), lambda g: (g * (1.0 - out * out),))

def mean(a: Tensor, axis: Optional[int] = None) -> Tensor:
    _check_finite('mean', a.data)
    if axis is not None and not -a.data.ndim <= axis < a.data.ndim:
        raise ShapeError(f'mean(axis={axis})', a.shape)
    shape = a.shape
    count = a.data.size if axis is None else shape[axis]

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape) / count,)

    return _record('mean', a.data.mean(axis=axis), (a,), backward)

def embedding_lookup(table: Tensor, ids: np.ndarray) -> Tensor:
    """按整数ID取嵌入表的行，输出形状 ids.shape + (embed_dim,)"""
    _check_finite('embedding_lookup', table.data)
    ids = np.asarray(ids)
    if table.data.ndim != 2 or not np.issubdtype(ids.dtype, np.integer):
        raise ShapeError('embedding_lookup', table.shape, ids.shape)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError('embedding_lookup(id超出词表)', table.shape, ids.shape)
    rows = table.shape

    def backward(g):
        grad = np.zeros(rows)
        np.add.at(grad, ids.reshape(-1), g.reshape(-1, rows[1]))
        return (grad,)

    return _record('embedding_lookup', table.data[ids], (table,), backward)

def masked_mean_pool(x: Tensor, mask: np.ndarray) -> Tensor:
    """沿词元轴对有效位置求平均；x 为 [batch, len, dim]，mask 为 [batch, len]

    全为填充的行输出零向量。
    """
    _check_finite('masked_mean_pool', x.data)
    mask = np.asarray(mask, dtype=np.float64)
    if x.data.ndim != 3 or mask.shape != x.shape[:2]:
        raise ShapeError('masked_mean_pool', x.shape, mask.shape)
    counts = np.maximum(mask.sum(axis=1, keepdims=True), 1.0)
    weights = mask[:, :, None]
    pooled = (x.data * weights).sum(axis=1) / counts

    def backward(g):
        return ((g / counts)[:, None, :] * weights,)

    return _record('masked_mean_pool', pooled, (x,), backward)

def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)

def softmax_cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """批平均的softmax交叉熵，targets 为类别下标"""
    _check_finite('softmax_cross_entropy', logits.data)
    targets = np.asarray(targets)
    if logits.data.ndim != 2 or targets.shape != (logits.shape[0],):
        raise ShapeError('softmax_cross_entropy', logits.shape, targets.shape)
    num_classes = logits.shape[1]
    if not np.issubdtype(targets.dtype, np.integer) or targets.min() < 0 or targets.max() >= num_classes:
        raise ShapeError(f'softmax_cross_entropy(类别下标须在[0,{num_classes})内)', logits.shape, targets.shape)

    batch = logits.shape[0]
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    picked = z[np.arange(batch), targets]
    loss = np.mean(log_norm - picked)

    def backward(g):
        grad = softmax(logits.data)
        grad[np.arange(batch), targets] -= 1.0
        return (grad * (g / batch),)

    return _record('softmax_cross_entropy', np.asarray(max(loss, 0.0)), (logits,), backward)

def mse(prediction: Tensor, target: np.ndarray) -> Tensor:
    """均方误差；target 会被reshape为 prediction 的形状"""
    _check_finite('mse', prediction.data)
    target = np.asarray(target, dtype=np.float64)
    if target.size != prediction.data.size:
        raise ShapeError('mse', prediction.shape, target.shape)
    target = target.reshape(prediction.shape)
    _check_finite('mse', target)
    diff = prediction.data - target
    n = diff.size

    def backward(g):
        return (g * 2.0 * diff / n,)

    return _record('mse', np.asarray(np.mean(diff * diff)), (prediction,), backward)

def dropout(a: Tensor, rate: float, rng: Optional[np.random.Generator], training: bool) -> Tensor:
    """倒置dropout；评估模式下原样返回输入张量"""
    if not training or rate == 0.0:
        return a
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout 比例必须在[0,1)内: {rate}")
    if rng is None:
        raise GraphError("训练模式下的dropout需要随机数生成器")
    keep = (rng.random(a.shape) >= rate) / (1.0 - rate)
    return _record('dropout', a.data * keep, (a,), lambda g: (g * keep,))

def _named_values(params) -> List[Tuple[str, np.ndarray]]:
    if hasattr(params, 'items'):
        return list(params.items())
    pairs = []
    for group in params:
        pairs.extend(group.items())
    return pairs

def backward(root: Tensor, params: Union['ParamSet', Sequence['ParamSet']]) -> Dict[str, np.ndarray]:
    """从标量根节点反向传播，返回 参数名 → 梯度

    params 可以是单个参数集，也可以是多个参数集（如 θ 与 W 联合求导）。
    未参与计算的参数得到零梯度。

    Raises:
        GraphError: 根节点非标量或图已被消费
    """
    if root.data.size != 1 or root.data.ndim > 1:
        raise GraphError(f"backward 需要标量根节点，实际形状 {root.shape}")
    named = _named_values(params)
    if not root.requires_grad:
        return {name: np.zeros_like(value) for name, value in named}

    graph = root.graph
    if graph.consumed:
        raise GraphError("计算图已被消费，每张图只能反向传播一次")
    graph.consumed = True

    grads: Dict[int, np.ndarray] = {root.node_id: np.ones_like(root.data)}
    for node_id in range(root.node_id, -1, -1):
        g = grads.pop(node_id, None)
        if g is None:
            continue
        node = graph.nodes[node_id]
        if node.backward is None:
            grads[node_id] = g
            continue
        for parent, parent_grad in zip(node.parents, node.backward(g)):
            if parent < 0 or parent_grad is None:
                continue
            if parent in grads:
                grads[parent] = grads[parent] + parent_grad
            else:
                grads[parent] = parent_grad
    logger.debug(f"反向传播完成: {len(graph.nodes)} 个节点")

    result = {}
    for name, value in named:
        node_id = graph.params.get(name)
        grad = grads.get(node_id) if node_id is not None else None
        result[name] = np.zeros_like(value) if grad is None else np.array(grad, dtype=np.float64).reshape(value.shape)
        _check_finite(f'backward({name})', result[name])
    return result
