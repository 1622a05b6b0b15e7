"""
θ 检查点的二进制格式

    magic  b"MCLCKPT\\0" | version u16 | role (u8 长度 + utf-8) | count u32
    每个参数: name (u16 长度 + utf-8) | ndim u8 | dims u32 × ndim | 小端 float64 数据

所有整数均为小端序。
"""

import struct
from collections import OrderedDict
from pathlib import Path
from typing import Optional, Union

import numpy as np
from loguru import logger

from ..models.network import EncoderSpec, init_rln
from ..models.params import ParamSet, Role
from ..utils.exceptions import CheckpointError

MAGIC = b"MCLCKPT\0"
FORMAT_VERSION = 1

def save_checkpoint(path: Union[str, Path], params: ParamSet) -> Path:
    """写出参数集；相同参数得到逐字节相同的文件"""
    path = Path(path)
    chunks = [MAGIC, struct.pack('<H', FORMAT_VERSION)]
    role = params.role.value.encode('utf-8')
    chunks.append(struct.pack('<B', len(role)) + role)
    chunks.append(struct.pack('<I', len(params)))
    for name, value in params.items():
        encoded = name.encode('utf-8')
        chunks.append(struct.pack('<H', len(encoded)) + encoded)
        chunks.append(struct.pack('<B', value.ndim))
        chunks.append(struct.pack(f'<{value.ndim}I', *value.shape))
        chunks.append(np.ascontiguousarray(value, dtype='<f8').tobytes())
    path.write_bytes(b''.join(chunks))
    logger.debug(f"检查点已保存: {path}")
    return path

class _Reader:
    def __init__(self, data: bytes, path: Path):
        self.data = data
        self.offset = 0
        self.path = path

    def take(self, size: int) -> bytes:
        if self.offset + size > len(self.data):
            raise CheckpointError(f"检查点文件被截断: {self.path}")
        chunk = self.data[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

def load_checkpoint(path: Union[str, Path], spec: Optional[EncoderSpec] = None) -> ParamSet:
    """读取检查点；给定 spec 时校验参数名与形状

    Raises:
        CheckpointError: 文件缺失、格式错误或与模型规格不符
    """
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"检查点不存在: {path}")
    reader = _Reader(path.read_bytes(), path)
    if reader.take(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"不是检查点文件: {path}")
    (version,) = reader.unpack('<H')
    if version != FORMAT_VERSION:
        raise CheckpointError(f"不支持的检查点版本 {version}: {path}")
    (role_len,) = reader.unpack('<B')
    role = reader.take(role_len).decode('utf-8')
    (count,) = reader.unpack('<I')

    entries = OrderedDict()
    for _ in range(count):
        (name_len,) = reader.unpack('<H')
        name = reader.take(name_len).decode('utf-8')
        (ndim,) = reader.unpack('<B')
        shape = reader.unpack(f'<{ndim}I') if ndim else ()
        size = int(np.prod(shape)) if shape else 1
        entries[name] = np.frombuffer(reader.take(size * 8), dtype='<f8').reshape(shape).astype(np.float64)
    if reader.offset != len(reader.data):
        raise CheckpointError(f"检查点末尾有多余数据: {path}")

    params = ParamSet(entries, Role(role), spec)
    if spec is not None:
        expected = init_rln(spec, seed=0).shapes()
        if params.shapes() != expected:
            raise CheckpointError(
                f"检查点与模型规格不符: {path}\n  检查点: {params.shapes()}\n  模型: {expected}"
            )
    return params
