"""
空白分词 + 稳定哈希词表
"""

import hashlib
from functools import lru_cache
from typing import Optional, Sequence, Tuple

import numpy as np

from ..utils.exceptions import ConfigError

PAD_ID = 0
SEP_ID = 1
FIRST_TOKEN_ID = 2

@lru_cache(maxsize=65536)
def token_id(token: str, vocab_size: int) -> int:
    """把词元稳定地哈希到 [2, vocab_size)，跨进程结果一致"""
    digest = hashlib.blake2b(token.encode('utf-8'), digest_size=8).digest()
    return FIRST_TOKEN_ID + int.from_bytes(digest, 'little') % (vocab_size - FIRST_TOKEN_ID)

def tokenize(
    text: str,
    vocab_size: int,
    max_len: int,
    text_pair: Optional[str] = None
) -> Tuple[np.ndarray, np.ndarray]:
    """小写化、空白切分、哈希，截断后补齐到 max_len

    Args:
        text: 文本
        vocab_size: 词表大小（至少为3）
        max_len: 最大长度
        text_pair: 句对任务的第二个句子，用分隔符 1 连接

    Returns:
        (token_ids, mask)，均为长度 max_len 的整数数组
    """
    if max_len < 1:
        raise ConfigError(f"max_len 必须为正: {max_len}")
    if vocab_size <= FIRST_TOKEN_ID:
        raise ConfigError(f"vocab_size 至少为 {FIRST_TOKEN_ID + 1}: {vocab_size}")

    ids = [token_id(tok, vocab_size) for tok in text.lower().split()]
    if text_pair is not None:
        ids.append(SEP_ID)
        ids.extend(token_id(tok, vocab_size) for tok in text_pair.lower().split())
    ids = ids[:max_len]

    token_ids = np.full(max_len, PAD_ID, dtype=np.int64)
    mask = np.zeros(max_len, dtype=np.int64)
    token_ids[:len(ids)] = ids
    mask[:len(ids)] = 1
    return token_ids, mask

def tokenize_batch(
    texts: Sequence[str],
    vocab_size: int,
    max_len: int,
    text_pairs: Optional[Sequence[Optional[str]]] = None
) -> Tuple[np.ndarray, np.ndarray]:
    """批量分词，返回 [N, max_len] 的 ids 与 mask"""
    pairs = text_pairs if text_pairs is not None else [None] * len(texts)
    token_ids = np.zeros((len(texts), max_len), dtype=np.int64)
    mask = np.zeros((len(texts), max_len), dtype=np.int64)
    for i, (text, pair) in enumerate(zip(texts, pairs)):
        token_ids[i], mask[i] = tokenize(text, vocab_size, max_len, pair)
    return token_ids, mask
