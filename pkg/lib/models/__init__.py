"""
模型模块：参数集与两段式网络
"""

from .params import ParamSet, Role
from .network import EncoderSpec, HeadSpec, encode, init_pln, init_rln, predict

__all__ = ['ParamSet', 'Role', 'EncoderSpec', 'HeadSpec', 'encode', 'init_pln', 'init_rln', 'predict']
