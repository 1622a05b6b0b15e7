import numpy as np
import pytest

from lib.core.config import MetaConfig
from lib.handlers.synthetic import SyntheticSpec, gen_synthetic_stream
from lib.models.network import EncoderSpec

def pytest_addoption(parser):
    parser.addoption('--runslow', action='store_true', default=False, help='运行标记为 slow 的统计实验')

def pytest_collection_modifyitems(config, items):
    if config.getoption('--runslow'):
        return
    skip_slow = pytest.mark.skip(reason='需要 --runslow')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip_slow)

@pytest.fixture
def rng():
    return np.random.default_rng(1234)

@pytest.fixture
def tiny_spec():
    return EncoderSpec(vocab_size=64, embed_dim=6, hidden_dims=(5,), max_len=12, dropout_rate=0.1)

@pytest.fixture
def tiny_config():
    return MetaConfig(
        inner_steps_train=2,
        inner_steps_test=3,
        batch_size=4,
        support_size=8,
        query_size=8,
        train_size=8,
        meta_epochs=2,
        checkpoint_every=1,
        trajectory_len=4,
        outer_lr=1e-2,
    )

@pytest.fixture
def tiny_synthetic():
    return SyntheticSpec(
        n_tasks=3,
        samples_per_task=40,
        vocab=120,
        min_len=4,
        max_len=10,
        support_size=8,
        query_size=8,
        train_size=8,
    )

@pytest.fixture
def tiny_stream(tiny_synthetic):
    return gen_synthetic_stream(tiny_synthetic, seed=0)

@pytest.fixture
def smoke_raw(tmp_path):
    """几秒内跑完的完整实验配置"""
    return {
        'meta': {
            'inner_steps_train': 2,
            'inner_steps_test': 3,
            'batch_size': 4,
            'support_size': 8,
            'query_size': 8,
            'train_size': 8,
            'meta_epochs': 2,
            'checkpoint_every': 1,
            'trajectory_len': 4,
            'outer_lr': 1e-2,
        },
        'model': {'vocab_size': 64, 'embed_dim': 6, 'hidden_dims': [5], 'max_len': 12},
        'data': {
            'source': 'synthetic',
            'synthetic': {
                'n_tasks': 3,
                'train_tasks': 2,
                'samples_per_task': 40,
                'vocab': 120,
                'min_len': 4,
                'max_len': 10,
            },
        },
        'experiment': {
            'method': 'maml_rep',
            'output_dir': str(tmp_path / 'run'),
            'report_formats': ['csv', 'markdown', 'html'],
        },
    }
