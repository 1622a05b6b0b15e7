from pathlib import Path

import pytest

from lib.core.config import ExperimentConfig, InnerMode, MetaConfig, Method
from lib.utils.exceptions import ConfigError

CONFIG_DIR = Path(__file__).resolve().parent.parent / 'config'

def tsv_columns(columns):
    return {'data': {'datasets': [{'id': 'x', 'path': 'x.tsv', 'metric': 'accuracy',
                                   'format': 'tsv', 'columns': columns}]}}

def test_defaults():
    config = ExperimentConfig()
    assert config.method is Method.MAML_REP
    assert config.meta.inner_steps_train == 5
    assert config.meta.inner_steps_test == 7
    assert config.meta.outer_lr == 5e-5
    assert config.encoder_spec.hidden_dims == (128, 64)
    assert config.source == 'synthetic'

def test_shipped_configs_load():
    assert ExperimentConfig(str(CONFIG_DIR / 'experiment.yaml')).meta.meta_epochs == 20
    assert ExperimentConfig(str(CONFIG_DIR / 'smoke.yaml')).report_formats == ['csv', 'markdown', 'html']

    acceptance = ExperimentConfig(str(CONFIG_DIR / 'acceptance.yaml'))
    assert acceptance.synthetic.shared_targets is True
    assert acceptance.meta.baseline_passes() == 0
    assert acceptance.meta.theta_finetune_lr() == 5e-3
    assert acceptance.meta.finetune_lr == 5e-2

def test_overrides_win_over_file_values(tmp_path):
    path = tmp_path / 'c.yaml'
    path.write_text('meta:\n  seed: 3\n  inner_lr: 0.01\n', encoding='utf-8')
    config = ExperimentConfig(str(path), overrides={'meta': {'seed': 9}})
    assert config.seed == 9
    assert config.meta.inner_lr == 0.01

def test_oml_forces_per_sample():
    config = ExperimentConfig(raw={'experiment': {'method': 'oml'}})
    assert config.meta.inner_mode == InnerMode.PER_SAMPLE.value

def test_integer_written_for_float_field():
    assert ExperimentConfig(raw={'meta': {'outer_lr': 0}}).meta.outer_lr == 0.0
    assert ExperimentConfig(raw={'meta': {'finetune_theta_lr': 1}}).meta.finetune_theta_lr == 1.0

def test_optional_learning_rates_fall_back():
    meta = ExperimentConfig().meta
    assert meta.finetune_theta_lr is None and meta.theta_finetune_lr() == meta.finetune_lr
    assert meta.baseline_epochs is None and meta.baseline_passes() == meta.meta_epochs
    assert MetaConfig(baseline_epochs=0).baseline_passes() == 0

def test_tsv_columns_accept_null_pair():
    raw = tsv_columns({'text': 0, 'label': 1, 'pair': None})
    assert ExperimentConfig(raw=raw).datasets[0].columns == {'text': 0, 'label': 1, 'pair': None}

@pytest.mark.parametrize('raw', [
    {'metaa': {}},
    {'meta': {'inner_steps_train': -1}},
    {'meta': {'inner_steps_train': 'five'}},
    {'meta': {'grad_mode': 'second_order'}},
    {'meta': {'inner_optimizer': 'rmsprop'}},
    {'model': {'dropout_rate': 1.5}},
    {'experiment': {'method': 'ewc'}},
    {'experiment': {'report_formats': ['pdf']}},
    {'data': {'source': 'files'}},
    {'data': {'datasets': [{'id': 'x', 'path': 'x.tsv', 'metric': 'accuracy', 'format': 'tsv'}]}},
    {'data': {'datasets': [{'id': 'x', 'metric': 'accuracy'}]}},
    {'meta': {'finetune_theta_lr': 0}},
    {'meta': {'finetune_theta_lr': 'fast'}},
    {'meta': {'baseline_epochs': -1}},
    {'meta': {'baseline_epochs': 1.5}},
    {'data': {'synthetic': {'shared_targets': 'yes'}}},
    tsv_columns({'text': 0, 'lable': 1}),
    tsv_columns({'text': 0}),
    tsv_columns({'text': '0', 'label': 1}),
    tsv_columns({'text': 0, 'label': -1}),
    tsv_columns({'text': 0, 'label': 1, 'pair': True}),
])
def test_invalid_configs(raw):
    with pytest.raises(ConfigError):
        ExperimentConfig(raw=raw)

def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError, match='不存在'):
        ExperimentConfig(str(tmp_path / 'nope.yaml'))

def test_meta_config_replace_validates():
    with pytest.raises(ConfigError):
        MetaConfig().replace(batch_size=0)
