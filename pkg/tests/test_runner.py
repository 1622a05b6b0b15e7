import json
from pathlib import Path

import pandas as pd
import pytest
import yaml

from lib.core.checkpoint import load_checkpoint, save_checkpoint
from lib.core.gradcheck_suite import corrupt_gradient
from lib.core.meta_learner import TrainingLog
from lib.core.runner import ExperimentRunner, find_epoch_checkpoints, run_command
from lib.handlers.dataset_handler import DatasetSchema, load_jsonl
from lib.handlers.synthetic import gen_synthetic_stream
from lib.models.network import EncoderSpec, init_rln
from lib.reporters.forgetting_reporter import read_report_csv
from lib.utils.exceptions import CheckpointError, ConfigError, MetaGradientError, ReportError
from lib.utils.helpers import merge_dicts
from run import main

ACCEPTANCE_CONFIG = Path(__file__).resolve().parent.parent / 'config' / 'acceptance.yaml'

@pytest.fixture
def make_runner():
    runners = []

    def factory(raw, **changes):
        runner = ExperimentRunner(raw=merge_dicts(raw, changes), log_to_file=False)
        runners.append(runner)
        return runner

    yield factory
    for runner in runners:
        runner.close()

def test_train_writes_checkpoints_and_log(smoke_raw, make_runner):
    runner = make_runner(smoke_raw)
    written = runner.cmd_train()
    out = runner.output_dir
    assert [epoch for epoch, _ in find_epoch_checkpoints(out / 'checkpoints')] == [1, 2]
    assert written['final'] == out / 'checkpoints' / 'theta_final.ckpt'
    assert load_checkpoint(written['final'], runner.config.encoder_spec).num_coordinates > 0

    records = [json.loads(line) for line in (out / 'train_log.jsonl').read_text(encoding='utf-8').splitlines()]
    assert len(records) == 2 * 2
    assert set(records[0]) == {'epoch', 'task', 'loss', 'lr', 'mode'}
    assert json.loads((out / 'run.json').read_text(encoding='utf-8'))['method'] == 'maml_rep'
    assert (out / 'config.yaml').is_file()
    assert not list(out.glob('.staging-*'))

def test_rerun_is_byte_identical(smoke_raw, make_runner, tmp_path):
    a = make_runner(smoke_raw).cmd_train()
    b = make_runner(smoke_raw, experiment={'output_dir': str(tmp_path / 'again')}).cmd_train()
    for key in ('final', 'epoch1', 'log'):
        assert a[key].read_bytes() == b[key].read_bytes()

def test_oml_logs_per_sample_mode(smoke_raw, make_runner):
    runner = make_runner(smoke_raw, experiment={'method': 'oml'})
    written = runner.cmd_train()
    assert {r.mode for r in TrainingLog.from_jsonl(written['log']).records} == {'per_sample'}

def test_oml_rejects_batched_inner_mode(smoke_raw, make_runner):
    with pytest.raises(ConfigError):
        make_runner(smoke_raw, experiment={'method': 'oml'}, meta={'inner_mode': 'batched'})

def test_sequential_method_runs_baseline(smoke_raw, make_runner):
    written = make_runner(smoke_raw, experiment={'method': 'sequential'}).cmd_train()
    assert {r.mode for r in TrainingLog.from_jsonl(written['log']).records} == {'joint'}

def test_shared_targets_reuse_the_training_stream(smoke_raw, make_runner):
    runner = make_runner(smoke_raw, data={'synthetic': {'shared_targets': True}})
    train, targets = runner.build_streams()
    assert list(targets) == ['default']
    assert targets['default'].ids == train.ids
    assert len(train) == 3
    assert targets['default'].phase.value == 'meta_test'

def test_baseline_without_pretraining_keeps_initial_theta(smoke_raw, make_runner):
    runner = make_runner(smoke_raw, experiment={'method': 'sequential'}, meta={'baseline_epochs': 0})
    written = runner.cmd_train()
    theta = load_checkpoint(written['final'], runner.config.encoder_spec)
    assert theta.equals(init_rln(runner.config.encoder_spec, runner.config.seed))
    assert len(TrainingLog.from_jsonl(written['log'])) == 0

def test_test_command_writes_reports(smoke_raw, make_runner):
    runner = make_runner(smoke_raw)
    final = runner.cmd_train()['final']
    reports = runner.cmd_test(final)
    report = reports['default']
    suite_dir = runner.output_dir / 'reports' / 'default'

    matrix = read_report_csv(suite_dir / 'report.csv')
    assert matrix.tasks == report.matrix.tasks
    assert matrix.immediate == report.matrix.immediate
    assert matrix.final == report.matrix.final

    summary = json.loads((suite_dir / 'summary.json').read_text(encoding='utf-8'))
    assert summary['method'] == 'maml_rep'
    assert summary['mean_forgetting_delta'] is None  # 只有一个目标任务
    assert '/' in (suite_dir / 'report.md').read_text(encoding='utf-8')
    assert (suite_dir / 'report.html').is_file()

def test_test_reports_are_byte_identical(smoke_raw, make_runner, tmp_path):
    outputs = []
    for name in ('a', 'b'):
        runner = make_runner(smoke_raw, experiment={'output_dir': str(tmp_path / name)})
        runner.cmd_test(runner.cmd_train()['final'])
        outputs.append(runner.output_dir / 'reports' / 'default')
    for file_name in ('report.csv', 'report.md'):
        assert (outputs[0] / file_name).read_bytes() == (outputs[1] / file_name).read_bytes()

def test_missing_checkpoint(smoke_raw, make_runner, tmp_path):
    with pytest.raises(CheckpointError):
        make_runner(smoke_raw).cmd_test(tmp_path / 'absent.ckpt')

def test_failed_test_leaves_no_partial_output(smoke_raw, make_runner, tmp_path):
    runner = make_runner(smoke_raw)
    wrong = save_checkpoint(tmp_path / 'wrong.ckpt', init_rln(EncoderSpec(vocab_size=32, embed_dim=3), 0))
    with pytest.raises(CheckpointError):
        runner.cmd_test(wrong)
    assert not (runner.output_dir / 'reports').exists()
    assert not list(runner.output_dir.glob('.staging-*'))

def test_checkpoint_directory_sweep(smoke_raw, make_runner):
    runner = make_runner(smoke_raw)
    runner.cmd_train()
    runner.cmd_test(runner.output_dir / 'checkpoints')
    sweep = (runner.output_dir / 'reports' / 'sweep.csv').read_text(encoding='utf-8').splitlines()
    assert sweep[0] == 'epoch,suite,task,metric,immediate,final,delta'
    assert {line.split(',')[0] for line in sweep[1:]} == {'1', '2'}
    assert (runner.output_dir / 'reports' / 'default' / 'summary.json').is_file()

def test_gradcheck_passes(smoke_raw, make_runner):
    runner = make_runner(smoke_raw)
    summary = runner.cmd_gradcheck()
    assert summary.passed
    assert json.loads((runner.output_dir / 'gradcheck.json').read_text(encoding='utf-8'))['passed'] is True

def test_gradcheck_detects_corrupted_gradient(smoke_raw, make_runner):
    runner = make_runner(smoke_raw)
    with pytest.raises(MetaGradientError):
        runner.cmd_gradcheck(hook=corrupt_gradient)
    assert json.loads((runner.output_dir / 'gradcheck.json').read_text(encoding='utf-8'))['passed'] is False

def test_gen_data_round_trip(smoke_raw, make_runner):
    runner = make_runner(smoke_raw)
    written = runner.cmd_gen_data()
    data_dir = runner.output_dir / 'data'
    manifest = json.loads((data_dir / 'manifest.json').read_text(encoding='utf-8'))
    assert len(manifest['tasks']) == 3
    assert len(list(data_dir.glob('*.jsonl'))) == 3

    stream = gen_synthetic_stream(runner.synthetic_spec(), runner.config.seed)
    for task in stream:
        loaded = load_jsonl(str(written[task.id]), DatasetSchema(task.kind))
        expected = [s for samples in task.splits.values() for s in samples]
        assert [(s.text, s.label) for s in loaded] == [(s.text, s.label) for s in expected]

def test_gen_data_is_deterministic(smoke_raw, make_runner, tmp_path):
    a = make_runner(smoke_raw).cmd_gen_data()
    b = make_runner(smoke_raw, experiment={'output_dir': str(tmp_path / 'again')}).cmd_gen_data()
    for key in a:
        assert a[key].read_bytes() == b[key].read_bytes()

def test_train_from_generated_files(smoke_raw, make_runner, tmp_path):
    generated = make_runner(smoke_raw).cmd_gen_data()
    ids = sorted(k for k in generated if k != 'manifest')
    datasets = [
        {'id': task_id, 'path': str(generated[task_id]), 'metric': 'accuracy',
         'phase': 'meta_train' if i < 2 else 'meta_test', 'suite': 'synthetic'}
        for i, task_id in enumerate(ids)
    ]
    raw = merge_dicts(smoke_raw, {'experiment': {'output_dir': str(tmp_path / 'files')}})
    raw['data'] = {'source': 'files', 'datasets': datasets}
    runner = make_runner(raw)
    reports = runner.cmd_test(runner.cmd_train()['final'])
    assert list(reports) == ['synthetic']
    assert reports['synthetic'].matrix.tasks == [ids[2]]

def test_report_compares_methods(smoke_raw, make_runner, tmp_path):
    runs = tmp_path / 'runs'
    for method in ('maml_rep', 'sequential'):
        runner = make_runner(smoke_raw, experiment={'method': method, 'output_dir': str(runs / method)})
        runner.cmd_test(runner.cmd_train()['final'])

    reporter = make_runner(smoke_raw, experiment={'output_dir': str(tmp_path / 'cmp')})
    written = reporter.cmd_report(runs)
    markdown = written['markdown'].read_text(encoding='utf-8')
    assert 'maml_rep' in markdown and 'sequential' in markdown
    methods = written['methods'].read_text(encoding='utf-8').splitlines()
    assert methods[0] == 'suite,method,seeds,mean_final,mean_forgetting_delta'
    assert len(methods) == 3
    significance = written['significance'].read_text(encoding='utf-8').splitlines()
    assert len(significance) == 1 + 2 * 2

def test_report_on_empty_directory(smoke_raw, make_runner, tmp_path):
    (tmp_path / 'empty').mkdir()
    with pytest.raises(ReportError):
        make_runner(smoke_raw).cmd_report(tmp_path / 'empty')

def test_unknown_config_key_fails_before_work(smoke_raw, tmp_path):
    raw = merge_dicts(smoke_raw, {'meta': {'inner_step': 3}})
    with pytest.raises(ConfigError):
        ExperimentRunner(raw=raw, log_to_file=False)
    assert not (tmp_path / 'run').exists()

def test_seed_override(smoke_raw, tmp_path):
    config_path = tmp_path / 'smoke.yaml'
    config_path.write_text(json.dumps(smoke_raw), encoding='utf-8')
    written = run_command('train', str(config_path), out=str(tmp_path / 'seeded'), seed=7)
    assert json.loads(written['run'].read_text(encoding='utf-8'))['seed'] == 7

def test_cli_exits_nonzero_on_error(tmp_path):
    with pytest.raises(SystemExit) as info:
        main(['train', '-c', str(tmp_path / 'missing.yaml')])
    assert info.value.code == 1

def test_cli_test_requires_checkpoint(smoke_raw, tmp_path):
    config_path = tmp_path / 'smoke.yaml'
    config_path.write_text(json.dumps(smoke_raw), encoding='utf-8')
    with pytest.raises(SystemExit) as info:
        main(['test', '-c', str(config_path)])
    assert info.value.code == 1

@pytest.mark.slow
def test_maml_rep_beats_sequential_on_paired_seeds(make_runner, tmp_path):
    raw = yaml.safe_load(ACCEPTANCE_CONFIG.read_text(encoding='utf-8'))
    runs = tmp_path / 'runs'
    for seed in range(20):
        for method in ('maml_rep', 'sequential'):
            runner = make_runner(raw, meta={'seed': seed},
                                 experiment={'method': method, 'output_dir': str(runs / method / str(seed))})
            runner.cmd_test(runner.cmd_train()['final'])

    written = make_runner(raw, experiment={'output_dir': str(tmp_path / 'cmp')}).cmd_report(runs)
    methods = pd.read_csv(written['methods']).set_index('method')
    assert methods.loc['maml_rep', 'seeds'] == 20
    assert methods.loc['maml_rep', 'mean_final'] > methods.loc['sequential', 'mean_final']
    assert methods.loc['maml_rep', 'mean_forgetting_delta'] < methods.loc['sequential', 'mean_forgetting_delta']

    tests = pd.read_csv(written['significance'])
    ours = tests[(tests['method'] == 'maml_rep') & (tests['other'] == 'sequential')].set_index('statistic')
    for statistic in ('mean_final', 'mean_forgetting_delta'):
        assert ours.loc[statistic, 'p_value'] < 0.05, ours.loc[statistic].to_dict()
