import json
import re
import shutil
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Tuple, Union

import numpy as np
import yaml
from loguru import logger

from ..handlers.dataset import METRIC_KINDS, Phase, Task, TaskStream, assign_splits
from ..handlers.dataset_handler import ColumnSpec, DatasetSchema, load_jsonl, load_tsv
from ..handlers.synthetic import SyntheticSpec, gen_synthetic_stream, partition_stream
from ..reporters.comparison_reporter import ComparisonReporter, load_run_summaries
from ..reporters.forgetting_reporter import ForgettingReporter, sweep_frame
from ..utils.exceptions import CheckpointError, DataError, MetaCLError, MetaGradientError
from ..utils.helpers import ensure_directory, format_json
from ..utils.logger import LoggerManager
from .checkpoint import load_checkpoint, save_checkpoint
from .config import DatasetConfig, ExperimentConfig, Method
from .evaluator import EvalReport, forgetting_delta, run_meta_test
from .gradcheck_suite import GradCheckSummary, GradHook, run_gradcheck
from .meta_learner import MetaTrainResult, meta_train, sequential_baseline

CHECKPOINT_PATTERN = re.compile(r'^theta_epoch(\d+)\.ckpt$')
FINAL_CHECKPOINT = 'theta_final.ckpt'
RUN_FILE = 'run.json'

def checkpoint_name(epoch: int) -> str:
    return f"theta_epoch{epoch}.ckpt"

def find_epoch_checkpoints(directory: Path) -> List[Tuple[int, Path]]:
    """目录中按轮数排序的 theta_epoch*.ckpt"""
    found = []
    for path in directory.iterdir():
        match = CHECKPOINT_PATTERN.match(path.name)
        if match:
            found.append((int(match.group(1)), path))
    return sorted(found)

class ExperimentRunner:
    def __init__(
        self,
        config_path: Optional[str] = None,
        overrides: Optional[Dict[str, Any]] = None,
        raw: Optional[Dict[str, Any]] = None,
        log_to_file: bool = True
    ):
        """初始化实验运行器

        Args:
            config_path: YAML 配置文件路径，缺省时使用内置默认值
            overrides: 命令行覆盖项（--seed、--out）
            raw: 直接给出的配置字典，优先级低于 overrides
            log_to_file: 是否在输出目录下写日志文件
        """
        # 任何计算之前先完成配置校验
        self.config = ExperimentConfig(config_path, overrides, raw)
        self.output_dir = ensure_directory(self.config.output_dir)

        self.logger_manager = (
            LoggerManager(str(self.output_dir / 'logs'), self.config.log_level) if log_to_file else None
        )
        self.logger = LoggerManager.get_logger()

    def close(self) -> None:
        if self.logger_manager is not None:
            self.logger_manager.close()
            self.logger_manager = None

    @contextmanager
    def staging(self, command: str) -> Iterator[Path]:
        """命令的输出先写入暂存目录，成功后移入输出目录，失败则整体删除"""
        stage = self.output_dir / f".staging-{command}"
        if stage.exists():
            shutil.rmtree(stage)
        stage.mkdir(parents=True)
        try:
            yield stage
        except BaseException:
            shutil.rmtree(stage, ignore_errors=True)
            self.logger.error(f"{command} 失败，已清除部分输出")
            raise
        for item in sorted(stage.rglob('*')):
            if item.is_dir():
                continue
            target = self.output_dir / item.relative_to(stage)
            target.parent.mkdir(parents=True, exist_ok=True)
            item.replace(target)
        shutil.rmtree(stage, ignore_errors=True)

    # ------------------------------------------------------------------ 数据

    def synthetic_spec(self) -> SyntheticSpec:
        s, meta = self.config.synthetic, self.config.meta
        return SyntheticSpec(
            n_tasks=s.n_tasks,
            samples_per_task=s.samples_per_task,
            vocab=s.vocab,
            kinds=tuple(s.kinds),
            noise_rate=s.noise_rate,
            secret_size=s.secret_size,
            min_len=s.min_len,
            max_len=s.max_len,
            disjoint_filler=s.disjoint_filler,
            support_size=meta.support_size,
            query_size=meta.query_size,
            train_size=meta.train_size,
        )

    def _load_dataset(self, d: DatasetConfig) -> Task:
        kind = METRIC_KINDS.get(d.metric)
        if kind is None:
            raise DataError(f"数据集 {d.id}: 未知的评价指标 {d.metric}")
        if d.format == 'jsonl':
            schema = DatasetSchema(kind, d.text_field, d.pair_field, d.label_field, d.label_map)
            samples = load_jsonl(d.path, schema)
        else:
            columns = ColumnSpec(
                text=d.columns['text'], label=d.columns['label'], pair=d.columns.get('pair'),
                kind=kind, label_map=d.label_map
            )
            samples = load_tsv(d.path, columns, d.has_header)

        meta = self.config.meta
        if d.phase == Phase.META_TRAIN.value:
            splits = assign_splits(samples, meta.support_size, meta.query_size, 0, meta.seed, require_eval=False)
            splits = {k: v for k, v in splits.items() if k in ('support', 'query')}
        else:
            splits = assign_splits(samples, 0, 0, meta.train_size, meta.seed, require_eval=True)
            splits = {k: v for k, v in splits.items() if k in ('train', 'eval')}
        return Task(d.id, kind, d.metric, d.num_classes, splits, {'path': d.path, 'suite': d.suite})

    def build_streams(self) -> Tuple[TaskStream, Dict[str, TaskStream]]:
        """构造元训练任务流与按套件分组的目标任务流"""
        if self.config.source == 'synthetic':
            stream = gen_synthetic_stream(self.synthetic_spec(), self.config.seed)
            if self.config.synthetic.shared_targets:
                return (
                    TaskStream(stream.tasks, Phase.META_TRAIN),
                    {'default': TaskStream(stream.tasks, Phase.META_TEST)},
                )
            train, targets = partition_stream(stream, self.config.synthetic.train_tasks)
            return train, {'default': targets}

        train_tasks: List[Task] = []
        suites: Dict[str, List[Task]] = {}
        for d in self.config.datasets:
            task = self._load_dataset(d)
            if d.phase == Phase.META_TRAIN.value:
                train_tasks.append(task)
            else:
                suites.setdefault(d.suite, []).append(task)
        return (
            TaskStream(train_tasks, Phase.META_TRAIN),
            {name: TaskStream(tasks, Phase.META_TEST) for name, tasks in suites.items()},
        )

    # ------------------------------------------------------------------ 训练

    def _write_training(self, stage: Path, result: MetaTrainResult, method: Method) -> Dict[str, Path]:
        ckpt_dir = ensure_directory(stage / 'checkpoints')
        written = {}
        for epoch, theta in sorted(result.checkpoints.items()):
            written[f'epoch{epoch}'] = save_checkpoint(ckpt_dir / checkpoint_name(epoch), theta)
        written['final'] = save_checkpoint(ckpt_dir / FINAL_CHECKPOINT, result.theta)
        written['log'] = result.log.to_jsonl(stage / 'train_log.jsonl')
        snapshot = self.config.snapshot()
        snapshot['experiment']['method'] = method.value
        written['config'] = stage / 'config.yaml'
        written['config'].write_text(yaml.safe_dump(snapshot, sort_keys=True, allow_unicode=True), encoding='utf-8')
        written['run'] = stage / RUN_FILE
        written['run'].write_text(format_json({
            'method': method.value,
            'seed': self.config.seed,
            'meta_epochs': self.config.meta.meta_epochs,
            'checkpoints': sorted(result.checkpoints),
            'inner_calls': result.inner_calls,
        }) + '\n', encoding='utf-8')
        return {k: self.output_dir / v.relative_to(stage) for k, v in written.items()}

    def cmd_train(self) -> Dict[str, Path]:
        """元训练 θ，写出检查点与训练日志

        Returns:
            输出名 → 文件路径
        """
        method = self.config.method
        if method is Method.SEQUENTIAL:
            return self.cmd_baseline()
        train, _ = self.build_streams()
        self.logger.info(f"train: method={method.value}, seed={self.config.seed}, 任务数={len(train)}")
        with self.staging('train') as stage:
            result = meta_train(
                train, self.config.meta, self.config.encoder_spec, self.config.model.head_hidden_dim
            )
            written = self._write_training(stage, result, method)
        self.logger.info(f"训练完成，输出目录: {self.output_dir}")
        return written

    def cmd_baseline(self) -> Dict[str, Path]:
        """顺序微调基线，输出布局与 train 相同"""
        train, _ = self.build_streams()
        self.logger.info(f"baseline: seed={self.config.seed}, 任务数={len(train)}")
        with self.staging('baseline') as stage:
            result = sequential_baseline(
                train, self.config.meta, self.config.encoder_spec, self.config.model.head_hidden_dim
            )
            written = self._write_training(stage, result, Method.SEQUENTIAL)
        self.logger.info(f"基线完成，输出目录: {self.output_dir}")
        return written

    # ------------------------------------------------------------------ 测试

    def _method_for(self, checkpoint: Path) -> str:
        """训练输出目录中的 run.json 决定报告里的方法名"""
        base = checkpoint if checkpoint.is_dir() else checkpoint.parent
        for directory in (base, base.parent):
            run_file = directory / RUN_FILE
            if run_file.is_file():
                return json.loads(run_file.read_text(encoding='utf-8'))['method']
        return self.config.method.value

    def _evaluate_checkpoint(self, path: Path, suites: Dict[str, TaskStream], method: str) -> List[EvalReport]:
        theta = load_checkpoint(path, self.config.encoder_spec)
        snapshot = self.config.snapshot()
        snapshot['experiment']['method'] = method
        reports = []
        for suite, targets in suites.items():
            self.logger.info(f"元测试 {path.name} / 套件 {suite}: {len(targets)} 个目标任务")
            reports.append(run_meta_test(
                theta, targets, self.config.meta, snapshot,
                self.config.model.head_hidden_dim, str(path), suite
            ))
        return reports

    def cmd_test(self, checkpoint: Union[str, Path]) -> Dict[str, EvalReport]:
        """对检查点执行元测试并写出遗忘报告

        checkpoint 为目录时依次测试其中每个 theta_epoch*.ckpt，写出 sweep.csv，
        并为平均最终指标最高的轮次生成报告。

        Raises:
            CheckpointError: 检查点缺失或与模型规格不符
        """
        checkpoint = Path(checkpoint)
        if not checkpoint.exists():
            raise CheckpointError(f"检查点不存在: {checkpoint}")
        _, suites = self.build_streams()
        if not suites:
            raise DataError("没有任何元测试目标任务")
        method = self._method_for(checkpoint)

        with self.staging('test') as stage:
            if checkpoint.is_dir():
                candidates = find_epoch_checkpoints(checkpoint)
                if not candidates:
                    raise CheckpointError(f"目录中没有 theta_epoch*.ckpt: {checkpoint}")
                swept = [(epoch, self._evaluate_checkpoint(path, suites, method)) for epoch, path in candidates]
                frame = sweep_frame(
                    [r for _, reports in swept for r in reports],
                    [epoch for epoch, reports in swept for _ in reports]
                )
                reports_dir = ensure_directory(stage / 'reports')
                frame.to_csv(reports_dir / 'sweep.csv', index=False, lineterminator='\n')
                best_epoch, reports = max(
                    swept, key=lambda item: (np.mean([np.mean(r.matrix.final) for r in item[1]]), -item[0])
                )
                self.logger.info(f"检查点扫描：第 {best_epoch} 轮的平均最终指标最高")
            else:
                reports = self._evaluate_checkpoint(checkpoint, suites, method)

            for report in reports:
                title = f"Forgetting Report: {report.method} / {report.suite} (seed {report.seed})"
                reporter = ForgettingReporter(stage / 'reports' / report.suite, title)
                reporter.generate(report, self.config.report_formats)
                self.logger.info(f"套件 {report.suite}: 平均遗忘量 {forgetting_delta(report.matrix).mean}")
        return {report.suite: report for report in reports}

    # ------------------------------------------------------------------ 其他命令

    def cmd_gradcheck(self, hook: Optional[GradHook] = None) -> GradCheckSummary:
        """在缩小的模型上核对梯度

        Raises:
            MetaGradientError: 任一检查未通过
        """
        summary = run_gradcheck(
            self.config.encoder_spec, self.config.meta, self.config.model.head_hidden_dim, hook
        )
        (self.output_dir / 'gradcheck.json').write_text(format_json(summary.to_dict()) + '\n', encoding='utf-8')
        if not summary.passed:
            failed = [r.name for r in summary.results if not r.passed]
            raise MetaGradientError(f"梯度检查未通过: {failed}")
        return summary

    def cmd_gen_data(self) -> Dict[str, Path]:
        """把合成任务流写成每个任务一个 JSON-lines 文件，另附 manifest.json"""
        spec = self.synthetic_spec()
        stream = gen_synthetic_stream(spec, self.config.seed)
        manifest = {
            'seed': self.config.seed,
            'train_tasks': self.config.synthetic.train_tasks,
            'shared_targets': self.config.synthetic.shared_targets,
            'tasks': [],
        }
        written: Dict[str, Path] = {}
        with self.staging('gen-data') as stage:
            data_dir = ensure_directory(stage / 'data')
            for task in stream:
                path = data_dir / f"{task.id}.jsonl"
                with open(path, 'w', encoding='utf-8') as f:
                    for split, samples in task.splits.items():
                        for sample in samples:
                            row = {'text': sample.text, 'label': sample.label, 'split': split}
                            if sample.text_pair is not None:
                                row['text_pair'] = sample.text_pair
                            f.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + '\n')
                manifest['tasks'].append({
                    'id': task.id,
                    'file': path.name,
                    'metric': task.metric,
                    'kind': task.kind.value,
                    'num_classes': task.num_classes,
                    'secret_tokens': task.metadata.get('secret_tokens', []),
                    'splits': {name: len(samples) for name, samples in task.splits.items()},
                })
                written[task.id] = self.output_dir / 'data' / path.name
            (data_dir / 'manifest.json').write_text(format_json(manifest) + '\n', encoding='utf-8')
            written['manifest'] = self.output_dir / 'data' / 'manifest.json'
        self.logger.info(f"已写出 {len(stream)} 个任务的数据: {self.output_dir / 'data'}")
        return written

    def cmd_report(self, run_dir: Optional[Union[str, Path]] = None) -> Dict[str, Path]:
        """汇总 run_dir 下所有元测试结果，生成跨方法比较表

        Raises:
            ReportError: 目录为空或结果无法解析
        """
        run_dir = Path(run_dir) if run_dir is not None else self.output_dir
        runs = load_run_summaries(run_dir)
        reporter = ComparisonReporter(self.output_dir / 'comparison')
        return reporter.generate(runs)

COMMANDS = ('train', 'test', 'baseline', 'gradcheck', 'gen-data', 'report')

def run_command(
    command: str,
    config_path: Optional[str] = None,
    checkpoint: Optional[str] = None,
    out: Optional[str] = None,
    seed: Optional[int] = None,
    runs: Optional[str] = None
) -> Any:
    """运行单个命令的便捷函数

    Args:
        command: train | test | baseline | gradcheck | gen-data | report
        config_path: 配置文件路径
        checkpoint: test 使用的检查点文件或目录
        out: 覆盖 experiment.output_dir
        seed: 覆盖 meta.seed
        runs: report 汇总的运行目录

    Raises:
        MetaCLError: 命令未能完成
    """
    if command not in COMMANDS:
        raise MetaCLError(f"未知命令: {command}")
    overrides: Dict[str, Any] = {}
    if seed is not None:
        overrides['meta'] = {'seed': seed}
    if out is not None:
        overrides['experiment'] = {'output_dir': out}

    runner = ExperimentRunner(config_path, overrides)
    try:
        if command == 'train':
            return runner.cmd_train()
        if command == 'baseline':
            return runner.cmd_baseline()
        if command == 'test':
            if checkpoint is None:
                raise CheckpointError("test 命令需要 --checkpoint")
            return runner.cmd_test(checkpoint)
        if command == 'gradcheck':
            return runner.cmd_gradcheck()
        if command == 'gen-data':
            return runner.cmd_gen_data()
        return runner.cmd_report(runs)
    finally:
        runner.close()
