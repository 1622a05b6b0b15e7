import dataclasses
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional

import yaml

from ..models.network import EncoderSpec
from ..utils.exceptions import ConfigError
from ..utils.helpers import merge_dicts

class GradMode(str, Enum):
    FIRST_ORDER = 'first_order'
    EXACT_FD = 'exact_fd'

class InnerMode(str, Enum):
    BATCHED = 'batched'
    PER_SAMPLE = 'per_sample'

class Method(str, Enum):
    MAML_REP = 'maml_rep'
    OML = 'oml'
    SEQUENTIAL = 'sequential'

@dataclass
class MetaConfig:
    """元训练/元测试超参数"""
    inner_lr: float = 5e-3
    outer_lr: float = 5e-5
    outer_lr_min: float = 0.0
    finetune_lr: float = 5e-3
    finetune_theta_lr: Optional[float] = None
    inner_steps_train: int = 5
    inner_steps_test: int = 7
    batch_size: int = 16
    support_size: int = 128
    query_size: int = 112
    train_size: int = 100
    meta_epochs: int = 20
    baseline_epochs: Optional[int] = None
    grad_mode: str = GradMode.FIRST_ORDER.value
    fd_epsilon: float = 1e-5
    fd_max_coordinates: int = 5000
    seed: int = 0
    inner_optimizer: str = 'sgd'
    inner_mode: str = InnerMode.BATCHED.value
    trajectory_len: int = 16
    shuffle_tasks: bool = False
    check_freeze: bool = True
    checkpoint_every: int = 5

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        """检查取值范围

        Raises:
            ConfigError: 任一取值非法
        """
        for name in ('inner_steps_train', 'inner_steps_test', 'meta_epochs'):
            if getattr(self, name) < 0:
                raise ConfigError(f"meta.{name} 不能为负: {getattr(self, name)}")
        for name in ('batch_size', 'support_size', 'query_size', 'train_size',
                     'fd_max_coordinates', 'trajectory_len', 'checkpoint_every'):
            if getattr(self, name) < 1:
                raise ConfigError(f"meta.{name} 必须为正: {getattr(self, name)}")
        for name in ('inner_lr', 'finetune_lr', 'fd_epsilon'):
            if not getattr(self, name) > 0:
                raise ConfigError(f"meta.{name} 必须为正: {getattr(self, name)}")
        if self.finetune_theta_lr is not None and not self.finetune_theta_lr > 0:
            raise ConfigError(f"meta.finetune_theta_lr 必须为正: {self.finetune_theta_lr}")
        if self.baseline_epochs is not None and self.baseline_epochs < 0:
            raise ConfigError(f"meta.baseline_epochs 不能为负: {self.baseline_epochs}")
        if self.outer_lr < 0 or self.outer_lr_min < 0:
            raise ConfigError("meta.outer_lr 与 meta.outer_lr_min 不能为负")
        if self.inner_optimizer not in ('sgd', 'adam'):
            raise ConfigError(f"meta.inner_optimizer 必须是 sgd 或 adam: {self.inner_optimizer}")
        try:
            GradMode(self.grad_mode)
            InnerMode(self.inner_mode)
        except ValueError as e:
            raise ConfigError(f"meta: {e}")

    def theta_finetune_lr(self) -> float:
        """元测试与顺序基线中 θ 的学习率"""
        return self.finetune_lr if self.finetune_theta_lr is None else self.finetune_theta_lr

    def baseline_passes(self) -> int:
        return self.meta_epochs if self.baseline_epochs is None else self.baseline_epochs

    def replace(self, **changes) -> 'MetaConfig':
        return dataclasses.replace(self, **changes)

@dataclass
class ModelConfig:
    vocab_size: int = 4096
    embed_dim: int = 64
    hidden_dims: List[int] = field(default_factory=lambda: [128, 64])
    max_len: int = 64
    dropout_rate: float = 0.1
    head_hidden_dim: int = 0

    def encoder_spec(self) -> EncoderSpec:
        return EncoderSpec(
            vocab_size=self.vocab_size,
            embed_dim=self.embed_dim,
            hidden_dims=tuple(self.hidden_dims),
            max_len=self.max_len,
            dropout_rate=self.dropout_rate
        )

@dataclass
class SyntheticConfig:
    n_tasks: int = 8
    train_tasks: int = 4
    samples_per_task: int = 400
    vocab: int = 2000
    kinds: List[str] = field(default_factory=lambda: ['accuracy'])
    noise_rate: float = 0.0
    secret_size: int = 4
    min_len: int = 8
    max_len: int = 24
    disjoint_filler: bool = False
    shared_targets: bool = False

@dataclass
class DatasetConfig:
    id: str
    path: str
    metric: str
    format: str = 'jsonl'
    phase: str = 'meta_test'
    suite: str = 'default'
    num_classes: int = 2
    label_map: Optional[Dict[str, int]] = None
    text_field: str = 'text'
    pair_field: Optional[str] = 'text_pair'
    label_field: str = 'label'
    columns: Optional[Dict[str, Optional[int]]] = None
    has_header: bool = True

@dataclass
class ExperimentSection:
    method: str = Method.MAML_REP.value
    output_dir: str = 'runs/default'
    report_formats: List[str] = field(default_factory=lambda: ['csv', 'markdown'])
    log_level: str = 'INFO'

REPORT_FORMATS = ('csv', 'markdown', 'html')
SECTIONS = ('meta', 'model', 'data', 'experiment')

def _type_ok(value: Any, annotation: Any) -> bool:
    text = str(annotation)
    if value is None:
        return 'Optional' in text
    if annotation in (int, 'int'):
        return isinstance(value, int) and not isinstance(value, bool)
    if annotation in (float, 'float'):
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if annotation in (bool, 'bool'):
        return isinstance(value, bool)
    if annotation in (str, 'str'):
        return isinstance(value, str)
    if 'List' in text:
        return isinstance(value, list)
    if 'Dict' in text:
        return isinstance(value, dict)
    if 'Optional[float]' in text:
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if 'Optional[int]' in text:
        return isinstance(value, int) and not isinstance(value, bool)
    if 'Optional[str]' in text:
        return isinstance(value, str)
    return True

def _is_float(annotation: Any) -> bool:
    return annotation in (float, 'float') or 'Optional[float]' in str(annotation)

def build_section(cls, values: Optional[Dict[str, Any]], section: str):
    """按 dataclass 字段校验并构造配置节

    Raises:
        ConfigError: 未知键、类型错误或缺少必填键
    """
    values = values or {}
    if not isinstance(values, dict):
        raise ConfigError(f"配置节 {section} 必须是映射")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - set(fields))
    if unknown:
        raise ConfigError(f"配置节 {section} 含未知键: {unknown}")
    for name, value in values.items():
        if not _type_ok(value, fields[name].type):
            raise ConfigError(f"{section}.{name} 类型错误: {value!r}")
    missing = [
        name for name, f in fields.items()
        if name not in values and f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING
    ]
    if missing:
        raise ConfigError(f"配置节 {section} 缺少必填键: {missing}")
    kwargs = {k: (float(v) if v is not None and _is_float(fields[k].type) else v) for k, v in values.items()}
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"配置节 {section} 非法: {e}")

COLUMN_KEYS = ('text', 'label', 'pair')

def _validate_columns(d: DatasetConfig) -> None:
    """columns 只能含 text/label/pair；text 与 label 必填且为非负整数，pair 可为 null"""
    unknown = sorted(set(d.columns) - set(COLUMN_KEYS))
    if unknown:
        raise ConfigError(f"数据集 {d.id}: columns 含未知键 {unknown}，可选 {list(COLUMN_KEYS)}")
    for key in COLUMN_KEYS:
        value = d.columns.get(key)
        if value is None and key == 'pair':
            continue
        if value is None:
            raise ConfigError(f"数据集 {d.id}: columns 缺少 {key}")
        if not isinstance(value, int) or isinstance(value, bool) or value < 0:
            raise ConfigError(f"数据集 {d.id}: columns.{key} 必须是非负整数: {value!r}")

class ExperimentConfig:
    """实验配置：YAML 文件 + 内置默认值 + 命令行覆盖"""

    def __init__(self, config_path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None,
                 raw: Optional[Dict[str, Any]] = None):
        self.config_path = config_path
        loaded = self._load_yaml(config_path) if config_path else {}
        self.raw = merge_dicts(merge_dicts(loaded, raw or {}), overrides or {})
        self._validate()

    @staticmethod
    def _load_yaml(file_path: str) -> Dict[str, Any]:
        """加载YAML配置文件

        Args:
            file_path: 配置文件路径

        Returns:
            配置字典
        """
        path = Path(file_path)
        if not path.is_file():
            raise ConfigError(f"配置文件不存在: {file_path}")
        try:
            with open(path, 'r', encoding='utf-8') as f:
                content = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise ConfigError(f"配置文件解析失败: {file_path}: {e}")
        if content is None:
            return {}
        if not isinstance(content, dict):
            raise ConfigError(f"配置文件顶层必须是映射: {file_path}")
        return content

    def _validate(self) -> None:
        unknown = sorted(set(self.raw) - set(SECTIONS))
        if unknown:
            raise ConfigError(f"未知的配置节: {unknown}")

        self.experiment = build_section(ExperimentSection, self.raw.get('experiment'), 'experiment')
        try:
            method = Method(self.experiment.method)
        except ValueError:
            raise ConfigError(f"experiment.method 必须是 {[m.value for m in Method]}: {self.experiment.method}")
        bad_formats = sorted(set(self.experiment.report_formats) - set(REPORT_FORMATS))
        if bad_formats:
            raise ConfigError(f"experiment.report_formats 含未知格式: {bad_formats}")

        meta_values = dict(self.raw.get('meta') or {})
        if method is Method.OML:
            if meta_values.get('inner_mode', InnerMode.PER_SAMPLE.value) != InnerMode.PER_SAMPLE.value:
                raise ConfigError("method=oml 要求 meta.inner_mode=per_sample")
            meta_values['inner_mode'] = InnerMode.PER_SAMPLE.value
        self.meta = build_section(MetaConfig, meta_values, 'meta')
        self.model = build_section(ModelConfig, self.raw.get('model'), 'model')
        self.encoder_spec = self.model.encoder_spec()
        self._validate_data(self.raw.get('data') or {})

    def _validate_data(self, data: Dict[str, Any]) -> None:
        if not isinstance(data, dict):
            raise ConfigError("配置节 data 必须是映射")
        unknown = sorted(set(data) - {'source', 'synthetic', 'datasets'})
        if unknown:
            raise ConfigError(f"配置节 data 含未知键: {unknown}")
        self.source = data.get('source', 'synthetic')
        if self.source not in ('synthetic', 'files'):
            raise ConfigError(f"data.source 必须是 synthetic 或 files: {self.source}")
        self.synthetic = build_section(SyntheticConfig, data.get('synthetic'), 'data.synthetic')
        datasets = data.get('datasets') or []
        if not isinstance(datasets, list):
            raise ConfigError("data.datasets 必须是列表")
        self.datasets = [build_section(DatasetConfig, d, f'data.datasets[{i}]') for i, d in enumerate(datasets)]
        for d in self.datasets:
            if d.format not in ('jsonl', 'tsv'):
                raise ConfigError(f"数据集 {d.id}: format 必须是 jsonl 或 tsv")
            if d.phase not in ('meta_train', 'meta_test'):
                raise ConfigError(f"数据集 {d.id}: phase 必须是 meta_train 或 meta_test")
            if d.format == 'tsv' and not d.columns:
                raise ConfigError(f"数据集 {d.id}: tsv 格式需要 columns")
            if d.columns is not None:
                _validate_columns(d)
        if self.source == 'files' and not self.datasets:
            raise ConfigError("data.source=files 时 data.datasets 不能为空")

    @property
    def method(self) -> Method:
        return Method(self.experiment.method)

    @property
    def output_dir(self) -> Path:
        return Path(self.experiment.output_dir)

    @property
    def report_formats(self) -> List[str]:
        return list(self.experiment.report_formats)

    @property
    def log_level(self) -> str:
        return self.experiment.log_level

    @property
    def seed(self) -> int:
        return self.meta.seed

    def snapshot(self) -> Dict[str, Any]:
        """可序列化的完整配置快照"""
        return {
            'meta': dataclasses.asdict(self.meta),
            'model': dataclasses.asdict(self.model),
            'data': {
                'source': self.source,
                'synthetic': dataclasses.asdict(self.synthetic),
                'datasets': [dataclasses.asdict(d) for d in self.datasets],
            },
            'experiment': dataclasses.asdict(self.experiment),
        }
