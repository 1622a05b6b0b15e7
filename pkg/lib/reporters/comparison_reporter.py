"""
跨方法比较：汇总多个运行目录的 summary.json，输出 markdown 与 CSV 比较表
"""

import itertools
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
import pandas as pd
from loguru import logger
from scipy.stats import binomtest

from ..utils.exceptions import ReportError
from .forgetting_reporter import make_environment

COMPARISON_TEMPLATE = """\
# {{ title }}
{% for suite in suites %}
## {{ suite.name }}

| Task | Metric |{% for method in suite.methods %} {{ method }} |{% endfor %}
|------|--------|{% for method in suite.methods %}------|{% endfor %}
{% for row in suite.rows -%}
| {{ row.task }} | {{ row.metric }} |{% for method in suite.methods %} {{ row.cells[method] }} |{% endfor %}
{% endfor %}
| Method | Seeds | Mean final | Mean forgetting delta |
|--------|-------|------------|-----------------------|
{% for m in suite.summary -%}
| {{ m.method }} | {{ m.seeds }} | {{ m.mean_final | pct }} | {{ m.mean_forgetting_delta | pct }} |
{% endfor %}
{%- if suite.tests %}
| Comparison | Statistic | Wins | Pairs | p-value |
|------------|-----------|------|-------|---------|
{% for t in suite.tests -%}
| {{ t.method }} vs {{ t.other }} | {{ t.statistic }} | {{ t.wins }} | {{ t.pairs }} | {{ '%.4g' % t.p_value }} |
{% endfor %}
{%- endif %}
{%- endfor %}
"""

@dataclass
class RunSummary:
    path: Path
    method: str
    suite: str
    seed: int
    rows: List[Dict[str, Any]]
    mean_forgetting_delta: Optional[float]

    @property
    def mean_final(self) -> float:
        return float(np.mean([row['final'] for row in self.rows]))

def load_run_summaries(run_dir: Union[str, Path]) -> List[RunSummary]:
    """递归收集 run_dir 下所有 summary.json

    Raises:
        ReportError: 目录不存在或没有任何结果
    """
    run_dir = Path(run_dir)
    if not run_dir.is_dir():
        raise ReportError(f"运行目录不存在: {run_dir}")
    summaries = []
    for path in sorted(run_dir.rglob('summary.json')):
        try:
            data = json.loads(path.read_text(encoding='utf-8'))
            summaries.append(RunSummary(
                path=path,
                method=data['method'],
                suite=data.get('suite', 'default'),
                seed=int(data['seed']),
                rows=data['tasks'],
                mean_forgetting_delta=data['mean_forgetting_delta'],
            ))
        except (json.JSONDecodeError, KeyError, TypeError) as e:
            raise ReportError(f"无法解析结果文件 {path}: {e}")
    if not summaries:
        raise ReportError(f"运行目录中没有任何 summary.json: {run_dir}")
    logger.info(f"收集到 {len(summaries)} 个运行结果: {run_dir}")
    return summaries

def sign_test(wins: int, pairs: int) -> float:
    """单侧符号检验（平局已剔除）；没有有效配对时 p=1"""
    if pairs == 0:
        return 1.0
    return float(binomtest(wins, pairs, 0.5, alternative='greater').pvalue)

def paired_sign_tests(runs: List[RunSummary]) -> List[Dict[str, Any]]:
    """对每对方法，在相同种子上比较平均最终指标（越高越好）与平均遗忘量（越低越好）"""
    by_method: Dict[str, Dict[int, RunSummary]] = {}
    for run in runs:
        by_method.setdefault(run.method, {})[run.seed] = run
    tests = []
    for method, other in itertools.permutations(sorted(by_method), 2):
        seeds = sorted(set(by_method[method]) & set(by_method[other]))
        if not seeds:
            continue
        a = [by_method[method][s] for s in seeds]
        b = [by_method[other][s] for s in seeds]
        diffs = {
            'mean_final': [x.mean_final - y.mean_final for x, y in zip(a, b)],
            'mean_forgetting_delta': [
                (y.mean_forgetting_delta or 0.0) - (x.mean_forgetting_delta or 0.0) for x, y in zip(a, b)
            ],
        }
        for statistic, values in diffs.items():
            wins = sum(1 for v in values if v > 0)
            pairs = sum(1 for v in values if v != 0)
            tests.append({
                'method': method,
                'other': other,
                'statistic': statistic,
                'wins': wins,
                'pairs': pairs,
                'p_value': sign_test(wins, pairs),
            })
    return tests

class ComparisonReporter:
    def __init__(self, report_path: Union[str, Path], title: str = "Method Comparison"):
        self.report_path = Path(report_path)
        self.report_path.mkdir(parents=True, exist_ok=True)
        self.title = title
        self.env = make_environment()

    @staticmethod
    def comparison_frame(runs: List[RunSummary]) -> pd.DataFrame:
        """长表：suite, method, task, metric 上对种子取平均"""
        records = [
            {'suite': run.suite, 'method': run.method, 'seed': run.seed, **row}
            for run in runs for row in run.rows
        ]
        frame = pd.DataFrame(records)
        grouped = frame.groupby(['suite', 'method', 'task', 'metric'], sort=False)
        table = grouped[['immediate', 'final', 'delta']].mean().reset_index()
        table.insert(2, 'seeds', grouped['seed'].nunique().values)
        return table

    @staticmethod
    def method_frame(runs: List[RunSummary]) -> pd.DataFrame:
        records = [
            {
                'suite': run.suite,
                'method': run.method,
                'seed': run.seed,
                'mean_final': run.mean_final,
                'mean_forgetting_delta': (np.nan if run.mean_forgetting_delta is None
                                          else run.mean_forgetting_delta),
            }
            for run in runs
        ]
        frame = pd.DataFrame(records)
        grouped = frame.groupby(['suite', 'method'], sort=True)
        table = grouped[['mean_final', 'mean_forgetting_delta']].mean().reset_index()
        table.insert(2, 'seeds', grouped['seed'].nunique().values)
        return table

    def _suite_context(self, suite: str, runs: List[RunSummary], table: pd.DataFrame,
                       methods_table: pd.DataFrame) -> Dict[str, Any]:
        methods = sorted({run.method for run in runs})
        rows: Dict[str, Dict[str, Any]] = {}
        for record in table[table['suite'] == suite].to_dict('records'):
            row = rows.setdefault(record['task'], {'task': record['task'], 'metric': record['metric'], 'cells': {}})
            row['cells'][record['method']] = f"{record['immediate'] * 100:.2f}/{record['final'] * 100:.2f}"
        for row in rows.values():
            for method in methods:
                row['cells'].setdefault(method, '-')
        summary = []
        for record in methods_table[methods_table['suite'] == suite].to_dict('records'):
            delta = record['mean_forgetting_delta']
            summary.append({**record, 'mean_forgetting_delta': None if pd.isna(delta) else delta})
        return {
            'name': suite,
            'methods': methods,
            'rows': list(rows.values()),
            'summary': summary,
            'tests': paired_sign_tests(runs),
        }

    def generate(self, runs: List[RunSummary]) -> Dict[str, Path]:
        """写出 comparison.csv、methods.csv、significance.csv 与 comparison.md"""
        if not runs:
            raise ReportError("没有可比较的运行结果")
        table = self.comparison_frame(runs)
        methods_table = self.method_frame(runs)
        suites = sorted({run.suite for run in runs})
        contexts = [
            self._suite_context(suite, [r for r in runs if r.suite == suite], table, methods_table)
            for suite in suites
        ]
        tests = pd.DataFrame(
            [{'suite': c['name'], **t} for c in contexts for t in c['tests']],
            columns=['suite', 'method', 'other', 'statistic', 'wins', 'pairs', 'p_value']
        )

        written = {
            'comparison': self.report_path / 'comparison.csv',
            'methods': self.report_path / 'methods.csv',
            'significance': self.report_path / 'significance.csv',
            'markdown': self.report_path / 'comparison.md',
        }
        table.to_csv(written['comparison'], index=False, lineterminator='\n')
        methods_table.to_csv(written['methods'], index=False, lineterminator='\n')
        tests.to_csv(written['significance'], index=False, lineterminator='\n')
        text = self.env.from_string(COMPARISON_TEMPLATE).render(title=self.title, suites=contexts)
        written['markdown'].write_text(text, encoding='utf-8')
        logger.info(f"比较报告已生成: {self.report_path}")
        return written
