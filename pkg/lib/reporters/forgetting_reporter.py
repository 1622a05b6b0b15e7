from datetime import datetime
from pathlib import Path
from typing import Dict, List, Sequence, Union

import jinja2
import pandas as pd
from loguru import logger

from ..core.evaluator import EvalReport, ForgettingMatrix, forgetting_delta
from ..utils.exceptions import ReportError
from ..utils.helpers import format_json

REPORT_COLUMNS = ['task', 'metric', 'immediate', 'final', 'delta']

MARKDOWN_TEMPLATE = """\
# {{ title }}

| Task | Metric | Immediate/Final | Delta |
|------|--------|-----------------|-------|
{% for row in rows -%}
| {{ row.task }} | {{ row.metric }} | {{ row.immediate | pct }}/{{ row.final | pct }} | {{ row.delta | pct }} |
{% endfor %}
Mean forgetting delta (excluding the last task): {{ mean | pct }}
"""

HTML_TEMPLATE = """
<!DOCTYPE html>
<html>
<head>
    <title>{{ title }}</title>
    <style>
        body {
            font-family: Arial, sans-serif;
            margin: 20px;
            background-color: #f5f5f5;
        }
        .container {
            max-width: 1200px;
            margin: 0 auto;
            background-color: white;
            padding: 20px;
            border-radius: 5px;
            box-shadow: 0 2px 5px rgba(0,0,0,0.1);
        }
        .header { text-align: center; margin-bottom: 30px; }
        .summary {
            display: grid;
            grid-template-columns: repeat(auto-fit, minmax(200px, 1fr));
            gap: 20px;
            margin-bottom: 30px;
        }
        .summary-item { padding: 15px; border-radius: 5px; text-align: center; }
        .kept { background-color: #e6ffe6; color: #006600; }
        .forgot { background-color: #ffe6e6; color: #cc0000; }
        .total { background-color: #e6f3ff; color: #003366; }
        table { width: 100%; border-collapse: collapse; margin-top: 20px; }
        th, td { padding: 12px; text-align: left; border-bottom: 1px solid #ddd; }
        th { background-color: #f8f9fa; font-weight: bold; }
        tr:hover { background-color: #f5f5f5; }
        .timestamp { text-align: right; color: #666; margin-top: 20px; }
    </style>
</head>
<body>
    <div class="container">
        <div class="header">
            <h1>{{ title }}</h1>
        </div>
        <div class="summary">
            <div class="summary-item total">
                <h3>方法</h3>
                <p>{{ method }}</p>
            </div>
            <div class="summary-item total">
                <h3>任务数</h3>
                <p>{{ rows | length }}</p>
            </div>
            <div class="summary-item {{ 'forgot' if mean is not none and mean > 0 else 'kept' }}">
                <h3>平均遗忘量</h3>
                <p>{{ mean | pct }}</p>
            </div>
            <div class="summary-item total">
                <h3>种子</h3>
                <p>{{ seed }}</p>
            </div>
        </div>
        <table>
            <tr>
                <th>任务</th>
                <th>指标</th>
                <th>即时/最终</th>
                <th>遗忘量</th>
            </tr>
            {% for row in rows %}
            <tr>
                <td>{{ row.task }}</td>
                <td>{{ row.metric }}</td>
                <td>{{ row.immediate | pct }}/{{ row.final | pct }}</td>
                <td class="{{ 'forgot' if row.delta > 0 else 'kept' }}">{{ row.delta | pct }}</td>
            </tr>
            {% endfor %}
        </table>
        <div class="timestamp">
            生成时间: {{ timestamp }}
        </div>
    </div>
</body>
</html>
"""

def pct(value) -> str:
    """指标 ×100，保留两位小数"""
    if value is None:
        return 'n/a'
    return f"{value * 100:.2f}"

def make_environment() -> jinja2.Environment:
    env = jinja2.Environment(keep_trailing_newline=True, undefined=jinja2.StrictUndefined)
    env.filters['pct'] = pct
    return env

def read_report_csv(path: Union[str, Path]) -> ForgettingMatrix:
    """从 CSV 报告无损地还原 ForgettingMatrix

    Raises:
        ReportError: 文件缺失或列不符
    """
    path = Path(path)
    if not path.is_file():
        raise ReportError(f"报告文件不存在: {path}")
    frame = pd.read_csv(path, dtype={'task': str, 'metric': str}, float_precision='round_trip')
    if list(frame.columns) != REPORT_COLUMNS:
        raise ReportError(f"报告列不符: {list(frame.columns)}，应为 {REPORT_COLUMNS}")
    return ForgettingMatrix(
        tasks=frame['task'].tolist(),
        metrics=frame['metric'].tolist(),
        immediate=[float(v) for v in frame['immediate']],
        final=[float(v) for v in frame['final']],
    )

class ForgettingReporter:
    """把一次元测试的结果写成 CSV / markdown / HTML"""

    def __init__(self, report_path: Union[str, Path], title: str = "Forgetting Report"):
        self.report_path = Path(report_path)
        self.report_path.mkdir(parents=True, exist_ok=True)
        self.title = title
        self.env = make_environment()

    def write_csv(self, matrix: ForgettingMatrix, file_name: str = 'report.csv') -> Path:
        frame = pd.DataFrame(matrix.rows(), columns=REPORT_COLUMNS)
        path = self.report_path / file_name
        frame.to_csv(path, index=False, lineterminator='\n')
        return path

    def write_markdown(self, matrix: ForgettingMatrix, file_name: str = 'report.md') -> Path:
        text = self.env.from_string(MARKDOWN_TEMPLATE).render(
            title=self.title,
            rows=matrix.rows(),
            mean=forgetting_delta(matrix).mean,
        )
        path = self.report_path / file_name
        path.write_text(text, encoding='utf-8')
        return path

    def write_html(self, report: EvalReport, file_name: str = 'report.html') -> Path:
        html = self.env.from_string(HTML_TEMPLATE).render(
            title=self.title,
            rows=report.matrix.rows(),
            mean=forgetting_delta(report.matrix).mean,
            method=report.method,
            seed=report.seed,
            timestamp=datetime.now().strftime('%Y-%m-%d %H:%M:%S')
        )
        path = self.report_path / file_name
        path.write_text(html, encoding='utf-8')
        return path

    def write_summary(self, report: EvalReport, file_name: str = 'summary.json') -> Path:
        path = self.report_path / file_name
        path.write_text(format_json(report.to_dict()) + '\n', encoding='utf-8')
        return path

    def generate(self, report: EvalReport, formats: Sequence[str]) -> Dict[str, Path]:
        """按格式列表生成报告，并总是写出 summary.json

        Returns:
            格式名 → 文件路径
        """
        written: Dict[str, Path] = {}
        for fmt in formats:
            if fmt == 'csv':
                written[fmt] = self.write_csv(report.matrix)
            elif fmt == 'markdown':
                written[fmt] = self.write_markdown(report.matrix)
            elif fmt == 'html':
                written[fmt] = self.write_html(report)
            else:
                raise ReportError(f"不支持的报告格式: {fmt}")
        written['summary'] = self.write_summary(report)
        logger.info(f"遗忘报告已生成: {self.report_path}")
        return written

def sweep_frame(reports: List[EvalReport], epochs: List[int]) -> pd.DataFrame:
    """检查点扫描表：每个 (epoch, suite, task) 一行"""
    rows = []
    for epoch, report in zip(epochs, reports):
        for row in report.matrix.rows():
            rows.append({'epoch': epoch, 'suite': report.suite, **row})
    return pd.DataFrame(rows, columns=['epoch', 'suite'] + REPORT_COLUMNS)
