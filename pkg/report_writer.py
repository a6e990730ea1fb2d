"""
Report Writer
Metrics tables (CSV with a JSON mirror) and SVG charts for WCSS curves and
RMSE comparisons. Output bytes depend only on the inputs
"""

import csv
import hashlib
import json
import logging
import os
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Sequence, Tuple
from xml.sax.saxutils import escape

from errors import ConfigurationError, DataError

logger = logging.getLogger(__name__)

COLUMNS = ['method', 'dataset', 'config_digest', 'metric', 'value', 'provenance']
PROVENANCE_COMPUTED = 'computed'
PROVENANCE_PUBLISHED = 'paper-reported'

PALETTE = ['#3498db', '#e74c3c', '#2ecc71', '#9b59b6', '#f39c12', '#1abc9c', '#34495e', '#e67e22']


@dataclass
class MetricRow:
    method: str
    dataset: str
    config_digest: str
    metric: str
    value: float
    provenance: str = PROVENANCE_COMPUTED

    def __post_init__(self):
        if self.provenance not in (PROVENANCE_COMPUTED, PROVENANCE_PUBLISHED):
            raise ConfigurationError(f"unknown provenance tag {self.provenance!r}")
        self.value = float(self.value)


@dataclass
class MetricsReport:
    """Metric rows plus run metadata (timestamps live only here)"""
    rows: List[MetricRow] = field(default_factory=list)
    metadata: Dict = field(default_factory=dict)

    def add(self, method: str, dataset: str, config_digest: str, metric: str, value: float):
        self.rows.append(MetricRow(method, dataset, config_digest, metric, value))

    def extend_published_rows(self, datasets: Sequence[str] = ()):
        """Append reference rows, optionally only for the named datasets"""
        for row in PUBLISHED_ROWS:
            if not datasets or row.dataset in datasets:
                self.rows.append(MetricRow(**asdict(row)))

    def computed_rows(self) -> List[MetricRow]:
        return [row for row in self.rows if row.provenance == PROVENANCE_COMPUTED]

    def value(self, method: str, dataset: str, metric: str) -> float:
        """Computed value of one (method, dataset, metric) cell"""
        for row in self.computed_rows():
            if (row.method, row.dataset, row.metric) == (method, dataset, metric):
                return row.value
        raise KeyError((method, dataset, metric))


def _published_rows() -> List[MetricRow]:
    table_rmse = {
        'user-cf': (0.963, 1.005, 1.011),
        'item-cf': (0.822, 1.001, 0.934),
        'svd': (1.006, 1.018, 2.024),
        'nmf': (0.845, 0.954, 1.001),
        'reg-nmf': (0.840, 0.937, 0.975),
        'rbm': (0.918, 1.008, 1.104),
        'dmf': (0.821, 0.948, 0.946),
        'nsnmf-relu': (0.816, 0.904, 0.889),
        'nsnmf-softplus': (0.804, 0.896, 0.871),
        'nsnmf-relu-bias': (0.788, 0.887, 0.836),
    }
    table_depth = {
        'nsnmf-relu@2-layers': (0.816, 0.904, 0.889),
        'nsnmf-relu@3-layers': (0.842, 0.938, 0.932),
    }
    rows = []
    for table in (table_rmse, table_depth):
        for method, values in table.items():
            for dataset, value in zip(('filmtrust', 'movielens', 'amusic'), values):
                rows.append(MetricRow(method, dataset, '', 'test_rmse', value, PROVENANCE_PUBLISHED))
    return rows


PUBLISHED_ROWS = _published_rows()


def config_digest(config: Dict) -> str:
    """Short stable digest of a JSON-serializable config"""
    encoded = json.dumps(config, sort_keys=True, separators=(',', ':')).encode('utf-8')
    return hashlib.sha256(encoded).hexdigest()[:12]


def _json_path(path: str) -> str:
    root, _ = os.path.splitext(path)
    return f"{root}.json"


def write_metrics(report: MetricsReport, path: str) -> str:
    """
    Write the report as CSV (header + rows) with a JSON mirror next to it

    Args:
        report: Non-empty report
        path: CSV destination

    Returns:
        Path of the CSV file
    """
    if not report.rows:
        raise ConfigurationError("refusing to write an empty metrics report")
    try:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, 'w', newline='', encoding='utf-8') as f:
            writer = csv.writer(f)
            writer.writerow(COLUMNS)
            for row in report.rows:
                writer.writerow([row.method, row.dataset, row.config_digest, row.metric,
                                 repr(row.value), row.provenance])
        with open(_json_path(path), 'w', encoding='utf-8') as f:
            json.dump({'metadata': report.metadata, 'rows': [asdict(row) for row in report.rows]},
                      f, indent=2, sort_keys=True)
            f.write('\n')
    except OSError as e:
        raise DataError(f"cannot write metrics to {path}: {e}") from e
    logger.info(f"Metrics written to {path} ({len(report.rows)} rows)")
    return path


def read_metrics(path: str) -> MetricsReport:
    """Read a CSV written by write_metrics (metadata from the JSON mirror if present)"""
    try:
        with open(path, 'r', newline='', encoding='utf-8') as f:
            reader = csv.DictReader(f)
            if reader.fieldnames != COLUMNS:
                raise DataError(f"{path}: unexpected metrics header {reader.fieldnames}")
            rows = [MetricRow(r['method'], r['dataset'], r['config_digest'], r['metric'],
                              float(r['value']), r['provenance']) for r in reader]
        metadata = {}
        if os.path.exists(_json_path(path)):
            with open(_json_path(path), 'r', encoding='utf-8') as f:
                metadata = json.load(f).get('metadata', {})
    except OSError as e:
        raise DataError(f"cannot read metrics from {path}: {e}") from e
    return MetricsReport(rows=rows, metadata=metadata)


class _Canvas:
    """Plot area geometry shared by the charts"""
    width = 640
    height = 420
    left = 70
    right = 170
    top = 50
    bottom = 60

    @property
    def plot_width(self) -> float:
        return self.width - self.left - self.right

    @property
    def plot_height(self) -> float:
        return self.height - self.top - self.bottom


def _fmt(value: float) -> str:
    return f"{value:.2f}"


def _svg_open(canvas: _Canvas, title: str) -> List[str]:
    return [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{canvas.width}" '
        f'height="{canvas.height}" viewBox="0 0 {canvas.width} {canvas.height}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<text x="{_fmt(canvas.width / 2)}" y="25" font-family="Arial" font-size="16" '
        f'text-anchor="middle" font-weight="bold">{escape(title)}</text>',
    ]


def _axes(canvas: _Canvas, x_label: str, y_label: str) -> List[str]:
    x0, y0 = canvas.left, canvas.height - canvas.bottom
    return [
        f'<line x1="{x0}" y1="{y0}" x2="{canvas.left + canvas.plot_width}" y2="{y0}" stroke="black"/>',
        f'<line x1="{x0}" y1="{canvas.top}" x2="{x0}" y2="{y0}" stroke="black"/>',
        f'<text x="{_fmt(canvas.left + canvas.plot_width / 2)}" y="{canvas.height - 15}" '
        f'font-family="Arial" font-size="13" text-anchor="middle">{escape(x_label)}</text>',
        f'<text x="18" y="{_fmt(canvas.top + canvas.plot_height / 2)}" font-family="Arial" '
        f'font-size="13" text-anchor="middle" '
        f'transform="rotate(-90 18 {_fmt(canvas.top + canvas.plot_height / 2)})">{escape(y_label)}</text>',
    ]


def _write_svg(lines: List[str], path: str) -> str:
    try:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, 'w', encoding='utf-8', newline='\n') as f:
            f.write('\n'.join(lines) + '\n')
    except OSError as e:
        raise DataError(f"cannot write chart to {path}: {e}") from e
    logger.info(f"Chart saved to {path}")
    return path


def plot_wcss(series: Sequence[Tuple[str, Dict[int, float]]], path: str,
              title: str = 'WCSS vs number of clusters') -> str:
    """
    Line chart of WCSS curves, one polyline per labelled series

    Args:
        series: (label, {k: wcss}) pairs, each with at least two points
        path: SVG destination
        title: Chart title

    Returns:
        Path of the SVG file
    """
    if not series:
        raise ConfigurationError("no WCSS series to plot")
    for label, curve in series:
        if len(curve) < 2:
            raise ConfigurationError(f"series {label!r} needs at least two points")

    canvas = _Canvas()
    ks = sorted({int(k) for _, curve in series for k in curve})
    values = [float(v) for _, curve in series for v in curve.values()]
    k_min, k_max = ks[0], ks[-1]
    y_min, y_max = min(values), max(values)
    if y_max == y_min:
        y_min, y_max = y_min - 0.5, y_max + 0.5
    k_span = (k_max - k_min) or 1

    def x_of(k: float) -> float:
        return canvas.left + (k - k_min) / k_span * canvas.plot_width

    def y_of(v: float) -> float:
        return canvas.top + (y_max - v) / (y_max - y_min) * canvas.plot_height

    lines = _svg_open(canvas, title)
    for tick in range(5):
        value = y_min + (y_max - y_min) * tick / 4
        y = y_of(value)
        lines.append(f'<line x1="{canvas.left}" y1="{_fmt(y)}" x2="{canvas.left + canvas.plot_width}" '
                     f'y2="{_fmt(y)}" stroke="#ddd" stroke-dasharray="4"/>')
        lines.append(f'<text x="{canvas.left - 6}" y="{_fmt(y + 4)}" font-family="Arial" font-size="10" '
                     f'text-anchor="end">{value:.3g}</text>')
    for k in ks:
        lines.append(f'<text x="{_fmt(x_of(k))}" y="{canvas.height - canvas.bottom + 16}" '
                     f'font-family="Arial" font-size="10" text-anchor="middle">{k}</text>')
    lines.extend(_axes(canvas, 'Number of clusters', 'WCSS'))

    for index, (label, curve) in enumerate(series):
        color = PALETTE[index % len(PALETTE)]
        points = ' '.join(f"{_fmt(x_of(k))},{_fmt(y_of(curve[k]))}" for k in sorted(curve))
        lines.append(f'<polyline class="series" points="{points}" fill="none" stroke="{color}" '
                     f'stroke-width="2"><title>{escape(label)}</title></polyline>')
        legend_y = canvas.top + 20 * index
        legend_x = canvas.width - canvas.right + 15
        lines.append(f'<rect x="{legend_x}" y="{legend_y}" width="12" height="12" fill="{color}"/>')
        lines.append(f'<text x="{legend_x + 18}" y="{legend_y + 11}" font-family="Arial" '
                     f'font-size="12">{escape(label)}</text>')

    lines.append('</svg>')
    return _write_svg(lines, path)


def plot_rmse_bars(report: MetricsReport, dataset: str, path: str, metric: str = 'test_rmse') -> str:
    """Bar chart of one metric per method (computed rows only)"""
    rows = [row for row in report.computed_rows() if row.dataset == dataset and row.metric == metric]
    if not rows:
        raise ConfigurationError(f"no computed {metric} rows for dataset {dataset!r}")

    canvas = _Canvas()
    top_value = max(row.value for row in rows) * 1.1 or 1.0
    slot = canvas.plot_width / len(rows)
    lines = _svg_open(canvas, f"Test RMSE on {dataset}")
    lines.extend(_axes(canvas, 'Method', metric.replace('_', ' ').upper()))
    base = canvas.height - canvas.bottom
    for index, row in enumerate(rows):
        height = row.value / top_value * canvas.plot_height
        x = canvas.left + index * slot + slot * 0.15
        lines.append(f'<rect x="{_fmt(x)}" y="{_fmt(base - height)}" width="{_fmt(slot * 0.7)}" '
                     f'height="{_fmt(height)}" fill="{PALETTE[index % len(PALETTE)]}"/>')
        lines.append(f'<text x="{_fmt(x + slot * 0.35)}" y="{_fmt(base - height - 4)}" font-family="Arial" '
                     f'font-size="10" text-anchor="middle">{row.value:.3f}</text>')
        lines.append(f'<text x="{_fmt(x + slot * 0.35)}" y="{base + 14}" font-family="Arial" '
                     f'font-size="9" text-anchor="middle">{escape(row.method)}</text>')
    lines.append('</svg>')
    return _write_svg(lines, path)
