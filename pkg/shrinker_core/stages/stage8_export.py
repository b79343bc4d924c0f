"""
Stage 8: Export
JSON run reports, CSV sweep summaries, Markdown/HTML run summaries and
OBJ/PLY surface meshes
"""
import json
import math
import os
from typing import Any, Dict, List, Optional, Sequence

import markdown
import numpy as np
import pandas as pd
from jinja2 import Template

from utils.errors import MeshIOError
from utils.meshio import write_obj, write_ply

FLOAT_DIGITS = 12

SUMMARY_TEMPLATE = '''# {{ title }}

- Run: `{{ run_id }}`
- Command: `{{ command }}`
- Status: **{{ status }}**

## Parameters

| Key | Value |
|-----|-------|
{% for key, value in parameters %}| {{ key }} | {{ value }} |
{% endfor %}
## Results

| Quantity | Value |
|----------|-------|
{% for key, value in results %}| {{ key }} | {{ value }} |
{% endfor %}
{% if failures %}
## Failures

{% for item in failures %}- {{ item }}
{% endfor %}{% endif %}
{% if files %}
## Files

{% for path in files %}- `{{ path }}`
{% endfor %}{% endif %}
'''


def plain_data(value: Any) -> Any:
    """JSON-ready copy with numpy types converted and floats at fixed precision"""
    if isinstance(value, dict):
        return {str(key): plain_data(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [plain_data(item) for item in value]
    if isinstance(value, np.ndarray):
        return plain_data(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if not math.isfinite(value):
            return str(value)
        return float(f"{value:.{FLOAT_DIGITS}g}")
    return value


def write_json_report(path: str, data: Dict[str, Any]) -> str:
    """Key-sorted JSON with fixed float precision and no timestamps"""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(plain_data(data), f, sort_keys=True, indent=2)
        f.write('\n')
    return path


def spectral_table(reports: List[Dict[str, Any]]) -> pd.DataFrame:
    """One row per spectral run"""
    rows = []
    for report in reports:
        values = report['eigenvalues']
        rows.append({
            'phi0': report['phi0'],
            'symmetry_class': report['class'],
            'refinement': report['refinement'],
            'lambda1': values[0],
            'lambda2': values[1] if len(values) > 1 else float('nan'),
            'kernel_gap': report.get('kernel_gap', float('nan')),
            'in_reference_window': report['in_reference_window'],
        })
    return pd.DataFrame(rows).sort_values('phi0', ascending=False, kind='stable').reset_index(drop=True)


def write_csv_summary(path: str, reports: List[Dict[str, Any]]) -> str:
    """CSV summary of a spectral sweep"""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    spectral_table(reports).to_csv(path, index=False, float_format=f'%.{FLOAT_DIGITS}g')
    return path


def _flatten(data: Dict[str, Any], prefix: str = '') -> List[tuple]:
    rows = []
    for key in sorted(data):
        value = data[key]
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            rows.extend(_flatten(value, f"{name}."))
        elif isinstance(value, (list, tuple, np.ndarray)):
            if len(value) <= 6 and all(not isinstance(v, (dict, list)) for v in value):
                rows.append((name, ', '.join(str(plain_data(v)) for v in value)))
        else:
            rows.append((name, plain_data(value)))
    return rows


def render_summary(
    title: str,
    run_id: str,
    command: str,
    config: Dict[str, Any],
    report: Dict[str, Any],
    files: Optional[Sequence[str]] = None
) -> str:
    """Markdown summary of one run"""
    failures = list(report.get('failed', []))
    if report.get('error'):
        failures.append(report['error'])
    status = 'failed' if failures or report.get('success') is False else 'passed'
    return Template(SUMMARY_TEMPLATE).render(
        title=title, run_id=run_id, command=command, status=status,
        parameters=_flatten(config), results=_flatten(report),
        failures=failures, files=list(files or []),
    )


def write_summary(path: str, text: str) -> List[str]:
    """Write the Markdown summary and its HTML rendering next to it"""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        f.write(text)
    html_path = os.path.splitext(path)[0] + '.html'
    with open(html_path, 'w', encoding='utf-8') as f:
        f.write(markdown.markdown(text, extensions=['tables']))
    return [path, html_path]


def export_mesh(
    basename: str,
    vertices: np.ndarray,
    faces: np.ndarray,
    formats: Sequence[str],
    scalars: Optional[Dict[str, np.ndarray]] = None,
    comments: Optional[List[str]] = None
) -> List[str]:
    """
    Write a surface in every requested format

    Args:
        basename: Output path without extension
        vertices: (n, 3) array
        faces: (m, 3) array
        formats: Subset of ('obj', 'ply')
        scalars: Per-vertex fields written to '<basename>.fields.json'
        comments: OBJ header lines

    Returns:
        Written paths
    """
    written = []
    for fmt in formats:
        if fmt == 'obj':
            written.append(write_obj(f"{basename}.obj", vertices, faces, comments))
        elif fmt == 'ply':
            written.append(write_ply(f"{basename}.ply", vertices, faces))
        else:
            raise MeshIOError(f"Unsupported mesh format '{fmt}'")
    if scalars:
        path = f"{basename}.fields.json"
        for name, values in scalars.items():
            if len(values) != len(vertices):
                raise MeshIOError(f"Field '{name}' has {len(values)} values for {len(vertices)} vertices")
        written.append(write_json_report(path, {name: np.asarray(v) for name, v in scalars.items()}))
    return written


def run(
    run_id: str,
    command: str,
    config: Dict[str, Any],
    report: Dict[str, Any],
    output_dir: str,
    formats: Sequence[str] = ('obj', 'ply'),
    surface: Optional[Dict[str, np.ndarray]] = None,
    sweep: Optional[List[Dict[str, Any]]] = None
) -> Dict[str, Any]:
    """
    Execute Stage 8: write every artifact of a run

    Args:
        run_id: Registry id; used as the file stem
        command: CLI command that produced the report
        config: Run configuration
        report: JSON-ready report
        output_dir: Directory for the files
        formats: Mesh formats
        surface: Optional {'vertices', 'faces', and per-vertex fields}
        sweep: Optional spectral reports for the CSV summary

    Returns:
        Stage output dictionary with the written files
    """
    try:
        stem = os.path.join(output_dir, f"{command}-{run_id[:8]}")
        files = [write_json_report(f"{stem}.json", {'command': command, 'config': config, 'report': report})]

        if surface is not None:
            fields = {key: value for key, value in surface.items() if key not in ('vertices', 'faces')}
            files.extend(export_mesh(
                stem, surface['vertices'], surface['faces'], formats, fields or None,
                comments=[f"{command} run {run_id}"],
            ))

        if sweep:
            files.append(write_csv_summary(f"{stem}.csv", sweep))

        text = render_summary(f"{command} run", run_id, command, config, report, files)
        files.extend(write_summary(f"{stem}.md", text))

        for path in files:
            print(f"  ✓ {path}")
        return {'success': True, 'files': files}

    except Exception as e:
        print(f"  ✗ Export failed: {e}")
        return {'success': False, 'error': str(e)}
