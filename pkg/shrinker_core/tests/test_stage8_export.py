import json
import os

import numpy as np
import pandas as pd
import pytest
import trimesh

from stages import stage8_export
from stages.stage8_export import (
    export_mesh,
    plain_data,
    render_summary,
    spectral_table,
    write_csv_summary,
    write_json_report,
)
from utils.errors import MeshIOError
from utils.meshio import read_obj

TETRA_VERTICES = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
TETRA_FACES = np.array([[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]])


def spectral_reports():
    return [
        {'phi0': 0.15, 'class': 'xz-inv-yz-anti', 'refinement': 4, 'eigenvalues': [2.31, 6.9],
         'kernel_gap': 0.31, 'in_reference_window': True},
        {'phi0': 0.3, 'class': 'xz-inv-yz-anti', 'refinement': 4, 'eigenvalues': [2.62],
         'in_reference_window': False},
    ]


def test_plain_data_converts_numpy_and_specials():
    data = plain_data({
        'a': np.float64(1.0 / 3.0), 'b': np.arange(3), 'c': np.bool_(True),
        'd': float('nan'), 'e': (np.int64(2), 0.1),
    })
    assert data == {'a': 0.333333333333, 'b': [0, 1, 2], 'c': True, 'd': 'nan', 'e': [2, 0.1]}


def test_json_report_is_deterministic(tmp_path):
    first = write_json_report(str(tmp_path / 'a.json'), {'z': 1, 'a': {'y': np.float64(0.5), 'b': [1.0]}})
    second = write_json_report(str(tmp_path / 'b.json'), {'a': {'b': [1.0], 'y': 0.5}, 'z': 1})
    with open(first) as f1, open(second) as f2:
        text = f1.read()
        assert text == f2.read()
    assert list(json.loads(text)) == ['a', 'z']


def test_spectral_table_orders_by_radius():
    table = spectral_table(spectral_reports())
    assert list(table['phi0']) == [0.3, 0.15]
    assert list(table.columns) == [
        'phi0', 'symmetry_class', 'refinement', 'lambda1', 'lambda2', 'kernel_gap', 'in_reference_window',
    ]
    assert np.isnan(table.loc[0, 'lambda2'])
    assert np.isnan(table.loc[0, 'kernel_gap'])


def test_csv_summary(tmp_path):
    path = write_csv_summary(str(tmp_path / 'sweep.csv'), spectral_reports())
    table = pd.read_csv(path)
    assert table.shape == (2, 7)
    assert table['lambda1'].tolist() == [2.62, 2.31]


def test_render_summary():
    text = render_summary(
        'verify run', 'abc123', 'verify', {'c0': 3.0, 'refinement': 4},
        {'passed': False, 'failed': ['minimality'], 'checks': {'minimality': {'max_abs_H': 1e-3}}},
        files=['output/verify-abc123.json'],
    )
    assert text.startswith('# verify run')
    assert '**failed**' in text
    assert '| c0 | 3.0 |' in text
    assert '| checks.minimality.max_abs_H | 0.001 |' in text
    assert '- minimality' in text
    assert '`output/verify-abc123.json`' in text


def test_render_summary_of_a_passing_run():
    text = render_summary('solve run', 'id', 'solve', {}, {'converged': True})
    assert '**passed**' in text
    assert '## Failures' not in text


def test_export_mesh_formats(tmp_path):
    basename = str(tmp_path / 'tetra')
    written = export_mesh(basename, TETRA_VERTICES, TETRA_FACES, ['obj', 'ply'],
                          scalars={'h': np.array([0.0, 0.1, 0.2, 0.3])}, comments=['tetrahedron'])
    assert [os.path.basename(p) for p in written] == ['tetra.obj', 'tetra.ply', 'tetra.fields.json']

    vertices, faces = read_obj(basename + '.obj')
    assert np.array_equal(vertices, TETRA_VERTICES)
    assert np.array_equal(faces, TETRA_FACES)

    ply = trimesh.load(basename + '.ply', process=False)
    assert len(ply.vertices) == 4
    assert len(ply.faces) == 4

    with open(basename + '.fields.json') as f:
        assert json.load(f)['h'] == [0.0, 0.1, 0.2, 0.3]


def test_export_mesh_rejects_bad_input(tmp_path):
    with pytest.raises(MeshIOError):
        export_mesh(str(tmp_path / 'bad'), TETRA_VERTICES, TETRA_FACES, ['stl'])
    with pytest.raises(MeshIOError):
        export_mesh(str(tmp_path / 'bad'), TETRA_VERTICES, TETRA_FACES, ['obj'], scalars={'h': np.zeros(2)})


def test_run_writes_every_artifact(tmp_path):
    result = stage8_export.run(
        'f3c1d2e4-0000-0000-0000-000000000000', 'spectrum', {'refinement': 4}, {'monotone': True},
        str(tmp_path), sweep=spectral_reports(),
    )
    assert result['success']
    names = sorted(os.path.basename(p) for p in result['files'])
    assert names == ['spectrum-f3c1d2e4.csv', 'spectrum-f3c1d2e4.html',
                     'spectrum-f3c1d2e4.json', 'spectrum-f3c1d2e4.md']
    with open(tmp_path / 'spectrum-f3c1d2e4.html') as f:
        assert '<table>' in f.read()


def test_run_with_surface(tmp_path):
    surface = {'vertices': TETRA_VERTICES, 'faces': TETRA_FACES, 'h': np.zeros(4)}
    result = stage8_export.run('0123456789', 'solve', {}, {}, str(tmp_path), formats=['obj'], surface=surface)
    assert result['success']
    assert os.path.exists(tmp_path / 'solve-01234567.obj')
    assert os.path.exists(tmp_path / 'solve-01234567.fields.json')
