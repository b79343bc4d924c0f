import json

import pytest

import main
from utils import db


def test_missing_handle_count_is_a_usage_error(registry):
    with pytest.raises(SystemExit) as excinfo:
        main.main(['build-core', '--c', '3'])
    assert excinfo.value.code == 2


def test_unknown_symmetry_class_is_a_usage_error(registry):
    with pytest.raises(SystemExit) as excinfo:
        main.main(['spectrum', '--class', 'xz-odd'])
    assert excinfo.value.code == 2


def test_invalid_parameters_exit_with_two(registry, tmp_path):
    assert main.main(['solve', '--tau', '0.5', '--output', str(tmp_path)]) == 2
    assert main.main(['build-core', '--n', '2', '--c', '3', '--output', str(tmp_path)]) == 2
    assert main.main(['spectrum', '--phi0', '0.9', '--output', str(tmp_path)]) == 2
    assert main.main(['verify', '--formats', 'stl', '--output', str(tmp_path)]) == 2
    assert db.list_runs() == []


def test_spectrum_run_is_exported_and_recorded(registry, tmp_path):
    report_path = tmp_path / 'report.json'
    code = main.main([
        'spectrum', '--phi0', '0.3', '--refinement', '3', '--k', '2',
        '--output', str(tmp_path / 'out'), '--json', str(report_path),
    ])
    assert code == 0

    with open(report_path) as f:
        data = json.load(f)
    assert data['command'] == 'spectrum'
    assert data['report']['all_gaps_positive'] is True
    assert data['report']['runs'][0]['eigenvalues'][0] > 2.0

    written = sorted(path.suffix for path in (tmp_path / 'out').iterdir())
    assert written == ['.csv', '.html', '.json', '.md']

    runs = db.list_runs()
    assert len(runs) == 1
    assert runs[0]['status'] == 'completed'
    assert set(db.get_run_outputs(runs[0]['id'])) == {'spectrum', 'export'}
    assert main.main(['runs', '--load', runs[0]['id']]) == 0


def test_broken_verification_exits_with_one(registry, tmp_path):
    code = main.main([
        'verify', '--refinement', '3', '--break', 'minimality', '--output', str(tmp_path),
        '--json', str(tmp_path / 'verify.json'),
    ])
    assert code == 1

    with open(tmp_path / 'verify.json') as f:
        report = json.load(f)['report']
    assert report['failed'] == ['minimality']
    assert db.list_runs(status='failed')[0]['command'] == 'verify'


def test_export_of_unknown_run(registry):
    assert main.main(['export', '--load', 'no-such-run']) == 2


def test_runs_listing(registry):
    assert main.main(['runs']) == 0


def test_registry_location_from_dotenv(tmp_path, monkeypatch):
    path = tmp_path / 'from-env.db'
    (tmp_path / '.env').write_text(f'SHRINKER_DB_PATH="{path}"\n')
    monkeypatch.chdir(tmp_path)
    monkeypatch.setenv('SHRINKER_DB_PATH', 'unset-below')
    monkeypatch.delenv('SHRINKER_DB_PATH')

    assert main.main(['runs']) == 0
    assert path.exists()
    assert db.get_db_path() == str(path)
