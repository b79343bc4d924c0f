import math

import pytest

from stages.stage1_scherk import puncture_radius, truncation_from_radius
from utils.config import get_thread_count, load_config, load_defaults, parse_float_list
from utils.errors import InvalidParameterError
from utils.validation import (
    validate_c0,
    validate_core_params,
    validate_export_formats,
    validate_refinement,
    validate_solve_params,
    validate_tau,
)


def test_defaults():
    config = load_defaults()
    assert config['c0'] == 3.0
    assert config['newton_tol'] == 1e-10
    assert config['jacobian_mode'] == 'chord_at_origin'
    assert parse_float_list(config['eigen_sweep']) == [0.3, 0.15, 0.075]
    assert 'version' not in config


def test_config_precedence(tmp_path):
    path = tmp_path / 'run.yaml'
    path.write_text('c0: 2.5\nrefinement: 3\n')
    config = load_config(str(path), {'refinement': 5, 'seed': None})
    assert config['c0'] == 2.5
    assert config['refinement'] == 5
    assert config['seed'] == load_defaults()['seed']


def test_config_file_errors(tmp_path):
    with pytest.raises(InvalidParameterError):
        load_config(str(tmp_path / 'missing.yaml'))
    unknown = tmp_path / 'unknown.yaml'
    unknown.write_text('shrink_factor: 2\n')
    with pytest.raises(InvalidParameterError):
        load_config(str(unknown))
    nested = tmp_path / 'nested.yaml'
    nested.write_text('c0:\n  value: 3\n')
    with pytest.raises(InvalidParameterError):
        load_config(str(nested))


def test_thread_count(monkeypatch):
    monkeypatch.setenv('SHRINKER_THREADS', '3')
    assert get_thread_count() == 3
    monkeypatch.setenv('SHRINKER_THREADS', 'many')
    with pytest.raises(InvalidParameterError):
        get_thread_count()


def test_parse_float_list():
    assert parse_float_list('0.3, 0.15') == [0.3, 0.15]
    assert parse_float_list(0.2) == [0.2]
    with pytest.raises(InvalidParameterError):
        parse_float_list('0.3,abc')


def test_parameter_validation():
    assert validate_c0(3.0)[0]
    assert not validate_c0(-1.0)[0]
    assert not validate_c0(0.5)[0]
    assert validate_refinement(4)[0]
    assert not validate_refinement(-1)[0]
    assert validate_tau(0.0625, 3.0)[0]
    assert not validate_tau(1.0 / 6.0, 3.0)[0]
    assert validate_export_formats('obj, PLY')[0]
    assert not validate_export_formats('stl')[0]
    assert not validate_export_formats('')[0]


def test_c0_bound_follows_the_puncture_radius():
    edge = truncation_from_radius(math.pi / 4)
    assert validate_c0(edge * 1.001)[0]
    valid, issues = validate_c0(edge * 0.999)
    assert not valid
    assert f"phi0={puncture_radius(edge * 0.999):.4f}" in issues[0]


def test_command_validation():
    config = load_defaults()
    config.update({'tau': 0.0625})
    assert validate_solve_params(config) == (True, [])
    config.update({'tau': 0.5, 'jacobian_mode': 'secant'})
    valid, issues = validate_solve_params(config)
    assert not valid
    assert len(issues) == 2

    core = load_defaults()
    core['n'] = 8
    assert validate_core_params(core)[0]
    core['n'] = 3
    assert not validate_core_params(core)[0]
