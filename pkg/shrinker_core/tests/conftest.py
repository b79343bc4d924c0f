import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from stages.stage1_scherk import puncture_radius  # noqa: E402
from stages.stage3_discretize import build_closed_mesh, build_mesh  # noqa: E402
from utils import db  # noqa: E402
from utils.config import load_defaults  # noqa: E402


@pytest.fixture(scope='session')
def coarse_mesh():
    """phi0 = 0.3 at refinement 3"""
    return build_mesh(0.3, 3)


@pytest.fixture(scope='session')
def fine_mesh():
    return build_mesh(0.3, 4)


@pytest.fixture(scope='session')
def core_mesh():
    """phi0 = arccos(tanh 3), the truncation used for cores"""
    return build_mesh(puncture_radius(3.0), 3)


@pytest.fixture(scope='session')
def core_mesh_fine():
    return build_mesh(puncture_radius(3.0), 4)


@pytest.fixture(scope='session')
def closed_mesh():
    return build_closed_mesh(4)


@pytest.fixture
def defaults():
    config = load_defaults()
    config['refinement'] = 3
    return config


@pytest.fixture
def registry(tmp_path, monkeypatch):
    """Run registry in a temporary directory"""
    path = tmp_path / 'runs.db'
    monkeypatch.setenv('SHRINKER_DB_PATH', str(path))
    db.init_database()
    return path
