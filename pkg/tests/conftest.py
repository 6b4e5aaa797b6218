import json

import pytest

from robusthedge.models import lattice_family


@pytest.fixture
def binomial():
    # S_0 = 100 moving to 110 or 90.
    return lattice_family(100.0, (1.1, 0.9), 1, {'p': (0.5, 0.5)})


@pytest.fixture
def unit_binomial():
    return lattice_family(1.0, (1.1, 0.9), 1, {'p': (0.5, 0.5)})


@pytest.fixture
def falling_family():
    # Both children below the parent: arbitrage of the first kind.
    return lattice_family(1.0, (0.5, 0.8), 1, {'p': (0.5, 0.5)})


@pytest.fixture
def write_json(tmpdir):
    def _write(name, data):
        path = tmpdir.join(name)
        path.write(json.dumps(data, indent=2))
        return str(path)

    return _write
