import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from routelab.graph import build_network

DATA_DIR = Path(__file__).parent / "data"


@pytest.fixture
def triangle():
    caps = {(0, 1): 1.0, (1, 2): 1.0, (0, 2): 1.0}
    return build_network(3, list(caps), caps)


@pytest.fixture
def two_path():
    """0->2 direct plus 0->1->2; direct weight-2 equivalent paths when weighted."""
    caps = {(0, 1): 1.0, (1, 2): 1.0, (0, 2): 1.0}
    return build_network(3, list(caps), caps)


@pytest.fixture
def ring5():
    """5-cycle with two chords, bidirected, unit capacities."""
    und = [(0, 1), (1, 2), (2, 3), (3, 4), (4, 0), (0, 2), (1, 3)]
    caps = {}
    for u, v in und:
        caps[(u, v)] = 1.0
        caps[(v, u)] = 1.0
    return build_network(5, list(caps), caps)


@pytest.fixture
def abilene_path():
    return DATA_DIR / "abilene.graphml"


@pytest.fixture
def single_flow_02():
    dm = np.zeros((3, 3))
    dm[0, 2] = 1.0
    return dm
