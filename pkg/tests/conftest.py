import copy

import pytest

from evpricing import load_scenario, bundled_scenario_path
from evpricing.scenario import scenario_from_dict


def tiny_doc(n_stations=2, hours=2, counts=None, theta=0.01):
    """A small symmetric scenario document; callers mutate the copy they get."""
    stations = []
    for i in range(n_stations):
        stations.append({
            "id": i, "level": "L3", "poles": 2, "capacity": 4, "service_rate": 1.4,
            "power": 50.0, "location": [4.0 + 2.0 * i, 5.0],
        })
    return {
        "horizon_hours": hours,
        "seed": 11,
        "stations": stations,
        "demand": {"hourly_counts": counts or [6] * hours, "area": [0.0, 0.0, 10.0, 10.0]},
        "ev_distributions": {},
        "travel": {"mode": "euclidean", "speed": 30.0},
        "econ": {},
        "choice": {"theta": theta},
    }


@pytest.fixture
def tiny():
    return scenario_from_dict(tiny_doc())


@pytest.fixture
def make_tiny():
    def make(**kw):
        return scenario_from_dict(tiny_doc(**kw))
    return make


@pytest.fixture(scope="session")
def desk():
    return load_scenario(bundled_scenario_path("desk"))


@pytest.fixture
def doc_copy():
    return lambda d: copy.deepcopy(d)
