import json
from pathlib import Path

import numpy as np
import pytest

from evpricing import bundled_scenario_path, load_scenario
from evpricing.scenario import (
    Level,
    ScenarioError,
    TravelLookupError,
    TravelTimeProvider,
    scenario_from_dict,
    spawn_evs,
    travel_time,
)

from conftest import tiny_doc

SCHEMA = Path(__file__).resolve().parents[1] / "docs" / "scenario.schema.json"


@pytest.mark.parametrize("name", ["desk", "clayton_synthetic"])
def test_bundled_scenarios_validate(name):
    jsonschema = pytest.importorskip("jsonschema")
    doc = json.loads(bundled_scenario_path(name).read_text())
    jsonschema.validate(doc, json.loads(SCHEMA.read_text()))
    s = load_scenario(bundled_scenario_path(name))
    assert s.horizon_hours == 24


def test_synthetic_network_shape():
    s = load_scenario(bundled_scenario_path("clayton_synthetic"))
    levels = [st.level for st in s.stations]
    assert len(levels) == 22 and levels.count(Level.L3) == 19 and levels.count(Level.L2) == 3


def test_desk_scenario_size(desk):
    assert 5 <= desk.n_stations <= 22
    assert sum(desk.demand.hourly_counts) <= 500


def test_stations_sorted_and_prices_expanded():
    doc = tiny_doc(n_stations=3, hours=3)
    doc["stations"][0]["id"], doc["stations"][2]["id"] = 9, 0
    doc["stations"][1]["grid_price"] = [0.1, 0.2, 0.3]
    doc["stations"][1]["price_cap"] = 0.7
    s = scenario_from_dict(doc)
    assert [st.id for st in s.stations] == [0, 1, 9]
    assert s.stations[1].grid_price == (0.1, 0.2, 0.3)
    assert s.stations[1].price_cap == (0.7, 0.7, 0.7)


@pytest.mark.parametrize("mutate,msg", [
    (lambda d: d["stations"][0].update(capacity=1), "capacity"),
    (lambda d: d["stations"][0].update(poles=0), "poles"),
    (lambda d: d["stations"][0].update(level="L9"), "level"),
    (lambda d: d["stations"][0].update(price_cap=0.1, grid_price=0.2), "price_cap"),
    (lambda d: d["stations"][1].update(id=0), "unique"),
    (lambda d: d["stations"][0].update(bogus=1), "bogus"),
    (lambda d: d["econ"].update(omega=1.5), "omega"),
    (lambda d: d["demand"].update(hourly_counts=[1]), "hourly_counts"),
    (lambda d: d.pop("stations"), "stations"),
    (lambda d: d["travel"].update(mode="teleport"), "travel.mode"),
    (lambda d: d.update(cem={"population": 10, "elite_ratio": 0.05}), "elite_ratio"),
    (lambda d: d.update(choice={"mode": "psychic"}), "mode"),
    (lambda d: d["stations"][0].update(grid_price=[0.1]), "grid_price"),
])
def test_validation_errors(mutate, msg):
    doc = tiny_doc()
    mutate(doc)
    with pytest.raises(ScenarioError, match=msg):
        scenario_from_dict(doc)


def test_malformed_json_reports_position(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "horizon_hours": 2,\n  "stations": [,]\n}\n')
    with pytest.raises(ScenarioError, match="line 3"):
        load_scenario(p)


def test_spawn_is_seeded(tiny):
    a = spawn_evs(tiny, 1)
    b = spawn_evs(tiny, 1)
    assert a == b
    assert len(a) == tiny.demand.hourly_counts[1]
    assert a[0].id == tiny.demand.hourly_counts[0]  # ids run on across hours
    assert spawn_evs(tiny, 1, rng_seed=99) != a
    assert spawn_evs(tiny, 0) != spawn_evs(tiny, 1)


def test_spawn_respects_distributions(desk):
    evs = [e for h in range(24) for e in spawn_evs(desk, h)]
    soc = np.array([e.initial_soc for e in evs])
    assert soc.min() >= 0.1 and soc.max() <= 0.6
    assert {e.risk_aversion for e in evs} <= {0.0, 0.05, 0.15}
    assert all(0 <= e.age_years <= 8 for e in evs)
    assert all(0 <= e.location[0] <= 10 and 0 <= e.location[1] <= 10 for e in evs)


def test_hotspot_concentrates_demand(desk):
    evs = [e for h in range(24) for e in spawn_evs(desk, h)]
    near = np.mean([np.hypot(e.location[0] - 5, e.location[1] - 5) < 2.0 for e in evs])
    assert near > 0.3  # uniform alone would put ~0.13 there


def test_spawn_rejects_bad_hour(tiny):
    with pytest.raises(ValueError):
        spawn_evs(tiny, 5)


def test_euclidean_travel(desk):
    evs = spawn_evs(desk, 10)
    for e in evs[:10]:
        for st in desk.stations:
            t = travel_time(desk.travel, e, st)
            assert t >= 0
            assert t == pytest.approx(np.hypot(e.location[0] - st.location[0], e.location[1] - st.location[1]) / 30)


def test_euclidean_symmetric():
    tp = TravelTimeProvider()
    s = scenario_from_dict(tiny_doc()).stations[0]
    from dataclasses import replace
    moved = replace(s, location=(1.0, 2.0))
    assert tp.hours((4.0, 5.0), moved) == tp.hours((1.0, 2.0), s)


def test_matrix_travel():
    doc = tiny_doc()
    doc["travel"] = {"mode": "matrix", "cell_size_km": 5.0, "table": [
        {"station": 0, "cell": 0, "hours": [0.1, 0.2]},
        {"station": 1, "cell": 0, "hours": 0.3},
    ]}
    s = scenario_from_dict(doc)
    assert s.travel.hours((1.0, 1.0), s.stations[0], hour=1) == 0.2
    assert s.travel.hours((1.0, 1.0), s.stations[1], hour=1) == 0.3
    with pytest.raises(TravelLookupError):
        s.travel.hours((7.0, 7.0), s.stations[0])


def test_negative_matrix_entry_rejected():
    doc = tiny_doc()
    doc["travel"] = {"mode": "matrix", "table": [{"station": 0, "cell": 0, "hours": -1}]}
    with pytest.raises(ScenarioError):
        scenario_from_dict(doc)
