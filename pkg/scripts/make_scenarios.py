"""Regenerate the bundled scenario files under src/evpricing/data/.

Both scenarios are synthetic: station layouts and demand curves are drawn
with a fixed seed, shaped as a suburban network with a daytime peak
(08:00-17:00) and a campus demand hotspot.
"""

import json
from pathlib import Path

import numpy as np

DATA = Path(__file__).resolve().parents[1] / "src" / "evpricing" / "data"

# mean service minutes at each level for a typical 0.35 -> target session
L3_RATE = round(60.0 / 42.0, 4)
L2_RATE = round(60.0 / 146.0, 4)


def hourly_profile(peak: int, offpeak: int, shoulder: int) -> list[int]:
    counts = []
    for h in range(24):
        if 8 <= h <= 17:
            counts.append(peak)
        elif h in (6, 7, 18, 19):
            counts.append(shoulder)
        else:
            counts.append(offpeak)
    return counts


def station(i, level, poles, extra, power, loc):
    return {
        "id": i,
        "level": level,
        "poles": poles,
        "capacity": poles + extra,
        "service_rate": L3_RATE if level == "L3" else L2_RATE,
        "power": power,
        "location": [round(loc[0], 3), round(loc[1], 3)],
    }


def desk() -> dict:
    layout = [
        ("L3", 4, 2, 50.0, (5.0, 5.5)),   # campus station, next to the hotspot
        ("L3", 2, 2, 50.0, (6.5, 4.0)),
        ("L3", 3, 3, 75.0, (2.0, 8.0)),
        ("L3", 2, 2, 50.0, (8.5, 8.5)),
        ("L3", 3, 2, 50.0, (9.0, 2.0)),
        ("L3", 2, 3, 75.0, (2.5, 2.5)),
        ("L2", 4, 2, 20.0, (4.0, 4.0)),
        ("L2", 3, 2, 20.0, (7.0, 6.5)),
    ]
    counts = hourly_profile(peak=30, offpeak=6, shoulder=14)
    return {
        "name": "desk",
        "horizon_hours": 24,
        "seed": 20240601,
        "stations": [station(i, *row) for i, row in enumerate(layout)],
        "demand": {
            "hourly_counts": counts,
            "area": [0.0, 0.0, 10.0, 10.0],
            "hotspots": [{"location": [5.0, 5.0], "weight": 0.45}],
            "hotspot_radius_km": 1.2,
        },
        "ev_distributions": {},
        "travel": {"mode": "euclidean", "speed": 30.0},
        "econ": {},
        "choice": {"theta": 0.01, "mode": "mnl_msa", "gumbel_scale": 1.0, "msa_max_iters": 40, "msa_tol": 1e-3},
        "cem": {"population": 200, "elite_ratio": 0.05, "smoothing": 0.7, "tolerance": 1e-3,
                "max_iters": 40, "psa_threshold": 1e-3, "psa_frequency": 5, "seed": 7},
    }


def clayton_synthetic() -> dict:
    rng = np.random.default_rng(3168)
    stations = []
    l2_ids = {3, 4, 12}
    for i in range(22):
        loc = rng.uniform(0.5, 11.5, 2)
        if i in l2_ids:
            stations.append(station(i, "L2", int(rng.integers(2, 5)), 2, 20.0, loc))
        else:
            poles = int(rng.choice([2, 2, 3, 4, 6, 8]))
            stations.append(station(i, "L3", poles, int(rng.integers(1, 4)), float(rng.choice([50.0, 75.0, 150.0])), loc))
    counts = hourly_profile(peak=60, offpeak=12, shoulder=30)
    return {
        "name": "clayton_synthetic",
        "horizon_hours": 24,
        "seed": 3168,
        "stations": stations,
        "demand": {
            "hourly_counts": counts,
            "area": [0.0, 0.0, 12.0, 12.0],
            "hotspots": [
                {"location": [6.0, 6.5], "weight": 0.3},
                {"location": [3.0, 9.0], "weight": 0.15},
            ],
            "hotspot_radius_km": 1.0,
        },
        "ev_distributions": {},
        "travel": {"mode": "euclidean", "speed": 30.0},
        "econ": {},
        "choice": {"theta": 0.005, "mode": "mnl_msa"},
        "cem": {"population": 1000, "elite_ratio": 0.05, "smoothing": 0.7, "tolerance": 1e-3,
                "max_iters": 100, "psa_threshold": 1e-3, "psa_frequency": 5, "seed": 11},
    }


def write(name: str, doc: dict) -> None:
    doc = {k: v for k, v in doc.items() if k != "name"}
    (DATA / f"{name}.json").write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


if __name__ == "__main__":
    DATA.mkdir(parents=True, exist_ok=True)
    write("desk", desk())
    write("clayton_synthetic", clayton_synthetic())
