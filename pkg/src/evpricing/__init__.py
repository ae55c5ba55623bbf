"""Dynamic EV-charging pricing: logit/queueing follower model and a
sensitivity-guided cross-entropy leader, run over a rolling horizon."""

from .kernels import BACKEND
from .scenario import Scenario, load_scenario, bundled_scenario_path

__all__ = ["BACKEND", "Scenario", "load_scenario", "bundled_scenario_path"]
__version__ = "0.1.0"
