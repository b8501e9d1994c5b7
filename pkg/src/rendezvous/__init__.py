"""Risk-aware UAS-to-ground-vehicle rendezvous under traffic uncertainty."""

from .config import ConfigError, ScenarioConfig, bundled, load_scenario, scenario_from_dict, set_option
from .mission import MissionResult, ScenarioError, run_convergence_trial, run_mission

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "ScenarioConfig",
    "ScenarioError",
    "MissionResult",
    "bundled",
    "load_scenario",
    "scenario_from_dict",
    "set_option",
    "run_mission",
    "run_convergence_trial",
]
