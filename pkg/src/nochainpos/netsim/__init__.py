"""Network simulation: scenarios, the event engine, the bare Markov loop and the load model."""

from .engine import InvariantViolation, MetricsReport, Simulation, run
from .load import LoadEstimate, load_model
from .markov import MarkovSetup, estimate_absorption_probability, run_markov_mode
from .scenario import ConfigError, Scenario, load_scenario, scenario_from_dict, shipped_scenarios

__all__ = [
    "ConfigError", "InvariantViolation", "LoadEstimate", "MarkovSetup", "MetricsReport",
    "Scenario", "Simulation", "estimate_absorption_probability", "load_model",
    "load_scenario", "run", "run_markov_mode", "scenario_from_dict", "shipped_scenarios",
]
