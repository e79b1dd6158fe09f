"""Deterministic discrete-event simulator for semi-asynchronous federated learning."""

from .aggregator import AggregationPolicy, SeaflHyper
from .config import RunConfig
from .engine import MetricsLog, Simulation, run
from .experiment import run_sweep, time_to_accuracy

__all__ = ["AggregationPolicy", "MetricsLog", "RunConfig", "SeaflHyper", "Simulation", "run",
           "run_sweep", "time_to_accuracy"]
__version__ = "0.1.0"
