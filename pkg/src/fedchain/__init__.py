"""Simulated federated learning coordinated by a gas-metered smart contract."""
from .cas import Cid, ContentStore
from .config import ExperimentConfig
from .ledger import GasSchedule, Ledger
from .protocol import RunArtifacts, Simulation, run_experiment

__version__ = "0.1.0"

__all__ = [
    "Cid", "ContentStore", "ExperimentConfig", "GasSchedule", "Ledger",
    "RunArtifacts", "Simulation", "run_experiment",
]
