"""cavityflow — measurement backaction on lattice fermions under cavity light detection.

Exact quantum-jump trajectories, stochastic master equations for inefficient
detection and a momentum-space mean-field solver, run as a small pipeline:

  every stage is a prep | exec | post node   →  explicit, testable steps
  stages connect via named action edges      →  the run mode picks the branch
  a shared Store carries the run state       →  typed, observable, snapshotted

Public API
----------
from cavityflow import RunConfig, parse_config, build_model, simulate, run_sme
cavityflow.pipeline.run(cfg) executes a whole configured run.
"""

__version__ = "0.1.0"

from cavityflow.config import RunConfig, load_preset, parse_config
from cavityflow.errors import (
    CapacityError,
    CavityFlowError,
    ConfigError,
    NumericalError,
)
from cavityflow.flow import Flow
from cavityflow.meanfield import MeanFieldSolver, init_fermi_sea, run_meanfield
from cavityflow.model import SimulationModel, build_model
from cavityflow.node import AsyncNode, Node
from cavityflow.sme import run_sme, thinning_mode
from cavityflow.store import Store
from cavityflow.trajectory import run_trajectory, simulate

__all__ = [
    "RunConfig", "parse_config", "load_preset",
    "CavityFlowError", "ConfigError", "CapacityError", "NumericalError",
    "Store", "Node", "AsyncNode", "Flow",
    "SimulationModel", "build_model",
    "simulate", "run_trajectory", "run_sme", "thinning_mode",
    "MeanFieldSolver", "init_fermi_sea", "run_meanfield",
]
