"""Risk-aware trajectory optimization with MMD-distilled rollouts.

Set ``RISKMMD_DISABLE_NUMBA=1`` before import to run the pure-numpy kernels.
"""

from ._backend import BACKEND
from .kernels import WeightedSampleSet, laplacian_kernel, mmd_squared
from .reduced_set import DistillConfig, ReducedSet, distill
from .vehicle import ControlSequence, FrenetState, NoiseModel, VehicleParams
from .risk import Obstacle, Scene, ground_truth_collision_rate, risk_cvar, risk_mmd
from .optimizer import OptimizerConfig, optimize
from .mpc import compute_metrics, run_episode

__all__ = [
    "BACKEND", "WeightedSampleSet", "laplacian_kernel", "mmd_squared",
    "DistillConfig", "ReducedSet", "distill", "ControlSequence", "FrenetState",
    "NoiseModel", "VehicleParams", "Obstacle", "Scene", "ground_truth_collision_rate",
    "risk_cvar", "risk_mmd", "OptimizerConfig", "optimize", "compute_metrics",
    "run_episode",
]
__version__ = "0.1.0"
