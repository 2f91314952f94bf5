"""Simulation and ergodicity analysis of feedback loops over stochastic agent populations."""

from .agents import AffineIFSAgent, BinaryFlipAgent, SigmoidBernoulliAgent
from .control import (
    LinearController,
    MemorylessGainController,
    ProbabilityMap,
    SwitchedController,
    lag_controller,
    pi_controller,
)
from .errors import ErgoloopError
from .filters import LinearFilter, MovingAverageFilter, embed_moving_average, identity_filter
from .loop import ClosedLoop, InitialCondition, Trace, augmented_matrix, simulate

__version__ = "0.1.0"

__all__ = [
    "AffineIFSAgent",
    "BinaryFlipAgent",
    "SigmoidBernoulliAgent",
    "LinearController",
    "MemorylessGainController",
    "ProbabilityMap",
    "SwitchedController",
    "lag_controller",
    "pi_controller",
    "ErgoloopError",
    "LinearFilter",
    "MovingAverageFilter",
    "embed_moving_average",
    "identity_filter",
    "ClosedLoop",
    "InitialCondition",
    "Trace",
    "augmented_matrix",
    "simulate",
]
