"""Gaussian-process-learned dynamics inside a fast adaptive rate controller.

A deterministic simulation toolkit: per-channel GP regression with
computable uniform error bounds, a sampled-data adaptive controller with a
learning filter, the quadrotor angular-rate plant, and a closed-loop
engine with time-delay margin search.
"""

from . import controller, gp, learner, numerics, plant, scenario

__version__ = "0.1.0"

__all__ = [
    "controller",
    "gp",
    "learner",
    "numerics",
    "plant",
    "scenario",
    "__version__",
]
