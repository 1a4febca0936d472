"""Tabular policy-evaluation lab for finite-horizon MDPs."""
from .errors import (
    CoverageError,
    DoptLabError,
    EnumerationCapError,
    InfeasibleError,
    ShapeError,
    ValidationError,
)
from .kernels import BACKEND
from .mdp import FiniteMdp, RngSpec, TimedPolicy, Trajectory, TupleDataset

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "CoverageError",
    "DoptLabError",
    "EnumerationCapError",
    "FiniteMdp",
    "InfeasibleError",
    "RngSpec",
    "ShapeError",
    "TimedPolicy",
    "Trajectory",
    "TupleDataset",
    "ValidationError",
]
