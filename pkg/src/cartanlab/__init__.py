"""Lie-algebra-valued differential forms on periodic lattices, Hodge solvers,
Yang-Mills relaxation, compensated-compactness experiments and moving-frame
analysis of immersions.
"""

__version__ = "0.1.0"

from .algebra import LieAlgebraDescriptor, make_algebra
from .errors import (
    ArgumentError,
    CartanLabError,
    ConfigurationError,
    DegreeError,
    FlowError,
    FrameError,
    ImmersionDegeneracyError,
    SolverError,
)
from .forms import DifferentialForm, GridSpec, TestFormBank
from .gauge import ConnectionField
from .hodge import HodgeSolveConfig, hodge_decompose, solve

__all__ = [
    "__version__",
    "ArgumentError",
    "CartanLabError",
    "ConfigurationError",
    "ConnectionField",
    "DegreeError",
    "DifferentialForm",
    "FlowError",
    "FrameError",
    "GridSpec",
    "HodgeSolveConfig",
    "ImmersionDegeneracyError",
    "LieAlgebraDescriptor",
    "SolverError",
    "TestFormBank",
    "hodge_decompose",
    "make_algebra",
    "solve",
]
