"""Two-species Morse interaction: particle scheme, JKO reference solver, experiments."""

from morseflow._backend import BACKEND
from morseflow.errors import (
    AtomizationError,
    ConfigError,
    DegenerateInputError,
    DimensionError,
    DomainError,
    MorseflowError,
    OptimizationError,
    OrderingError,
    SampleLookupError,
    StateError,
    StiffnessError,
)
from morseflow.state import (
    PiecewiseConstant,
    PiecewiseDensity,
    SpeciesConfig,
    SystemState,
    TabulatedCDF,
    Uniform,
    atomize,
    tent,
    to_density,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "AtomizationError",
    "ConfigError",
    "DegenerateInputError",
    "DimensionError",
    "DomainError",
    "MorseflowError",
    "OptimizationError",
    "OrderingError",
    "SampleLookupError",
    "StateError",
    "StiffnessError",
    "PiecewiseConstant",
    "PiecewiseDensity",
    "SpeciesConfig",
    "SystemState",
    "TabulatedCDF",
    "Uniform",
    "atomize",
    "tent",
    "to_density",
    "__version__",
]
