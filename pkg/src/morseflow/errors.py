"""Exception hierarchy shared by all modules."""


class MorseflowError(Exception):
    """Base class for every error raised by the package."""


class DomainError(MorseflowError, ValueError):
    """An argument lies outside the domain of the operation."""


class OrderingError(MorseflowError, ValueError):
    """An interval or position list is not strictly increasing."""


class StateError(MorseflowError, ValueError):
    """A particle configuration violates its invariants."""


class DimensionError(MorseflowError, ValueError):
    """Two configurations do not have the same number of particles."""


class AtomizationError(MorseflowError, ValueError):
    """An initial density cannot be atomized into strictly ordered particles."""


class DegenerateInputError(MorseflowError, ValueError):
    """The input makes a ratio or fit undefined."""


class SampleLookupError(MorseflowError, LookupError):
    """A requested time is not one of the trajectory samples."""


class StiffnessError(MorseflowError, RuntimeError):
    """Step halving was exhausted without keeping same-species gaps positive."""

    def __init__(self, message: str, species: str, gap_index: int, time: float):
        super().__init__(message)
        self.species = species
        self.gap_index = gap_index
        self.time = time


class OptimizationError(MorseflowError, RuntimeError):
    """The JKO inner solver never achieved sufficient decrease."""


class ConfigError(MorseflowError, ValueError):
    """A run configuration is missing keys, has bad values or unknown keys."""

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key
