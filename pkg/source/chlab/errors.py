"""Exceptions raised across the laboratory."""

from typing import Optional


class LabError(Exception):
    """Base class for every error raised by chlab."""


class MeshMismatchError(LabError, ValueError):
    """A field, coefficient vector or tangent does not fit the mesh it is used with."""

    def __init__(self, expected: int, got: int, what: str = "field"):
        super().__init__(f"{what} has {got} interior values, mesh expects {expected}")
        self.expected = expected
        self.got = got


class DomainError(LabError, ValueError):
    """An evaluation point or time lies outside the domain of a function."""


class DivisibilityError(LabError, ValueError):
    """Coarsening factors do not divide the sheet dimensions."""


class SampleOverflowError(LabError, ArithmeticError):
    """The numerical state left the finite range during a run.

    Args:
        step (int): Index of the time step that produced the bad state
        norm (float): Max-norm of the offending state (inf or nan allowed)
    """

    def __init__(self, step: int, norm: float):
        super().__init__(f"state overflow at step {step} (max-norm {norm:.3e})")
        self.step = step
        self.norm = norm


class CouplingError(LabError):
    """Two levels of one sample were not driven by the same master sheet."""


class TangentBudgetError(LabError, ValueError):
    """Full tangent tables were requested for a configuration that is too large."""


class DegenerateSampleError(LabError):
    """A sample set has no spread (or a vanishing H-norm) where a value is required."""


class QuadratureResolutionError(LabError):
    """Doubling the quadrature nodes moved a kernel error by more than the tolerance."""


class ConfigError(LabError, ValueError):
    """A configuration file could not be read or violates the schema.

    Args:
        message (str): Human-readable description
        key (str, optional): Offending key, as ``section.key``
        expected (str, optional): Expected type or value set
        line (int, optional): 1-based line number in the file
    """

    def __init__(self, message: str, key: Optional[str] = None,
                 expected: Optional[str] = None, line: Optional[int] = None):
        location = f" (line {line})" if line is not None else ""
        super().__init__(f"{message}{location}")
        self.key = key
        self.expected = expected
        self.line = line
