"""Exception hierarchy.  The CLI maps these onto exit codes."""


class LabError(Exception):
    """Base class for all errors raised by the package."""


class ConfigurationError(LabError, ValueError):
    """Inconsistent grids, invalid parameters, malformed config files."""


class NumericalError(LabError, ArithmeticError):
    """Non-finite values or a failed factorization."""


class BlowUpError(NumericalError):
    def __init__(self, message: str, step: int | None = None):
        super().__init__(message if step is None else f"{message} (step {step})")
        self.step = step


class TruncationError(NumericalError):
    """A phase-space representation loses mass across the velocity cutoff."""

    def __init__(self, message: str, leaked_mass: float):
        super().__init__(f"{message}: leaked mass {leaked_mass:.3e}")
        self.leaked_mass = leaked_mass


class ProfileRejected(ConfigurationError):
    """Initial profile needs too much spectral clipping to be a fermionic density."""
