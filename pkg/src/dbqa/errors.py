"""Exception types shared across the package."""


class DbqaError(Exception):
    """Base class for all errors raised by this package."""


class CapacityError(DbqaError, ValueError):
    """Requested a dense object that exceeds the configured qubit limit."""


class ContractError(DbqaError, ValueError):
    """An input violates a documented precondition (hermiticity, unitarity, shape)."""


class DimensionError(ContractError):
    """Operands have incompatible dimensions."""


class UnsupportedTermError(DbqaError, ValueError):
    """A Hamiltonian term cannot be handled by the requested compiler."""


class LoweringRequiredError(DbqaError, ValueError):
    """A circuit still contains composite gates that must be lowered first."""


class StepSizeError(DbqaError, RuntimeError):
    """An explicit integrator diverged for the chosen step size."""


class ConfigError(DbqaError, ValueError):
    """Run configuration is malformed or out of range."""


class TrainingError(DbqaError, RuntimeError):
    """Variational training produced a non-finite loss."""
