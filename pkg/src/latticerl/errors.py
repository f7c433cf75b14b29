"""Exception types shared across the package."""


class LatticeError(Exception):
    """Base class for all package-specific errors."""


class NotPositiveDefinite(LatticeError):
    """A covariance matrix failed Cholesky factorization."""


class DimensionMismatch(LatticeError):
    """Operands have incompatible shapes."""


class NoConvergence(LatticeError):
    """An iterative numerical method hit its iteration cap."""


class NonFiniteAction(LatticeError):
    """An environment received a NaN or infinite action."""


class NonFiniteLoss(LatticeError):
    """A PPO update produced a NaN or infinite loss."""


class InsufficientSamples(LatticeError):
    """Not enough samples for the requested statistical analysis."""


class EmptyGroup(LatticeError):
    """An actuator group in a partition is empty."""


class UnknownAnalysisKind(LatticeError):
    """Unrecognized analysis kind requested."""


class CheckpointCorrupt(LatticeError):
    """A checkpoint file could not be parsed or is inconsistent."""


class ConfigError(LatticeError):
    """A run configuration file is invalid."""


class StateSyncUnsupported(LatticeError):
    """The environment does not expose state get/set for paired simulation."""
