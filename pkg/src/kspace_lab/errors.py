"""Exception hierarchy shared by all kspace_lab modules."""


class KspaceLabError(Exception):
    """Base class for library errors."""


class DomainError(KspaceLabError, ValueError):
    """A grid carried the wrong domain tag (image vs k-space)."""


class ShapeError(KspaceLabError, ValueError):
    """Array or grid dimensions are incompatible."""


class BudgetError(KspaceLabError, ValueError):
    """The requested sampling budget cannot hold the calibration region."""


class AcsTooSmallError(KspaceLabError, ValueError):
    """Calibration block furnishes too few fit equations for the kernel."""


class SingularFitError(KspaceLabError, ArithmeticError):
    """Kernel normal equations are singular."""


class GeometryError(KspaceLabError, ValueError):
    """Mask layout does not match the kernel geometry."""


class ConfigError(KspaceLabError, ValueError):
    """Invalid training or experiment configuration."""


class DivergenceError(KspaceLabError, ArithmeticError):
    """Training produced a non-finite loss."""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch
