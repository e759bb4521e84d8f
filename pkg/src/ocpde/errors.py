"""Exception hierarchy shared across the package."""


class OcpdeError(Exception):
    """Base class for all package errors."""


class ConfigurationError(OcpdeError, ValueError):
    pass


class DimensionError(OcpdeError, ValueError):
    pass


class EvaluationError(OcpdeError, ArithmeticError):
    """A model function produced a non-finite or inadmissible value.

    ``node`` is the mesh node where the problem was first seen and
    ``time_index`` the time-mesh index when evaluating along a path.
    """

    def __init__(self, message, node=None, time_index=None):
        super().__init__(message)
        self.node = node
        self.time_index = time_index


class NewtonFailure(OcpdeError, RuntimeError):
    def __init__(self, message, residual=float("nan"), iterate=None):
        super().__init__(message)
        self.residual = residual
        self.iterate = iterate


class BranchSwitchError(OcpdeError, RuntimeError):
    pass


class SpectralError(OcpdeError, RuntimeError):
    pass


class DegenerateSpectrumError(SpectralError):
    pass


class ProjectionError(OcpdeError, RuntimeError):
    pass


class PathFailure(OcpdeError, RuntimeError):
    def __init__(self, message, residual=float("nan"), path=None):
        super().__init__(message)
        self.residual = residual
        self.path = path


class NoProgressError(PathFailure):
    pass


class FileFormatError(OcpdeError, ValueError):
    pass
