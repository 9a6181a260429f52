"""Exception hierarchy shared by all modules."""

import numpy as np


class DadnetError(Exception):
    """Base class for errors raised by this package."""


class InvalidArgumentError(DadnetError, ValueError):
    pass


class SingularMatrixError(DadnetError, np.linalg.LinAlgError):
    pass


class UnsupportedOperationError(DadnetError, TypeError):
    pass


class FormatError(DadnetError, ValueError):
    """Raised when a container or config file cannot be parsed."""


class TrainingDivergedError(DadnetError, RuntimeError):
    pass
