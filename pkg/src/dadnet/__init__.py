"""Analysis compressed sensing with an unfolded ADMM decoder.

The package provides a classical ADMM solver for the generalized LASSO,
the ADMM-DAD unfolded network with a trainable redundant analysis
operator, an unfolded ISTA baseline, a small reverse-mode gradient engine
and an experiment runner.
"""

from dadnet.errors import (
    DadnetError,
    FormatError,
    InvalidArgumentError,
    SingularMatrixError,
    TrainingDivergedError,
    UnsupportedOperationError,
)

__version__ = "0.1.0"

__all__ = [
    "DadnetError",
    "FormatError",
    "InvalidArgumentError",
    "SingularMatrixError",
    "TrainingDivergedError",
    "UnsupportedOperationError",
]
