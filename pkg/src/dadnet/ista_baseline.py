"""Unfolded ISTA with a learnable orthogonal sparsifier.

Comparison decoder. Each layer takes a gradient step on the data term and
soft-thresholds in the basis ``Psi``:

    x+ = Psi^T S_tau(Psi (x - step A^T (A x - y)))

All layers share ``Psi``. After every optimizer step ``Psi`` is projected
back onto the orthogonal group. This is a standard unfolded ISTA, not a
reproduction of any particular published ISTA network: layer update,
initialization and threshold handling are choices made here and are all
exposed through :class:`IstaConfig`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dadnet import autodiff as ad
from dadnet.errors import InvalidArgumentError, SingularMatrixError

DEFAULT_THRESHOLD = 1e-4
RANK_RTOL = 1e-12


@dataclass(frozen=True)
class IstaConfig:
    n: int
    L: int = 5
    step_size: float = 1.0
    threshold: float = DEFAULT_THRESHOLD
    learn_threshold: bool = False

    def __post_init__(self):
        if self.L < 1:
            raise InvalidArgumentError("need at least one layer")
        if not self.step_size > 0 or self.threshold < 0:
            raise InvalidArgumentError("step_size must be positive and threshold nonnegative")

    @classmethod
    def for_matrix(cls, A, L: int = 5, threshold: float = DEFAULT_THRESHOLD,
                   learn_threshold: bool = False) -> "IstaConfig":
        """Config with the convergence-safe step ``1 / sigma_max(A)^2``."""
        sigma = np.linalg.norm(A, 2)
        return cls(A.shape[1], L, 1.0 / sigma**2, threshold, learn_threshold)


def ista_layer(Psi, A, y, x, step: float, threshold):
    if A.shape[1] != Psi.shape[0] or x.shape[0] != A.shape[1] or y.shape[0] != A.shape[0]:
        raise InvalidArgumentError("inconsistent dimensions in ISTA layer")
    grad_step = x - step * (A.T @ (A @ x - y))
    return Psi.T @ ad.soft_threshold(Psi @ grad_step, threshold)


def ista_forward(config: IstaConfig, Psi, A, y, threshold=None):
    """``L`` ISTA layers from ``x = 0``. ``threshold`` overrides the config value
    (used when the threshold is itself trained)."""
    tau = config.threshold if threshold is None else threshold
    x = np.zeros((A.shape[1], *y.shape[1:]))
    for _ in range(config.L):
        x = ista_layer(Psi, A, y, x, config.step_size, tau)
    return x


def orthogonal_project(Psi) -> np.ndarray:
    """Nearest orthogonal matrix in Frobenius norm (the polar factor ``U V^T``)."""
    Psi = np.asarray(Psi, dtype=np.float64)
    if Psi.ndim != 2 or Psi.shape[0] != Psi.shape[1]:
        raise InvalidArgumentError(f"expected a square matrix, got shape {Psi.shape}")
    U, s, Vt = np.linalg.svd(Psi)
    if s[-1] <= RANK_RTOL * s[0]:
        raise SingularMatrixError("sparsifier is rank deficient")
    return U @ Vt


def orthogonality_error(Psi) -> float:
    return float(np.linalg.norm(Psi.T @ Psi - np.eye(Psi.shape[0])))


def batch_loss(config: IstaConfig, Psi, A, Y, X, threshold=None):
    diff = ista_forward(config, Psi, A, Y, threshold) - X
    return ad.sqnorm(diff) * (1.0 / X.shape[1])
