"""ADMM-DAD: ADMM iterations unfolded into a network with a learned analysis operator.

Substituting the x-update into the z- and u-updates and stacking
``v = [u; z]`` turns one ADMM iteration into the layer

    v+ = Theta_tilde v + I1 b + I2 S_{lam/rho}(Theta v + b)

with ``W = rho Phi M^{-1} Phi^T``, ``b = Phi M^{-1} A^T y``,
``M = A^T A + rho Phi^T Phi``, ``Theta = [-I - W | W]``,
``Lambda = [I - W | W]``, ``Theta_tilde = [Lambda; 0]``, ``I1 = [I; 0]`` and
``I2 = [-I; I]``. After ``L`` layers from ``v = 0`` the x-update is applied
once more and the result is clipped to the ball of radius ``B_out``.

Every function here accepts either plain arrays or :class:`~dadnet.autodiff.Var`
handles, so the same code is both the decoder and its differentiable program.
``y`` may be a single measurement or a matrix with one measurement per column.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any

import numpy as np

from dadnet import autodiff as ad
from dadnet.errors import InvalidArgumentError

DEFAULT_LAMBDA = 1e-4
DEFAULT_RHO = 1.0


@dataclass(frozen=True)
class DecoderConfig:
    N: int
    n: int
    L: int = 5
    lam: float = DEFAULT_LAMBDA
    rho: float = DEFAULT_RHO
    B_out: float = math.inf  # inf disables the clip

    def __post_init__(self):
        if self.N <= self.n:
            raise InvalidArgumentError(f"analysis operator must be redundant, got N={self.N}, n={self.n}")
        if self.L < 1:
            raise InvalidArgumentError("need at least one layer")
        if not self.lam > 0 or not self.rho > 0:
            raise InvalidArgumentError("lam and rho must be positive")
        if not self.B_out > 0:
            raise InvalidArgumentError("B_out must be positive")

    @property
    def threshold(self) -> float:
        return self.lam / self.rho


@dataclass
class LayerMatrices:
    factor: Any  # SpdFactor of M, or its tape node
    W: Any
    Theta: Any
    Lambda_mat: Any
    Theta_tilde: Any
    I1: np.ndarray
    I2: np.ndarray


def precompute(A, Phi, rho: float) -> LayerMatrices:
    """Factor ``M`` once and assemble the layer matrices shared by all layers."""
    if A.ndim != 2 or Phi.ndim != 2 or A.shape[1] != Phi.shape[1]:
        raise InvalidArgumentError(f"incompatible shapes A{A.shape}, Phi{Phi.shape}")
    N, n = Phi.shape
    if N <= n:
        raise InvalidArgumentError(f"analysis operator must be redundant, got N={N}, n={n}")
    M = A.T @ A + rho * (Phi.T @ Phi)
    factor = ad.spd_factor(M)
    W = rho * (Phi @ ad.spd_solve(factor, Phi.T))
    eye = np.eye(N)
    zero = np.zeros((N, N))
    Theta = ad.concat([-eye - W, W], axis=1)
    Lambda_mat = ad.concat([eye - W, W], axis=1)
    Theta_tilde = ad.concat([Lambda_mat, np.zeros((N, 2 * N))], axis=0)
    I1 = np.concatenate([eye, zero], axis=0)
    I2 = np.concatenate([-eye, eye], axis=0)
    return LayerMatrices(factor, W, Theta, Lambda_mat, Theta_tilde, I1, I2)


def _check_measurement(A, y):
    if y.ndim not in (1, 2) or y.shape[0] != A.shape[0]:
        raise InvalidArgumentError(f"measurement of shape {y.shape} does not match A{A.shape}")


def bias(lm: LayerMatrices, Phi, A, y):
    """``b(y) = Phi M^{-1} A^T y``."""
    _check_measurement(A, y)
    return Phi @ ad.spd_solve(lm.factor, A.T @ y)


def layer_step(lm: LayerMatrices, v, b, threshold: float):
    N = lm.I1.shape[1]
    if v.shape[0] != 2 * N or b.shape[0] != N:
        raise InvalidArgumentError(f"expected v of length {2 * N} and b of length {N}")
    return lm.Theta_tilde @ v + lm.I1 @ b + lm.I2 @ ad.soft_threshold(lm.Theta @ v + b, threshold)


def output_map(lm: LayerMatrices, Phi, A, y, v_L, rho: float):
    """Affine read-out: the x-update evaluated at ``(z^L, u^L)``."""
    N = Phi.shape[0]
    if v_L.shape[0] != 2 * N:
        raise InvalidArgumentError(f"expected v of length {2 * N}, got {v_L.shape[0]}")
    _check_measurement(A, y)
    u = v_L[:N]
    z = v_L[N:]
    return ad.spd_solve(lm.factor, A.T @ y + rho * (Phi.T @ (z - u)))


def initial_state(N: int, y):
    return np.zeros((2 * N, *y.shape[1:]))


def unfolded(config: DecoderConfig, Phi, A, y):
    """``T(f_L o ... o f_1(y))`` without the clip."""
    lm = precompute(A, Phi, config.rho)
    b = bias(lm, Phi, A, y)
    v = initial_state(Phi.shape[0], y)
    for _ in range(config.L):
        v = layer_step(lm, v, b, config.threshold)
    return output_map(lm, Phi, A, y, v, config.rho)


def forward(config: DecoderConfig, Phi, A, y):
    """Decoder output ``sigma(T(f^L_Phi(y)))``; ``y`` may hold one measurement per column."""
    if Phi.shape != (config.N, config.n):
        raise InvalidArgumentError(f"Phi has shape {Phi.shape}, config expects {(config.N, config.n)}")
    return ad.norm_clip(unfolded(config, Phi, A, y), config.B_out)


def least_squares_baseline(A, Phi, y, rho: float = DEFAULT_RHO):
    """Regularized least squares ``M^{-1} A^T y``: the decoder output at ``v_L = 0``."""
    M = A.T @ A + rho * (Phi.T @ Phi)
    return ad.spd_solve(ad.spd_factor(M), A.T @ y)


def batch_loss(config: DecoderConfig, Phi, A, Y, X):
    """Mean squared reconstruction error over the columns of ``Y`` and ``X``."""
    diff = forward(config, Phi, A, Y) - X
    return ad.sqnorm(diff) * (1.0 / X.shape[1])
