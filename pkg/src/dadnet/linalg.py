"""Dense numerical substrate: SPD factorization, random matrices, prox maps.

Matrices and vectors are plain float64 numpy arrays. Functions that take a
"vector" also accept a 2-D array whose columns are independent vectors,
which is how batches flow through the decoders.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from dadnet.errors import InvalidArgumentError, SingularMatrixError

SYMMETRY_RTOL = 1e-8
JITTER_START = 1e-12
JITTER_GROWTH = 10.0
JITTER_RETRIES = 3


@dataclass(frozen=True)
class SpdFactor:
    """Cholesky factor ``lower @ lower.T`` of a symmetric positive definite matrix.

    ``jitter_used`` is the multiple of the identity that had to be added to
    the input before the factorization succeeded (0 for a clean factor).
    """

    dim: int
    lower: np.ndarray
    jitter_used: float = 0.0

    def solve(self, b: np.ndarray) -> np.ndarray:
        return spd_solve(self, b)

    def reconstruct(self) -> np.ndarray:
        return self.lower @ self.lower.T


def soft_threshold(x, tau):
    """Componentwise ``sign(x) * max(0, |x| - tau)``."""
    if tau < 0:
        raise InvalidArgumentError(f"threshold must be nonnegative, got {tau}")
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.maximum(np.abs(x) - tau, 0.0)


def spd_factor(M) -> SpdFactor:
    """Factor a symmetric positive definite matrix, retrying with diagonal jitter.

    Raises
    ------
    InvalidArgumentError
        If ``M`` is not square or not symmetric to relative tolerance 1e-8.
    SingularMatrixError
        If the factorization still fails after the last jitter retry.
    """
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1] or M.shape[0] == 0:
        raise InvalidArgumentError(f"expected a nonempty square matrix, got shape {M.shape}")
    scale = np.max(np.abs(M))
    if not np.all(np.isfinite(M)):
        raise InvalidArgumentError("matrix has non-finite entries")
    if np.max(np.abs(M - M.T)) > SYMMETRY_RTOL * max(scale, np.finfo(float).tiny):
        raise InvalidArgumentError("matrix is not symmetric")

    dim = M.shape[0]
    try:
        return SpdFactor(dim, np.linalg.cholesky(M), 0.0)
    except np.linalg.LinAlgError:
        pass

    jitter = JITTER_START * abs(np.trace(M)) / dim
    if jitter == 0.0:
        raise SingularMatrixError("matrix has zero trace and is not positive definite")
    for _ in range(JITTER_RETRIES):
        try:
            lower = np.linalg.cholesky(M + jitter * np.eye(dim))
            return SpdFactor(dim, lower, jitter)
        except np.linalg.LinAlgError:
            jitter *= JITTER_GROWTH
    raise SingularMatrixError(f"factorization failed after {JITTER_RETRIES} jitter retries")


def spd_solve(factor: SpdFactor, B):
    """Solve ``M X = B`` for the matrix ``M`` held by ``factor``."""
    B = np.asarray(B, dtype=np.float64)
    if B.ndim not in (1, 2) or B.shape[0] != factor.dim:
        raise InvalidArgumentError(
            f"right-hand side of shape {B.shape} does not match factor of dim {factor.dim}"
        )
    return scipy.linalg.cho_solve((factor.lower, True), B, check_finite=False)


def gaussian_matrix(rows: int, cols: int, mean: float = 0.0, std: float = 1.0, seed=None):
    if rows <= 0 or cols <= 0:
        raise InvalidArgumentError(f"matrix dimensions must be positive, got {rows}x{cols}")
    if std <= 0:
        raise InvalidArgumentError(f"std must be positive, got {std}")
    rng = np.random.default_rng(seed)
    return rng.normal(mean, std, size=(rows, cols))


def he_normal_init(N: int, n: int, seed=None):
    """Redundant analysis operator of shape (N, n) with He-normal entries.

    The fan-in is ``n`` (the operator maps R^n to R^N), so the entry std is
    ``sqrt(2 / n)``.
    """
    if N <= n:
        raise InvalidArgumentError(f"analysis operator must be redundant (N > n), got N={N}, n={n}")
    return gaussian_matrix(N, n, 0.0, np.sqrt(2.0 / n), seed)


def column_norms(x):
    return np.linalg.norm(x) if x.ndim == 1 else np.linalg.norm(x, axis=0)


def norm_clip(x, B_out: float):
    """Project onto the l2 ball of radius ``B_out``.

    Vectors already inside the ball are returned unchanged. For a 2-D array
    each column is clipped on its own.
    """
    if not B_out > 0:
        raise InvalidArgumentError(f"B_out must be positive, got {B_out}")
    x = np.asarray(x, dtype=np.float64)
    norms = column_norms(x)
    outside = norms > B_out
    if not np.any(outside):
        return x
    scale = np.where(outside, B_out / np.where(outside, norms, 1.0), 1.0)
    out = x * scale
    # rounding can leave the scaled norm a few ulps above B_out; the bound is a hard guarantee
    for _ in range(64):
        over = column_norms(out) > B_out
        if not np.any(over):
            break
        scale = np.where(over, np.nextafter(scale, 0.0), scale)
        out = x * scale
    return out
