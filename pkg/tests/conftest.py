import itertools

import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def gauss_jordan_inverse(M):
    """Textbook Gauss-Jordan elimination with partial pivoting, in pure Python."""
    n = len(M)
    aug = [list(map(float, row)) + [1.0 if i == j else 0.0 for j in range(n)] for i, row in enumerate(M)]
    for col in range(n):
        pivot = max(range(col, n), key=lambda r: abs(aug[r][col]))
        aug[col], aug[pivot] = aug[pivot], aug[col]
        p = aug[col][col]
        aug[col] = [v / p for v in aug[col]]
        for r in range(n):
            if r != col:
                f = aug[r][col]
                aug[r] = [a - f * b for a, b in zip(aug[r], aug[col])]
    return np.array([row[n:] for row in aug])


def grid_zoom_minimize(f, dim, radius=4.0, points=21, rounds=40, shrink=0.5):
    """Derivative-free minimizer for small convex problems: exhaustive grid, then zoom."""
    center = np.zeros(dim)
    best_val = f(center)
    best = center
    for _ in range(rounds):
        axis = np.linspace(-radius, radius, points)
        for offs in itertools.product(axis, repeat=dim):
            cand = center + np.array(offs)
            val = f(cand)
            if val < best_val:
                best_val, best = val, cand
        center = best
        radius *= shrink
    return best, best_val


def classical_ista(A, y, step, threshold, iters):
    x = np.zeros(A.shape[1])
    for _ in range(iters):
        g = x - step * A.T @ (A @ x - y)
        x = np.sign(g) * np.maximum(np.abs(g) - threshold, 0.0)
    return x


def random_instance(rng, m=12, n=25, N=125):
    from dadnet.linalg import he_normal_init

    A = rng.standard_normal((m, n)) / np.sqrt(m)
    Phi = he_normal_init(N, n, int(rng.integers(1 << 31)))
    x = rng.standard_normal(n)
    y = A @ x + 1e-4 * rng.standard_normal(m)
    return A, Phi, x, y
