import math

import numpy as np
import pytest

from dadnet import admm_dad
from dadnet.admm_classical import AdmmState, ClassicalProblem, admm_step, run_iterations, x_update
from dadnet.admm_dad import (
    DecoderConfig,
    bias,
    forward,
    initial_state,
    layer_step,
    least_squares_baseline,
    output_map,
    precompute,
    unfolded,
)
from dadnet.errors import InvalidArgumentError

from conftest import random_instance


def explicit_inverse(A, Phi, rho):
    return np.linalg.inv(A.T @ A + rho * Phi.T @ Phi)


def test_precompute_orthonormal_phi_without_measurements():
    # A = 0, Phi with orthonormal columns: M = I so W = Phi Phi^T, a projection
    rng = np.random.default_rng(4)
    Q, _ = np.linalg.qr(rng.standard_normal((6, 3)))
    lm = precompute(np.zeros((2, 3)), Q, 1.0)
    np.testing.assert_allclose(lm.W, Q @ Q.T, atol=1e-14)
    np.testing.assert_allclose(lm.W @ lm.W, lm.W, atol=1e-13)


def test_precompute_shapes():
    rng = np.random.default_rng(0)
    lm = precompute(rng.standard_normal((1, 4)), rng.standard_normal((20, 4)), 1.0)
    assert lm.W.shape == (20, 20)
    assert lm.Theta.shape == lm.Lambda_mat.shape == (20, 40)
    assert lm.Theta_tilde.shape == (40, 40)
    assert lm.I1.shape == lm.I2.shape == (40, 20)


def test_precompute_rejects_bad_shapes(rng):
    with pytest.raises(InvalidArgumentError):
        precompute(rng.standard_normal((3, 5)), rng.standard_normal((10, 4)), 1.0)
    with pytest.raises(InvalidArgumentError):
        precompute(rng.standard_normal((3, 5)), rng.standard_normal((5, 5)), 1.0)


def test_w_is_symmetric_with_spectrum_in_unit_interval(rng):
    A, Phi, _, _ = random_instance(rng)
    for rho in (0.1, 1.0, 10.0):
        W = precompute(A, Phi, rho).W
        assert np.max(np.abs(W - W.T)) < 1e-10
        ev = np.linalg.eigvalsh((W + W.T) / 2)
        assert ev.min() > -1e-10 and ev.max() < 1 + 1e-10


def test_w_and_bias_match_explicit_inverse(rng):
    A, Phi, _, y = random_instance(rng)
    Minv = explicit_inverse(A, Phi, 0.5)
    lm = precompute(A, Phi, 0.5)
    np.testing.assert_allclose(lm.W, 0.5 * Phi @ Minv @ Phi.T, atol=1e-10)
    np.testing.assert_allclose(bias(lm, Phi, A, y), Phi @ Minv @ A.T @ y, atol=1e-10)


def test_block_identities(rng):
    A, Phi, _, _ = random_instance(rng, m=5, n=8, N=24)
    lm = precompute(A, Phi, 1.0)
    N, I = 24, np.eye(24)
    assert np.array_equal(lm.Theta[:, :N], -I - lm.W)
    assert np.array_equal(lm.Theta[:, N:], lm.W)
    assert np.array_equal(lm.Lambda_mat[:, :N], I - lm.W)
    assert np.array_equal(lm.Lambda_mat[:, N:], lm.W)
    assert np.array_equal(lm.Theta_tilde[:N], lm.Lambda_mat)
    assert not lm.Theta_tilde[N:].any()
    assert np.array_equal(lm.I1, np.vstack([I, np.zeros((N, N))]))
    assert np.array_equal(lm.I2, np.vstack([-I, I]))
    # Lambda - Theta = [2I | 0]
    assert np.array_equal(lm.Lambda_mat - lm.Theta, np.hstack([2 * I, np.zeros((N, N))]))


def test_bias_zero_cases(rng):
    A, Phi, _, y = random_instance(rng, m=5, n=8, N=24)
    lm = precompute(A, Phi, 1.0)
    assert not bias(lm, Phi, A, np.zeros(5)).any()
    A0 = np.zeros_like(A)
    assert not bias(precompute(A0, Phi, 1.0), Phi, A0, y).any()


def test_bias_is_linear(rng):
    A, Phi, _, y = random_instance(rng)
    lm = precompute(A, Phi, 1.0)
    np.testing.assert_allclose(bias(lm, Phi, A, 2 * y), 2 * bias(lm, Phi, A, y), rtol=1e-14, atol=0)
    Y = rng.standard_normal((A.shape[0], 3))
    B = bias(lm, Phi, A, Y)
    np.testing.assert_allclose(B[:, 1], bias(lm, Phi, A, Y[:, 1]), atol=1e-13)


def test_layer_step_zero_state_and_zero_bias(rng):
    A, Phi, _, _ = random_instance(rng, m=5, n=8, N=24)
    lm = precompute(A, Phi, 1.0)
    out = layer_step(lm, np.zeros(48), np.zeros(24), 0.1)
    assert not out.any()


def test_first_layer_at_zero_state(rng):
    A, Phi, _, y = random_instance(rng, m=5, n=8, N=24)
    lm = precompute(A, Phi, 1.0)
    b = bias(lm, Phi, A, y)
    s = np.sign(b) * np.maximum(np.abs(b) - 1e-2, 0)
    np.testing.assert_array_equal(layer_step(lm, np.zeros(48), b, 1e-2), np.concatenate([b - s, s]))


def test_layer_step_matches_one_admm_iteration(rng):
    A, Phi, _, y = random_instance(rng)
    lam, rho = 0.05, 0.8
    N = Phi.shape[0]
    p = ClassicalProblem(A, Phi, y, lam, rho)
    z = rng.standard_normal(N) * 0.1
    u = rng.standard_normal(N) * 0.1
    ref = admm_step(p, AdmmState(np.zeros(A.shape[1]), z, u), p.factor())
    lm = precompute(A, Phi, rho)
    v = layer_step(lm, np.concatenate([u, z]), bias(lm, Phi, A, y), lam / rho)
    assert np.max(np.abs(v[:N] - ref.u)) < 1e-12
    assert np.max(np.abs(v[N:] - ref.z)) < 1e-12


def test_layer_step_rejects_bad_lengths(rng):
    A, Phi, _, _ = random_instance(rng, m=5, n=8, N=24)
    lm = precompute(A, Phi, 1.0)
    with pytest.raises(InvalidArgumentError):
        layer_step(lm, np.zeros(47), np.zeros(24), 0.1)


def test_output_map_at_zero_state_is_least_squares(rng):
    A, Phi, _, y = random_instance(rng)
    lm = precompute(A, Phi, 1.0)
    x = output_map(lm, Phi, A, y, initial_state(Phi.shape[0], y), 1.0)
    np.testing.assert_allclose(x, explicit_inverse(A, Phi, 1.0) @ A.T @ y, atol=1e-10)
    np.testing.assert_allclose(least_squares_baseline(A, Phi, y, 1.0), x, atol=1e-13)


def test_output_map_matches_x_update(rng):
    A, Phi, _, y = random_instance(rng)
    N = Phi.shape[0]
    p = ClassicalProblem(A, Phi, y, 1e-3, 1.3)
    v = rng.standard_normal(2 * N)
    lm = precompute(A, Phi, 1.3)
    ref = x_update(p, p.factor(), v[N:], v[:N])
    assert np.max(np.abs(output_map(lm, Phi, A, y, v, 1.3) - ref)) < 1e-12


def test_forward_zero_measurement(rng):
    A, Phi, _, _ = random_instance(rng)
    cfg = DecoderConfig(N=Phi.shape[0], n=Phi.shape[1])
    assert not forward(cfg, Phi, A, np.zeros(A.shape[0])).any()


@pytest.mark.parametrize("L", [1, 5, 10])
def test_forward_equals_classical_trajectory(L):
    rng = np.random.default_rng(100 + L)
    A, Phi, _, y = random_instance(rng)
    cfg = DecoderConfig(N=Phi.shape[0], n=Phi.shape[1], L=L)
    p = ClassicalProblem(A, Phi, y, cfg.lam, cfg.rho)
    st = run_iterations(p, L)
    ref = x_update(p, p.factor(), st.z, st.u)
    assert np.max(np.abs(forward(cfg, Phi, A, y) - ref)) < 1e-8


def test_forward_on_columns_matches_single(rng):
    A, Phi, _, _ = random_instance(rng)
    Y = rng.standard_normal((A.shape[0], 4))
    cfg = DecoderConfig(N=Phi.shape[0], n=Phi.shape[1], L=3)
    X = forward(cfg, Phi, A, Y)
    for j in range(4):
        np.testing.assert_allclose(X[:, j], forward(cfg, Phi, A, Y[:, j]), atol=1e-12)


def test_forward_clip_lands_on_bound(rng):
    A, Phi, _, y = random_instance(rng)
    raw = unfolded(DecoderConfig(N=Phi.shape[0], n=Phi.shape[1]), Phi, A, y)
    B = 0.5 * np.linalg.norm(raw)
    x = forward(DecoderConfig(N=Phi.shape[0], n=Phi.shape[1], B_out=B), Phi, A, y)
    assert abs(np.linalg.norm(x) - B) < 1e-12 * max(1.0, B)
    np.testing.assert_allclose(x / B, raw / np.linalg.norm(raw), atol=1e-12)


def test_forward_checks_phi_shape(rng):
    A, Phi, _, y = random_instance(rng)
    with pytest.raises(InvalidArgumentError):
        forward(DecoderConfig(N=Phi.shape[0] + 1, n=Phi.shape[1]), Phi, A, y)


@pytest.mark.parametrize("kw", [dict(N=5, n=5), dict(N=6, n=5, L=0), dict(N=6, n=5, lam=0.0),
                                dict(N=6, n=5, B_out=0.0)])
def test_config_validation(kw):
    with pytest.raises(InvalidArgumentError):
        DecoderConfig(**kw)


def test_config_threshold():
    assert DecoderConfig(N=6, n=5, lam=0.2, rho=4.0).threshold == 0.05
    assert math.isinf(DecoderConfig(N=6, n=5).B_out)


def test_batch_loss_value(rng):
    A, Phi, _, _ = random_instance(rng, m=5, n=8, N=24)
    Y = rng.standard_normal((5, 3))
    X = rng.standard_normal((8, 3))
    cfg = DecoderConfig(N=24, n=8, L=2)
    expected = np.sum((forward(cfg, Phi, A, Y) - X) ** 2) / 3
    assert admm_dad.batch_loss(cfg, Phi, A, Y, X) == pytest.approx(expected, rel=1e-14)
