"""Losses, Adam, the mini-batch training loop and evaluation metrics."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from dadnet import admm_dad, ista_baseline
from dadnet import autodiff as ad
from dadnet.data_pipeline import Dataset
from dadnet.errors import InvalidArgumentError, TrainingDivergedError
from dadnet.linalg import he_normal_init

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 128
    epochs: int = 50
    seed: int | None = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise InvalidArgumentError("learning_rate must be nonnegative")
        if self.batch_size < 1 or self.epochs < 0:
            raise InvalidArgumentError("batch_size must be positive and epochs nonnegative")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1) or not self.epsilon > 0:
            raise InvalidArgumentError("invalid Adam hyperparameters")


@dataclass
class EpochRecord:
    epoch: int
    train_mse: float
    test_mse: float

    @property
    def gen_error(self) -> float:
        return abs(self.test_mse - self.train_mse)


@dataclass
class MetricsReport:
    train_mse: float
    test_mse: float
    history: list[EpochRecord] = field(default_factory=list)

    @property
    def generalization_error(self) -> float:
        return abs(self.test_mse - self.train_mse)


# ------------------------------------------------------------------ metrics


def mse(pairs) -> float:
    """Mean of ``||x_hat - x||^2`` over ``(x, x_hat)`` pairs."""
    pairs = list(pairs)
    if not pairs:
        raise InvalidArgumentError("mse of an empty set is undefined")
    total = 0.0
    for x, x_hat in pairs:
        x = np.asarray(x, dtype=np.float64)
        x_hat = np.asarray(x_hat, dtype=np.float64)
        if x.shape != x_hat.shape:
            raise InvalidArgumentError(f"shape mismatch {x.shape} vs {x_hat.shape}")
        d = x_hat - x
        total += float(np.sum(d * d))
    return total / len(pairs)


def mse_rows(X, X_hat) -> float:
    """:func:`mse` for signals stored one per row."""
    X = np.asarray(X)
    if X.shape[0] == 0:
        raise InvalidArgumentError("mse of an empty set is undefined")
    return mse(zip(X, np.asarray(X_hat)))


# -------------------------------------------------------------------- adam


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, t: int, config: TrainConfig):
    """One bias-corrected Adam update. Returns new ``(params, state)``; inputs are not mutated."""
    if t < 1:
        raise InvalidArgumentError("Adam step index starts at 1")
    b1, b2, eps, lr = config.beta1, config.beta2, config.epsilon, config.learning_rate
    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != np.shape(p):
            raise InvalidArgumentError(f"gradient for {name!r} has shape {g.shape}, expected {np.shape(p)}")
        m = state.m.get(name, np.zeros_like(g))
        v = state.v.get(name, np.zeros_like(g))
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * (g * g)
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        new_params[name] = p - lr * m_hat / (np.sqrt(v_hat) + eps)
        new_m[name] = m
        new_v[name] = v
    return new_params, AdamState(new_m, new_v)


# ---------------------------------------------------------------- decoders


class AdmmDadModel:
    """Adapter exposing ADMM-DAD to the training loop; the parameter is ``Phi``."""

    kind = "admm-dad"

    def __init__(self, config: admm_dad.DecoderConfig, A: np.ndarray):
        self.config = config
        self.A = A

    def init_params(self, seed) -> dict:
        return {"Phi": he_normal_init(self.config.N, self.config.n, seed)}

    def loss_program(self, Phi, A, Y, X):
        return admm_dad.batch_loss(self.config, Phi, A, Y, X)

    def predict(self, params, Y):
        """Reconstructions, one per row of ``Y``."""
        return admm_dad.forward(self.config, params["Phi"], self.A, Y.T).T

    def post_step(self, params):
        return params


class IstaModel:
    """Adapter for the unfolded ISTA baseline; parameters ``Psi`` (and ``tau`` when learned)."""

    kind = "ista"

    def __init__(self, config: ista_baseline.IstaConfig, A: np.ndarray):
        self.config = config
        self.A = A

    def init_params(self, seed) -> dict:
        params = {"Psi": np.eye(self.config.n)}
        if self.config.learn_threshold:
            params["tau"] = np.asarray(self.config.threshold)
        return params

    def loss_program(self, Psi, A, Y, X, tau=None):
        return ista_baseline.batch_loss(self.config, Psi, A, Y, X, tau)

    def predict(self, params, Y):
        tau = params.get("tau")
        tau = None if tau is None else float(tau)
        return ista_baseline.ista_forward(self.config, params["Psi"], self.A, Y.T, tau).T

    def post_step(self, params):
        out = dict(params)
        out["Psi"] = ista_baseline.orthogonal_project(params["Psi"])
        if "tau" in out:
            out["tau"] = np.maximum(out["tau"], 0.0)
        return out


def evaluate(model, params, X, Y) -> float:
    return mse_rows(X, model.predict(params, Y))


def batch_gradient(model, params, X_batch, Y_batch):
    """Loss and gradient of the mean batch MSE."""
    value, tape = ad.record_forward(
        model.loss_program, params, {"A": model.A, "Y": Y_batch.T, "X": X_batch.T}
    )
    return float(value), ad.backward(tape)


def train(model, dataset: Dataset, train_config: TrainConfig, params: dict | None = None,
          callback: Callable | None = None):
    """Mini-batch Adam training.

    Each step: taped forward, mean batch MSE, backward, Adam update, then the
    model's projection (identity for ADMM-DAD). Batches are reshuffled every
    epoch from ``train_config.seed``; the last batch may be short.

    Returns
    -------
    params : dict
    report : MetricsReport
        Train/test MSE before training (epoch 0) and after every epoch.
    """
    if params is None:
        params = model.init_params(train_config.seed)
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    rng = np.random.default_rng(train_config.seed)
    state = AdamState()
    t = 0
    count = dataset.X_train.shape[0]

    def record(epoch):
        train_mse = evaluate(model, params, dataset.X_train, dataset.Y_train)
        test_mse = evaluate(model, params, dataset.X_test, dataset.Y_test)
        if not (math.isfinite(train_mse) and math.isfinite(test_mse)):
            raise TrainingDivergedError(
                f"non-finite MSE after epoch {epoch}: train={train_mse}, test={test_mse}"
            )
        return EpochRecord(epoch, train_mse, test_mse)

    history = [record(0)]
    for epoch in range(1, train_config.epochs + 1):
        order = rng.permutation(count)
        for start in range(0, count, train_config.batch_size):
            idx = order[start:start + train_config.batch_size]
            loss, grad = batch_gradient(model, params, dataset.X_train[idx], dataset.Y_train[idx])
            if not math.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grad.grads.values()):
                raise TrainingDivergedError(
                    f"non-finite loss or gradient at epoch {epoch}, step {t + 1} (loss={loss})"
                )
            t += 1
            params, state = adam_step(params, grad.grads, state, t, train_config)
            params = model.post_step(params)
            if callback is not None:
                callback(epoch, t, params)
        history.append(record(epoch))
        log.info("epoch %d train_mse=%.6g test_mse=%.6g", epoch, history[-1].train_mse, history[-1].test_mse)

    last = history[-1]
    return params, MetricsReport(last.train_mse, last.test_mse, history)


def robustness_sweep(model, params, X_test, ensemble, noise_stds, seed=None) -> list[tuple[float, float]]:
    """Test MSE under fresh measurement noise of each standard deviation.

    Each level is estimated from the antithetic pair ``+e, -e`` of one
    standard-normal draw shared by all levels, which cancels the term linear
    in the noise and leaves the curve's expected shape. ``std = 0`` is the
    plain noiseless test MSE.
    """
    stds = [float(s) for s in noise_stds]
    if any(s < 0 for s in stds):
        raise InvalidArgumentError("noise stds must be nonnegative")
    if stds != sorted(stds):
        raise InvalidArgumentError("noise stds must be ascending")
    X_test = np.asarray(X_test, dtype=np.float64)
    clean = X_test @ ensemble.A_tilde.T
    E = np.random.default_rng(seed).standard_normal(clean.shape)
    out = []
    for std in stds:
        if std == 0:
            err = evaluate(model, params, X_test, clean)
        else:
            err = 0.5 * (evaluate(model, params, X_test, clean + std * E)
                         + evaluate(model, params, X_test, clean - std * E))
        out.append((std, err))
    return out
