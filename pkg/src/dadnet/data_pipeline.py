"""Measurement simulation and dataset ingestion.

Signals are stored one per row (``count x n``); measurements likewise
(``count x m``). Decoders consume the transposes.
"""

from __future__ import annotations

import math
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.signal

from dadnet.errors import FormatError, InvalidArgumentError
from dadnet.linalg import gaussian_matrix

# ITU-R BT.601 luma
LUMA_WEIGHTS = (0.299, 0.587, 0.114)

AUDIO_RATE = 16000
AUDIO_SEGMENTS = 10
PCM16_SCALE = 32768.0


@dataclass(frozen=True)
class MeasurementEnsemble:
    A_raw: np.ndarray
    noise_std: float
    cs_ratio: float
    seed: int | None

    @property
    def m(self) -> int:
        return self.A_raw.shape[0]

    @property
    def n(self) -> int:
        return self.A_raw.shape[1]

    @property
    def A_tilde(self) -> np.ndarray:
        return self.A_raw / math.sqrt(self.m)


def measurement_count(n: int, cs_ratio: float) -> int:
    """``m = round(cs_ratio * n)``, halves rounded up."""
    return int(math.floor(cs_ratio * n + 0.5))


def make_ensemble(n: int, cs_ratio: float, noise_std: float = 1e-4, seed=None) -> MeasurementEnsemble:
    if not 0 < cs_ratio < 1:
        raise InvalidArgumentError(f"cs_ratio must lie in (0, 1), got {cs_ratio}")
    if noise_std < 0:
        raise InvalidArgumentError("noise_std must be nonnegative")
    m = measurement_count(n, cs_ratio)
    if m == 0 or m >= n:
        raise InvalidArgumentError(f"cs_ratio {cs_ratio} gives m={m} for n={n}")
    return MeasurementEnsemble(gaussian_matrix(m, n, 0.0, 1.0, seed), noise_std, cs_ratio, seed)


def measure(ensemble: MeasurementEnsemble, x, noise_seed=None, noise_std: float | None = None):
    """``y = A_tilde x + e`` with ``e ~ N(0, std^2 I)``; ``x`` is one signal or rows of signals."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != ensemble.n or x.ndim not in (1, 2):
        raise InvalidArgumentError(f"signal shape {x.shape} does not match n={ensemble.n}")
    std = ensemble.noise_std if noise_std is None else noise_std
    y = x @ ensemble.A_tilde.T
    if std > 0:
        y = y + std * np.random.default_rng(noise_seed).standard_normal(y.shape)
    return y


def synth_sparse_dataset(n: int, N_op: int, k: int, count: int, seed=None) -> np.ndarray:
    """Unit-norm signals synthesized from ``k`` atoms of a random ``N_op``-atom dictionary.

    Returns an array of shape ``(count, n)``. With ``k = 0`` every signal is zero.
    """
    if not 0 <= k < N_op:
        raise InvalidArgumentError(f"need 0 <= k < N_op, got k={k}, N_op={N_op}")
    rng = np.random.default_rng(seed)
    D = rng.standard_normal((n, N_op))
    X = np.zeros((count, n))
    if k == 0:
        return X
    for i in range(count):
        support = rng.choice(N_op, size=k, replace=False)
        x = D[:, support] @ rng.standard_normal(k)
        X[i] = x / np.linalg.norm(x)
    return X


def image_to_vector(pixels) -> np.ndarray:
    """Grayscale, scale to [0, 1] and flatten row-major."""
    p = np.asarray(pixels)
    if p.ndim == 2:
        p = p[:, :, None]
    if p.ndim != 3 or p.shape[2] not in (1, 3):
        raise InvalidArgumentError(f"expected H x W x C with C in (1, 3), got shape {p.shape}")
    p = p.astype(np.float64)
    gray = p[:, :, 0] if p.shape[2] == 1 else p @ np.array(LUMA_WEIGHTS)
    return (gray / 255.0).reshape(-1)


def audio_to_segments(samples, downsample: str = "pair", length: int = AUDIO_RATE,
                      segments: int = AUDIO_SEGMENTS) -> list[np.ndarray]:
    """Trim/pad to one second at 16 kHz, halve the rate and cut into 10 segments of 800.

    Integer PCM is scaled to [-1, 1]. ``downsample="pair"`` averages adjacent
    samples; ``"fir"`` uses a zero-phase FIR anti-aliasing decimator.
    """
    s = np.asarray(samples)
    if s.size == 0:
        raise InvalidArgumentError("empty audio")
    if np.issubdtype(s.dtype, np.integer):
        s = s.astype(np.float64) / PCM16_SCALE
    else:
        s = s.astype(np.float64)
    if s.ndim == 2:
        s = s.mean(axis=1)
    s = s[:length]
    if s.size < length:
        s = np.concatenate([s, np.zeros(length - s.size)])
    if downsample == "pair":
        half = 0.5 * (s[0::2] + s[1::2])
    elif downsample == "fir":
        half = scipy.signal.decimate(s, 2, ftype="fir", zero_phase=True)
    else:
        raise InvalidArgumentError(f"unknown downsampling method {downsample!r}")
    return list(half.reshape(segments, -1))


def read_wav(path) -> tuple[np.ndarray, int]:
    """16-bit PCM WAV as int16 samples (stereo averaged to mono) and the sample rate."""
    try:
        with wave.open(str(path), "rb") as w:
            if w.getsampwidth() != 2:
                raise FormatError(f"{path}: only 16-bit PCM is supported")
            channels = w.getnchannels()
            rate = w.getframerate()
            raw = w.readframes(w.getnframes())
    except wave.Error as exc:
        raise FormatError(f"{path}: {exc}") from exc
    data = np.frombuffer(raw, dtype="<i2").reshape(-1, channels)
    if channels > 1:
        data = np.round(data.mean(axis=1)).astype(np.int16)
    else:
        data = data[:, 0].copy()
    return data, rate


def write_wav(path, samples, rate: int = AUDIO_RATE) -> None:
    data = np.asarray(samples, dtype="<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(rate)
        w.writeframes(data.tobytes())


def read_pnm(path) -> np.ndarray:
    """Binary PGM (P5) or PPM (P6) with maxval <= 255, as ``H x W x C`` uint8."""
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: truncated header")
        tokens.append(data[start:pos])
    pos += 1
    magic = tokens[0]
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"{path}: unsupported PNM type {magic!r}")
    width, height, maxval = (int(t) for t in tokens[1:])
    if maxval > 255:
        raise FormatError(f"{path}: 16-bit PNM is not supported")
    channels = 1 if magic == b"P5" else 3
    size = width * height * channels
    body = data[pos:pos + size]
    if len(body) != size:
        raise FormatError(f"{path}: truncated pixel data")
    return np.frombuffer(body, dtype=np.uint8).reshape(height, width, channels)


def write_pnm(path, pixels) -> None:
    p = np.asarray(pixels, dtype=np.uint8)
    if p.ndim == 2:
        p = p[:, :, None]
    magic = b"P5" if p.shape[2] == 1 else b"P6"
    header = magic + f"\n{p.shape[1]} {p.shape[0]}\n255\n".encode()
    Path(path).write_bytes(header + p.tobytes())


def split_indices(count: int, train_fraction: float, seed=None) -> tuple[np.ndarray, np.ndarray]:
    """Seeded disjoint train/test split covering ``range(count)``."""
    if not 0 < train_fraction < 1:
        raise InvalidArgumentError("train_fraction must lie in (0, 1)")
    perm = np.random.default_rng(seed).permutation(count)
    cut = int(round(train_fraction * count))
    return np.sort(perm[:cut]), np.sort(perm[cut:])


@dataclass
class Dataset:
    """Train/test signals with their measurements under one ensemble."""

    ensemble: MeasurementEnsemble
    X_train: np.ndarray
    Y_train: np.ndarray
    X_test: np.ndarray
    Y_test: np.ndarray
    name: str = "synthetic"
    noise_seed: int | None = None

    @property
    def max_train_norm(self) -> float:
        return float(np.max(np.linalg.norm(self.X_train, axis=1)))


def build_dataset(X_train, X_test, ensemble: MeasurementEnsemble, noise_seed=None,
                  noise_in_training: bool = True, name: str = "synthetic") -> Dataset:
    """Measure both splits; train and test noise come from independent streams of ``noise_seed``."""
    X_train = np.asarray(X_train, dtype=np.float64)
    X_test = np.asarray(X_test, dtype=np.float64)
    train_seed, test_seed = np.random.SeedSequence(noise_seed).spawn(2)
    Y_train = measure(ensemble, X_train, train_seed, None if noise_in_training else 0.0)
    Y_test = measure(ensemble, X_test, test_seed)
    return Dataset(ensemble, X_train, Y_train, X_test, Y_test, name, noise_seed)


def load_signals(source: str, path=None, n: int | None = None, **kw) -> np.ndarray:
    """Signal rows from a directory of WAV or PNM files, ordered by path."""
    files = sorted(Path(path).iterdir())
    rows = []
    if source == "wav":
        for f in files:
            if f.suffix.lower() == ".wav":
                samples, _ = read_wav(f)
                rows.extend(audio_to_segments(samples, downsample=kw.get("downsample", "pair")))
    elif source == "pnm":
        for f in files:
            if f.suffix.lower() in (".pgm", ".ppm", ".pnm"):
                rows.append(image_to_vector(read_pnm(f)))
    else:
        raise InvalidArgumentError(f"unknown signal source {source!r}")
    if not rows:
        raise InvalidArgumentError(f"no {source} files found in {path}")
    dims = {r.shape[0] for r in rows}
    if len(dims) != 1:
        raise InvalidArgumentError(f"signals have differing dimensions {sorted(dims)}")
    return np.stack(rows)
