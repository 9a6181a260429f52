"""Magnitude spectrograms for inspecting audio reconstructions."""

import numpy as np
import scipy.signal

from dadnet.errors import InvalidArgumentError

N_FFT = 1024
HOP = 256
WINDOW = "hann"
DB_FLOOR = -100.0


def spectrogram(signal, n_fft: int = N_FFT, hop: int = HOP, window: str = WINDOW) -> np.ndarray:
    """Short-time magnitude spectrum in dB, shape ``(frames, n_fft // 2 + 1)``.

    Frames start every ``hop`` samples with no padding, so a signal of length
    ``len`` yields ``1 + (len - n_fft) // hop`` frames. Magnitudes below the
    -100 dB floor are clamped to it.
    """
    x = np.asarray(signal, dtype=np.float64).reshape(-1)
    if n_fft < 2 or hop < 1:
        raise InvalidArgumentError("n_fft must be >= 2 and hop >= 1")
    if x.size < n_fft:
        raise InvalidArgumentError(f"signal of length {x.size} is shorter than n_fft={n_fft}")
    win = scipy.signal.get_window(window, n_fft)
    frames = np.lib.stride_tricks.sliding_window_view(x, n_fft)[::hop]
    mag = np.abs(np.fft.rfft(frames * win, axis=1))
    with np.errstate(divide="ignore"):
        db = 20.0 * np.log10(mag)
    return np.maximum(db, DB_FLOOR)
