"""Per-channel node features: Katz fractal dimension and band energies."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyTrainSet, InvalidBand, TooShort

BANDS = {
    "delta": (0.5, 4.0),
    "theta": (4.0, 8.0),
    "alpha": (8.0, 12.0),
    "beta": (12.0, 29.0),
}
FEATURE_NAMES = ("katz_fd", "E_delta", "E_theta", "E_alpha", "E_beta")


def katz_fd(series) -> float:
    """Katz fractal dimension with unit index spacing.

    Curve length and planar extent are measured on the points (i, x_i), so a
    straight line (including a constant series) has dimension exactly 1.
    """
    x = np.asarray(series, dtype=np.float64)
    if x.ndim != 1 or x.size < 2:
        raise TooShort("Katz FD needs at least 2 samples")
    n = x.size - 1
    if n == 1:
        return 1.0
    length = np.sum(np.hypot(1.0, np.diff(x)))
    extent = np.max(np.hypot(np.arange(1, x.size), x[1:] - x[0]))
    log_n = np.log10(n)
    return float(log_n / (log_n + np.log10(extent / length)))


def periodogram(x, fs: float, window: str = "hann"):
    """One-sided power spectrum normalised by the window's energy.

    Summing every bin returns sum((w*x)**2) / sum(w**2), the power of the
    windowed signal.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    if window == "hann":
        w = np.hanning(n + 1)[:-1]  # periodic Hann
    elif window == "rect":
        w = np.ones(n)
    else:
        raise ValueError(f"unknown window {window!r}")
    spec = np.fft.rfft(x * w, axis=-1)
    p = np.abs(spec) ** 2 / (n * np.sum(w * w))
    if n % 2 == 0:
        p[..., 1:-1] *= 2.0
    else:
        p[..., 1:] *= 2.0
    return np.fft.rfftfreq(n, 1.0 / fs), p


def band_energy(series, band, fs: float, window: str = "hann") -> float:
    low, high = band
    if not 0 <= low < high <= fs / 2:
        raise InvalidBand(f"band {band} outside [0, {fs / 2}]")
    x = np.asarray(series, dtype=np.float64)
    if x.size < fs:
        raise TooShort("band energy needs at least one second of signal")
    f, p = periodogram(x, fs, window)
    return float(np.sum(p[_band_mask(f, low, high, fs)]))


def _band_mask(f, low, high, fs):
    # half-open [low, high), closed at the Nyquist frequency
    upper = f <= high if high >= fs / 2 else f < high
    return (f >= low) & upper


def node_features(window, fs: float = 128.0, spectral_window: str = "hann") -> np.ndarray:
    """(n_channels, 5) matrix ordered as FEATURE_NAMES."""
    data = window.data if hasattr(window, "data") else np.asarray(window)
    n = data.shape[0]
    if n < fs:
        raise TooShort("window shorter than one second")
    out = np.empty((data.shape[1], len(FEATURE_NAMES)))
    for i in range(data.shape[1]):
        out[i, 0] = katz_fd(data[:, i])
    f, p = periodogram(data.T, fs, spectral_window)
    for k, (low, high) in enumerate(BANDS.values(), start=1):
        out[:, k] = p[:, _band_mask(f, low, high, fs)].sum(axis=1)
    return out


@dataclass(frozen=True)
class Normalizer:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, f: np.ndarray) -> np.ndarray:
        return (f - self.mean) / self.std


def fit_normalizer(train) -> Normalizer:
    """Per-feature z-score over every node row of every training matrix.

    Zero-variance features get mean 0 and std 1, i.e. they pass through as is.
    """
    mats = list(train)
    if not mats:
        raise EmptyTrainSet("cannot fit a normalizer on zero matrices")
    rows = np.concatenate([np.asarray(m, dtype=np.float64) for m in mats], axis=0)
    mean = rows.mean(axis=0)
    std = rows.std(axis=0)
    flat = ~(std > 0)
    mean = np.where(flat, 0.0, mean)
    std = np.where(flat, 1.0, std)
    return Normalizer(mean, std)


def apply_normalizer(norm: Normalizer, f) -> np.ndarray:
    return norm.apply(np.asarray(f, dtype=np.float64))
