"""Band-pass filtering, FastICA cleaning and windowing of recordings."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import signal, stats

from .errors import InvalidBand, InvalidSpec, NoConvergence, TooShort
from .io_dataset import Recording

log = logging.getLogger(__name__)

FILTER_ORDER = 4
KURTOSIS_REJECT = 5.0


@dataclass(frozen=True)
class Window:
    subject_id: str
    index: int
    data: np.ndarray = field(repr=False)
    label: int | None = None


def bandpass_filter(rec: Recording, low: float, high: float) -> Recording:
    """Zero-phase 4th-order Butterworth band-pass, applied per channel."""
    nyq = rec.fs / 2.0
    if not 0 < low < high < nyq:
        raise InvalidBand(f"need 0 < low < high < {nyq}, got ({low}, {high})")
    sos = signal.butter(FILTER_ORDER, [low, high], btype="bandpass", fs=rec.fs, output="sos")
    # sosfiltfilt needs more samples than its default odd-extension pad
    padlen = min(3 * (2 * len(sos) + 1), rec.n_samples - 1)
    out = signal.sosfiltfilt(sos, rec.data, axis=0, padlen=padlen)
    return rec.with_data(np.ascontiguousarray(out))


@dataclass
class ICAResult:
    sources: np.ndarray      # (n_samples, k) unit-variance components
    unmixing: np.ndarray     # (k, k) orthogonal rotation of the whitened data
    whitening: np.ndarray    # (n_channels, k) maps centred data to whitened data
    dewhitening: np.ndarray  # (k, n_channels) maps whitened data back
    mean: np.ndarray
    n_iter: int

    @property
    def mixing(self) -> np.ndarray:
        """(k, n_channels) map from sources to centred channel data."""
        return self.unmixing @ self.dewhitening


def _sym_decorrelate(w):
    s, u = np.linalg.eigh(w @ w.T)
    s = np.clip(s, np.finfo(float).tiny, None)
    return (u * (1.0 / np.sqrt(s))) @ u.T @ w


def fast_ica(x: np.ndarray, n_components: int, seed: int = 0,
             tol: float = 1e-4, max_iter: int = 500) -> ICAResult:
    """Symmetric FastICA with the tanh (logcosh) contrast on PCA-whitened data."""
    n, c = x.shape
    if not 1 <= n_components <= c:
        raise InvalidSpec(f"n_components must be in [1, {c}], got {n_components}")
    if n <= 2 * n_components:
        raise TooShort(f"{n} samples is too few for {n_components} components")
    mean = x.mean(axis=0)
    xc = x - mean
    _, s, vt = np.linalg.svd(xc, full_matrices=False)
    scale = s[:n_components] / np.sqrt(n)
    if np.any(scale <= 0):
        raise InvalidSpec("input rank is below n_components")
    whitening = vt[:n_components].T / scale
    dewhitening = scale[:, None] * vt[:n_components]
    z = xc @ whitening

    rng = np.random.default_rng(seed)
    w = _sym_decorrelate(rng.standard_normal((n_components, n_components)))
    for it in range(1, max_iter + 1):
        g = np.tanh(z @ w.T)
        w_new = (g.T @ z) / n - np.mean(1.0 - g * g, axis=0)[:, None] * w
        w_new = _sym_decorrelate(w_new)
        delta = np.max(np.abs(np.abs(np.einsum("ij,ij->i", w_new, w)) - 1.0))
        w = w_new
        if delta < tol:
            break
    else:
        raise NoConvergence(max_iter)
    return ICAResult(z @ w.T, w, whitening, dewhitening, mean, it)


def fast_ica_clean(rec: Recording, n_components: int = 10, reject: bool = False,
                   seed: int = 0, kurtosis_threshold: float = KURTOSIS_REJECT,
                   max_iter: int = 500) -> Recording:
    """Unmix with FastICA, optionally zero high-kurtosis components, and remix.

    With ``reject=False`` the result is the rank-``n_components`` PCA projection
    of the input, since the ICA rotation is orthogonal.
    """
    ica = fast_ica(rec.data, n_components, seed=seed, max_iter=max_iter)
    sources = ica.sources
    if reject:
        kurt = stats.kurtosis(sources, axis=0, fisher=True)
        sources = sources * (kurt <= kurtosis_threshold)
    return rec.with_data(ica.mean + sources @ ica.mixing)


def segment_windows(rec: Recording, win_len_s: float = 5.0, overlap_s: float = 1.0,
                    label: int | None = None) -> list:
    if not win_len_s > overlap_s >= 0:
        raise InvalidSpec(f"need win_len_s > overlap_s >= 0, got {win_len_s}, {overlap_s}")
    length = int(round(win_len_s * rec.fs))
    stride = int(round((win_len_s - overlap_s) * rec.fs))
    if rec.n_samples < length:
        raise TooShort(f"{rec.duration:.3f} s recording is shorter than one {win_len_s} s window")
    count = (rec.n_samples - length) // stride + 1
    return [Window(rec.subject_id, k, rec.data[k * stride:k * stride + length], label)
            for k in range(count)]


def preprocess_recording(rec: Recording, cfg, label: int | None = None) -> list:
    """Full per-recording chain: filter and ICA (order per config), trim filter
    edges, cut windows.

    If FastICA fails to converge and ``cfg.ica_on_failure`` is ``"skip"``, the
    recording continues without ICA cleaning and a warning is logged.
    """
    def _filter(r):
        return bandpass_filter(r, cfg.low_hz, cfg.high_hz)

    def _ica(r):
        if not cfg.ica_enabled:
            return r
        try:
            return fast_ica_clean(r, cfg.ica_components, cfg.ica_reject, seed=cfg.seed)
        except NoConvergence:
            if cfg.ica_on_failure == "error":
                raise
            log.warning("%s: FastICA did not converge; ICA cleaning skipped", r.subject_id)
            return r

    steps = (_ica, _filter) if cfg.ica_first else (_filter, _ica)
    for step in steps:
        rec = step(rec)
    trim = int(round(cfg.edge_trim_s * rec.fs))
    if trim:
        if rec.n_samples <= 2 * trim:
            raise TooShort("recording shorter than the filter edge trim")
        rec = rec.with_data(rec.data[trim:-trim])
    return segment_windows(rec, cfg.win_len_s, cfg.overlap_s, label)
