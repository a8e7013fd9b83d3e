"""Phase-locking connectivity and complete-graph assembly."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal

from .errors import LengthMismatch, TooShort

N_NODES = 14


def analytic_phase(series) -> np.ndarray:
    """Instantaneous phase of the FFT-built analytic signal, in (-pi, pi].

    An all-zero input yields all-zero phase.
    """
    x = np.asarray(series, dtype=np.float64)
    n = x.shape[-1]
    if n < 4:
        raise TooShort("analytic phase needs at least 4 samples")
    h = np.zeros(n)
    h[0] = 1.0
    if n % 2 == 0:
        h[n // 2] = 1.0
        h[1:n // 2] = 2.0
    else:
        h[1:(n + 1) // 2] = 2.0
    z = np.fft.ifft(np.fft.fft(x, axis=-1) * h, axis=-1)
    phase = np.angle(z)
    phase[phase <= -np.pi] = np.pi
    return phase


def plv(phase_a, phase_b) -> float:
    a = np.asarray(phase_a, dtype=np.float64)
    b = np.asarray(phase_b, dtype=np.float64)
    if a.shape != b.shape:
        raise LengthMismatch(f"phase lengths differ: {a.shape} vs {b.shape}")
    if a.size == 0:
        raise LengthMismatch("empty phase vectors")
    d = a - b
    value = np.hypot(np.mean(np.cos(d)), np.mean(np.sin(d)))
    return float(min(value, 1.0))


def complete_edges(n: int = N_NODES) -> np.ndarray:
    """(2, n*n) [source; target] index pairs, grouped by target, self-loops included."""
    target = np.repeat(np.arange(n), n)
    source = np.tile(np.arange(n), n)
    return np.stack([source, target])


@dataclass
class GraphSample:
    node_features: np.ndarray = field(repr=False)
    plv: np.ndarray = field(repr=False)
    label: int | None
    subject_id: str
    index: int = 0

    @property
    def n_nodes(self) -> int:
        return self.node_features.shape[0]

    @property
    def edges(self) -> np.ndarray:
        return complete_edges(self.n_nodes)

    @property
    def edge_attr(self) -> np.ndarray:
        src, dst = self.edges
        return self.plv[dst, src]

    def with_features(self, node_features) -> "GraphSample":
        return GraphSample(node_features, self.plv, self.label, self.subject_id, self.index)

    def permuted(self, perm) -> "GraphSample":
        """Relabel nodes so that new node k is old node perm[k]."""
        perm = np.asarray(perm)
        return GraphSample(self.node_features[perm], self.plv[np.ix_(perm, perm)],
                           self.label, self.subject_id, self.index)

    def to_dict(self) -> dict:
        return {
            "subject_id": self.subject_id,
            "index": int(self.index),
            "label": None if self.label is None else int(self.label),
            "node_features": self.node_features.tolist(),
            "plv": self.plv.tolist(),
        }

    @classmethod
    def from_dict(cls, d) -> "GraphSample":
        return cls(np.asarray(d["node_features"], dtype=np.float64),
                   np.asarray(d["plv"], dtype=np.float64),
                   d["label"], d["subject_id"], d.get("index", 0))


def plv_matrix(data: np.ndarray) -> np.ndarray:
    """Symmetric PLV matrix of the columns of ``data``; one plv() per unordered pair."""
    n_ch = data.shape[1]
    phases = [analytic_phase(data[:, i]) for i in range(n_ch)]
    m = np.eye(n_ch)
    for i in range(n_ch):
        for j in range(i + 1, n_ch):
            m[i, j] = m[j, i] = plv(phases[i], phases[j])
    return m


def build_graph(window, features: np.ndarray, band=None, fs: float = 128.0) -> GraphSample:
    """Complete weighted graph of one window; ``band`` optionally narrows the
    signal before phase extraction."""
    data = window.data
    if band is not None:
        sos = signal.butter(4, band, btype="bandpass", fs=fs, output="sos")
        data = signal.sosfiltfilt(sos, data, axis=0)
    if features.shape[0] != data.shape[1]:
        raise LengthMismatch(
            f"{features.shape[0]} feature rows for {data.shape[1]} channels")
    return GraphSample(np.asarray(features, dtype=np.float64), plv_matrix(data),
                       window.label, window.subject_id, window.index)


def save_graphs(samples, path) -> None:
    """One JSON array per file, one object per window."""
    Path(path).write_text(json.dumps([s.to_dict() for s in samples]))


def load_graphs(path) -> list:
    return [GraphSample.from_dict(d) for d in json.loads(Path(path).read_text())]
