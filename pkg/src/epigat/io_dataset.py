"""Loading raw EEG recordings and manifests, plus a synthetic data generator."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DuplicateSubject,
    EmptyRecording,
    InvalidSpec,
    MalformedRow,
    MissingChannel,
    UnknownLabel,
)

CHANNELS = ("AF3", "F7", "F3", "FC5", "T7", "P7", "O1",
            "O2", "P8", "T8", "FC6", "F4", "F8", "AF4")
LABELS = ("control", "epilepsy")
COUPLED_CHANNELS = ("AF3", "AF4", "F3", "F4", "FC5", "FC6")
FS = 128.0
MANIFEST_COLUMNS = ("subject_id", "file", "label", "country", "protocol")


@dataclass(frozen=True)
class Recording:
    subject_id: str
    channels: tuple
    data: np.ndarray = field(repr=False)
    fs: float

    def __post_init__(self):
        if not self.fs > 0:
            raise InvalidSpec(f"sampling rate must be positive, got {self.fs}")
        if self.data.ndim != 2 or self.data.shape[1] != len(self.channels):
            raise InvalidSpec(
                f"data shape {self.data.shape} does not match {len(self.channels)} channels")

    @property
    def n_samples(self) -> int:
        return self.data.shape[0]

    @property
    def duration(self) -> float:
        return self.n_samples / self.fs

    def with_data(self, data: np.ndarray) -> "Recording":
        return Recording(self.subject_id, self.channels, data, self.fs)


@dataclass(frozen=True)
class ManifestEntry:
    subject_id: str
    file: str
    label: str
    country: str = ""
    protocol: str = ""

    @property
    def y(self) -> int:
        return LABELS.index(self.label)


@dataclass
class DatasetManifest:
    entries: list

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def labels(self) -> dict:
        return {e.subject_id: e.label for e in self.entries}

    def validate_files(self, root=None):
        for e in self.entries:
            p = Path(e.file)
            if root is not None and not p.is_absolute():
                p = Path(root) / p
            if not p.exists():
                raise FileNotFoundError(f"{e.subject_id}: recording file {p} not found")


def load_recording(path, fs_expected: float = FS, subject_id: str | None = None) -> Recording:
    """Read one headered CSV recording and select the 14 canonical channels by name.

    Extra columns (gyro, contact quality, timestamps) are ignored. Non-numeric
    or non-finite cells in a selected column raise ``MalformedRow`` with the
    1-based file line number.
    """
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise EmptyRecording(f"{path}: empty file") from None
        index = {}
        for i, name in enumerate(header):
            index.setdefault(name, i)
        for ch in CHANNELS:
            if ch not in index:
                raise MissingChannel(ch)
        cols = [index[ch] for ch in CHANNELS]
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                vals = [float(row[c]) for c in cols]
            except (ValueError, IndexError) as exc:
                raise MalformedRow(lineno, str(exc)) from None
            if not all(math.isfinite(v) for v in vals):
                raise MalformedRow(lineno, "non-finite sample")
            rows.append(vals)
    if not rows:
        raise EmptyRecording(f"{path}: no samples")
    sid = subject_id if subject_id is not None else path.stem
    return Recording(sid, CHANNELS, np.asarray(rows, dtype=np.float64), float(fs_expected))


def write_recording(rec: Recording, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(rec.channels)
        for row in rec.data:
            w.writerow([repr(float(v)) for v in row])


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in MANIFEST_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise InvalidSpec(f"{path}: manifest lacks columns {missing}")
        entries, seen = [], set()
        for row in reader:
            sid = row["subject_id"].strip()
            label = row["label"].strip()
            if label not in LABELS:
                raise UnknownLabel(label)
            if sid in seen:
                raise DuplicateSubject(sid)
            seen.add(sid)
            entries.append(ManifestEntry(sid, row["file"].strip(), label,
                                         row["country"].strip(), row["protocol"].strip()))
    return DatasetManifest(entries)


def write_manifest(manifest: DatasetManifest, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(MANIFEST_COLUMNS)
        for e in manifest:
            w.writerow([e.subject_id, e.file, e.label, e.country, e.protocol])


# Synthetic generator -------------------------------------------------------

# (low, high) Hz ranges for the per-channel carrier frequency of each rhythm
_RHYTHMS = ((1.0, 3.5), (4.5, 7.5), (8.5, 11.5), (13.0, 25.0))
_AMPLITUDES = np.array([20.0, 12.0, 15.0, 6.0])
_PHASE_DIFFUSION = 0.05  # rad per sample, random-walk step std
_NOISE_STD = 4.0


def _oscillator(rng, n, fs):
    """One channel's worth of band-limited rhythms with diffusing phase."""
    t = np.arange(n) / fs
    gain = rng.uniform(0.8, 1.2)
    x = np.zeros(n)
    for (lo, hi), amp in zip(_RHYTHMS, _AMPLITUDES):
        f = rng.uniform(lo, hi)
        walk = np.cumsum(rng.normal(0.0, _PHASE_DIFFUSION, n))
        x += amp * np.sin(2 * np.pi * f * t + rng.uniform(-np.pi, np.pi) + walk)
    return gain * x


def synthetic_recording(subject_id, coupling, rng, duration_s=60.0, fs=FS,
                        coupled=COUPLED_CHANNELS) -> Recording:
    """Generate one recording; ``coupling`` in [0, 1] is the share of power that
    the coupled channels draw from a common oscillator."""
    n = int(round(duration_s * fs))
    common = _oscillator(rng, n, fs)
    own = np.stack([_oscillator(rng, n, fs) for _ in CHANNELS], axis=1)
    data = own.copy()
    a, b = math.sqrt(1.0 - coupling), math.sqrt(coupling)
    for ch in coupled:
        i = CHANNELS.index(ch)
        data[:, i] = a * own[:, i] + b * common
    data += rng.normal(0.0, _NOISE_STD, data.shape)
    return Recording(subject_id, CHANNELS, data, float(fs))


def generate_synthetic_dataset(n_subjects: int, class_effect: float, seed: int,
                               duration_s: float = 60.0, fs: float = FS):
    """Balanced control/epilepsy dataset whose class signal is phase coupling.

    Epilepsy subjects mix a shared oscillator into the fronto-temporal channels
    with power share ``class_effect``; controls use no shared oscillator. Each
    subject draws from its own seed stream, so output depends only on the
    arguments.
    """
    if n_subjects < 2 or n_subjects % 2:
        raise InvalidSpec(f"n_subjects must be an even number >= 2, got {n_subjects}")
    if not 0.0 <= class_effect <= 1.0:
        raise InvalidSpec(f"class_effect must lie in [0, 1], got {class_effect}")
    recordings, entries = [], []
    width = max(2, len(str(n_subjects - 1)))
    for k in range(n_subjects):
        sid = f"s{k:0{width}d}"
        label = LABELS[k % 2]
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(k,)))
        coupling = class_effect if label == "epilepsy" else 0.0
        recordings.append(synthetic_recording(sid, coupling, rng, duration_s, fs))
        entries.append(ManifestEntry(sid, f"{sid}.csv", label, "synthetic", "resting"))
    return recordings, DatasetManifest(entries)
