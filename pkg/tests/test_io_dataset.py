import csv
import itertools

import numpy as np
import pytest
from scipy.signal import hilbert

from epigat.errors import (DuplicateSubject, EmptyRecording, InvalidSpec, MalformedRow,
                           MissingChannel, UnknownLabel)
from epigat.io_dataset import (CHANNELS, COUPLED_CHANNELS, DatasetManifest, ManifestEntry,
                               generate_synthetic_dataset, load_manifest, load_recording,
                               write_manifest, write_recording)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def test_extra_columns_are_dropped_and_order_is_canonical(tmp_path, rng):
    extras = ["COUNTER", "GYROX", "GYROY", "TIMESTAMP", "QUALITY", "MARKER"]
    header = list(reversed(CHANNELS)) + extras
    data = rng.normal(size=(50, len(header)))
    _write_csv(tmp_path / "r.csv", header, data.tolist())
    rec = load_recording(tmp_path / "r.csv", 128.0)
    assert len(header) == 20
    assert rec.channels == CHANNELS
    assert rec.data.shape == (50, 14)
    expected = data[:, [header.index(c) for c in CHANNELS]]
    np.testing.assert_array_equal(rec.data, expected)
    assert rec.fs == 128.0


def test_missing_channel(tmp_path):
    header = [c for c in CHANNELS if c != "FC6"]
    _write_csv(tmp_path / "r.csv", header, [[0.0] * 13])
    with pytest.raises(MissingChannel) as exc:
        load_recording(tmp_path / "r.csv")
    assert exc.value.name == "FC6"


@pytest.mark.parametrize("bad", ["abc", "nan", "inf"])
def test_malformed_rows_report_line(tmp_path, bad):
    rows = [[1.0] * 14, [1.0] * 14]
    rows[1][3] = bad
    _write_csv(tmp_path / "r.csv", CHANNELS, rows)
    with pytest.raises(MalformedRow) as exc:
        load_recording(tmp_path / "r.csv")
    assert exc.value.line == 3


def test_empty_recording(tmp_path):
    _write_csv(tmp_path / "r.csv", CHANNELS, [])
    with pytest.raises(EmptyRecording):
        load_recording(tmp_path / "r.csv")


def test_300s_roundtrip_sample_count(tmp_path):
    recs, _ = generate_synthetic_dataset(2, 0.5, seed=1, duration_s=300)
    write_recording(recs[0], tmp_path / "s.csv")
    rec = load_recording(tmp_path / "s.csv", 128.0)
    assert rec.n_samples == 300 * 128
    np.testing.assert_array_equal(rec.data, recs[0].data)


@pytest.mark.parametrize("seed", range(3))
def test_column_order_does_not_matter(tmp_path, seed):
    r = np.random.default_rng(seed)
    header = list(CHANNELS) + ["GYROX"]
    data = r.normal(size=(20, len(header)))
    _write_csv(tmp_path / "a.csv", header, data.tolist())
    perm = r.permutation(len(header))
    _write_csv(tmp_path / "b.csv", [header[i] for i in perm], data[:, perm].tolist())
    a = load_recording(tmp_path / "a.csv")
    b = load_recording(tmp_path / "b.csv")
    np.testing.assert_array_equal(a.data, b.data)


def _manifest(path, rows):
    _write_csv(path, ["subject_id", "file", "label", "country", "protocol"], rows)


def test_manifest_valid(tmp_path):
    _manifest(tmp_path / "m.csv", [["s01", "s01.csv", "control", "GB", "open"],
                                   ["s02", "s02.csv", "epilepsy", "NG", "closed"]])
    m = load_manifest(tmp_path / "m.csv")
    assert len(m) == 2
    assert [e.y for e in m] == [0, 1]


def test_manifest_duplicate(tmp_path):
    _manifest(tmp_path / "m.csv", [["s01", "a.csv", "control", "", ""],
                                   ["s01", "b.csv", "epilepsy", "", ""]])
    with pytest.raises(DuplicateSubject) as exc:
        load_manifest(tmp_path / "m.csv")
    assert exc.value.subject_id == "s01"


def test_manifest_unknown_label(tmp_path):
    _manifest(tmp_path / "m.csv", [["s01", "a.csv", "unknown", "", ""]])
    with pytest.raises(UnknownLabel) as exc:
        load_manifest(tmp_path / "m.csv")
    assert exc.value.value == "unknown"


def test_manifest_roundtrip_and_file_check(tmp_path):
    m = DatasetManifest([ManifestEntry("a", "a.csv", "control", "x", "y")])
    write_manifest(m, tmp_path / "m.csv")
    assert load_manifest(tmp_path / "m.csv").entries == m.entries
    with pytest.raises(FileNotFoundError):
        m.validate_files(tmp_path)


# Generator -------------------------------------------------------------------

def _oracle_plv(x, y):
    """PLV via scipy's Hilbert transform, independent of epigat.connectivity."""
    d = np.angle(hilbert(x)) - np.angle(hilbert(y))
    return np.abs(np.mean(np.exp(1j * d)))


def _coupled_pair_plv(recordings, manifest, label, n_windows=100):
    idx = [CHANNELS.index(c) for c in COUPLED_CHANNELS]
    pairs = list(itertools.combinations(idx, 2))
    vals = []
    for rec, e in zip(recordings, manifest):
        if e.label != label:
            continue
        for start in range(0, rec.n_samples - 640 + 1, 512):
            w = rec.data[start:start + 640]
            vals.append(np.mean([_oracle_plv(w[:, i], w[:, j]) for i, j in pairs]))
    assert len(vals) >= n_windows
    return np.mean(vals[:n_windows])


def test_generator_without_effect_is_indistinguishable():
    recs, man = generate_synthetic_dataset(4, 0.0, seed=7, duration_s=300)
    diff = _coupled_pair_plv(recs, man, "epilepsy") - _coupled_pair_plv(recs, man, "control")
    assert abs(diff) < 0.05


def test_generator_effect_raises_coupled_plv():
    recs, man = generate_synthetic_dataset(4, 0.8, seed=7, duration_s=300)
    diff = _coupled_pair_plv(recs, man, "epilepsy") - _coupled_pair_plv(recs, man, "control")
    assert diff >= 0.3


def test_generator_is_deterministic():
    a, ma = generate_synthetic_dataset(4, 0.8, seed=7, duration_s=20)
    b, mb = generate_synthetic_dataset(4, 0.8, seed=7, duration_s=20)
    for x, y in zip(a, b):
        assert x.data.tobytes() == y.data.tobytes()
    assert ma.entries == mb.entries
    c, _ = generate_synthetic_dataset(4, 0.8, seed=8, duration_s=20)
    assert not np.array_equal(a[0].data, c[0].data)


def test_generator_balanced_labels():
    _, man = generate_synthetic_dataset(6, 0.5, seed=0, duration_s=10)
    labels = [e.label for e in man]
    assert labels.count("control") == labels.count("epilepsy") == 3


@pytest.mark.parametrize("n", [0, 1, 3])
def test_generator_invalid(n):
    with pytest.raises(InvalidSpec):
        generate_synthetic_dataset(n, 0.5, seed=0)
