"""Recording -> window -> graph assembly shared by the CLI and the demos."""
from __future__ import annotations

from .config import FeatureConfig, PreprocessConfig
from .connectivity import build_graph
from .features import node_features
from .preprocess import preprocess_recording


def featurize(windows, fcfg: FeatureConfig | None = None, fs=128.0) -> list:
    fcfg = fcfg or FeatureConfig()
    band = tuple(fcfg.plv_band) if fcfg.plv_band else None
    return [build_graph(w, node_features(w, fs, fcfg.window_fn), band=band, fs=fs)
            for w in windows]


def recording_to_graphs(rec, label, pcfg: PreprocessConfig | None = None,
                        fcfg: FeatureConfig | None = None) -> list:
    windows = preprocess_recording(rec, pcfg or PreprocessConfig(), label)
    return featurize(windows, fcfg, rec.fs)


def build_dataset(recordings, labels, pcfg=None, fcfg=None) -> dict:
    """{subject_id: [GraphSample, ...]} with un-normalised node features.

    ``labels`` maps subject id to 0/1 or to a 'control'/'epilepsy' string.
    """
    from .io_dataset import LABELS

    out = {}
    for rec in recordings:
        y = labels[rec.subject_id]
        y = LABELS.index(y) if isinstance(y, str) else int(y)
        out[rec.subject_id] = recording_to_graphs(rec, y, pcfg, fcfg)
    return out
