"""Typed configuration sections and the flat ``key = value`` config format.

Grammar of a config file::

    # comment
    section.key = value

Values are parsed as JSON where possible (numbers, true/false, null, lists)
and fall back to bare strings. Precedence is flags > environment
(``EPIGAT_SECTION__KEY=value``) > file > defaults.
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .errors import ConfigError

ENV_PREFIX = "EPIGAT_"

HIDDEN_GRID = (8, 16, 32, 64)
HEADS_GRID = (2, 4, 6, 8)
DROPOUT_GRID = (0.0, 0.2, 0.5)
LAYERS_RANGE = (1, 3)


@dataclass(frozen=True)
class PreprocessConfig:
    low_hz: float = 0.5
    high_hz: float = 45.0
    ica_enabled: bool = True
    ica_components: int = 10
    ica_reject: bool = False
    ica_first: bool = False
    ica_on_failure: str = "skip"
    win_len_s: float = 5.0
    overlap_s: float = 1.0
    edge_trim_s: float = 1.0
    seed: int = 0


@dataclass(frozen=True)
class FeatureConfig:
    normalize: bool = True
    window_fn: str = "hann"
    plv_band: list | None = None


@dataclass(frozen=True)
class GatConfig:
    in_features: int = 5
    hidden: int = 32
    heads: int = 6
    layers: int = 2
    concat: bool = True
    mlp_hidden: int = 64
    dropout: float = 0.0
    negative_slope: float = 0.2
    out_channels: int = 2

    @property
    def width(self) -> int:
        return self.hidden * self.heads if self.concat else self.hidden


@dataclass(frozen=True)
class GcnConfig:
    in_features: int = 5
    hidden: int = 32
    layers: int = 4
    mlp_hidden: int = 64
    dropout: float = 0.0
    weighted: bool = True
    out_channels: int = 2


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    weight_decay: float = 5.8e-3
    iterations: int = 400
    early_stop_patience: int = 10
    batch_size: int = 64
    seed: int = 0
    val_fraction: float = 0.2
    aggregation: str = "mean"

    def __post_init__(self):
        if self.lr < 0 or self.weight_decay < 0:
            raise ConfigError("lr and weight_decay must be non-negative")
        if self.iterations < 1 or self.early_stop_patience < 1 or self.batch_size < 2:
            raise ConfigError("iterations, patience must be >= 1 and batch_size >= 2")
        if not 0 < self.val_fraction <= 0.5:
            raise ConfigError(f"val_fraction must be in (0, 0.5], got {self.val_fraction}")
        if self.aggregation not in ("mean", "vote"):
            raise ConfigError(f"aggregation must be 'mean' or 'vote', got {self.aggregation!r}")


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 500
    max_depth: int | None = None
    min_leaf: int = 1
    max_features: str | int = "sqrt"


@dataclass(frozen=True)
class ExplainConfig:
    top_k: int = 10
    correct_only: bool = False


@dataclass(frozen=True)
class SynthConfig:
    n_subjects: int = 12
    class_effect: float = 0.8
    duration_s: float = 60.0


@dataclass(frozen=True)
class PipelineConfig:
    data_dir: str = "data"
    manifest: str = "manifest.csv"
    output_dir: str = "out"
    dataset: str = "dataset"
    seed: int = 0
    jobs: int = 1
    classifiers: list = field(default_factory=lambda: ["rf", "gcn", "gat"])
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    gat: GatConfig = field(default_factory=GatConfig)
    gcn: GcnConfig = field(default_factory=GcnConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    forest: ForestConfig = field(default_factory=ForestConfig)
    explain: ExplainConfig = field(default_factory=ExplainConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)

    def to_dict(self) -> dict:
        return asdict(self)


_SECTIONS = {f.name for f in fields(PipelineConfig)
             if f.name in ("preprocess", "features", "gat", "gcn", "train",
                           "forest", "explain", "synth")}

# aliases matching the documented key names
_ALIASES = {
    "filter.low_hz": "preprocess.low_hz",
    "filter.high_hz": "preprocess.high_hz",
    "ica.enabled": "preprocess.ica_enabled",
    "ica.components": "preprocess.ica_components",
    "ica.reject": "preprocess.ica_reject",
    "ica.first": "preprocess.ica_first",
    "ica.on_failure": "preprocess.ica_on_failure",
    "window.len_s": "preprocess.win_len_s",
    "window.overlap_s": "preprocess.overlap_s",
    "window.edge_trim_s": "preprocess.edge_trim_s",
}


def parse_value(text: str):
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def read_config_file(path) -> dict:
    out = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        out[key.strip()] = parse_value(value)
    return out


def env_overrides(environ=None) -> dict:
    environ = os.environ if environ is None else environ
    out = {}
    for k, v in environ.items():
        if k.startswith(ENV_PREFIX):
            key = k[len(ENV_PREFIX):].lower().replace("__", ".")
            out[key] = parse_value(v)
    return out


def _coerce(name, typ, value):
    if typ in ("float", float) and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    checks = {
        "float": (int, float), "int": (int,), "bool": (bool,), "str": (str,),
    }
    want = checks.get(typ if isinstance(typ, str) else getattr(typ, "__name__", ""))
    if want and (not isinstance(value, want) or (typ in ("int", "float") and isinstance(value, bool))):
        raise ConfigError(f"{name}: expected {typ}, got {value!r}")
    return value


def build_config(*layers: dict) -> PipelineConfig:
    """Merge flat key dictionaries (later layers win) onto the defaults."""
    base = PipelineConfig()
    top, nested = {}, {s: {} for s in _SECTIONS}
    for layer in layers:
        for key, value in layer.items():
            key = _ALIASES.get(key, key)
            if "." in key:
                section, name = key.split(".", 1)
                if section not in _SECTIONS:
                    raise ConfigError(f"unknown config section in key {key!r}")
                sect_cls = type(getattr(base, section))
                known = {f.name: f.type for f in fields(sect_cls)}
                if name not in known:
                    raise ConfigError(f"unknown config key {key!r}")
                nested[section][name] = _coerce(key, known[name], value)
            else:
                known = {f.name: f.type for f in fields(PipelineConfig)}
                if key not in known or key in _SECTIONS:
                    raise ConfigError(f"unknown config key {key!r}")
                top[key] = _coerce(key, known[key], value)
    kwargs = dict(top)
    try:
        for section, values in nested.items():
            kwargs[section] = replace(getattr(base, section), **values)
        cfg = replace(base, **kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    validate(cfg)
    return cfg


def validate(cfg: PipelineConfig) -> None:
    g, c = cfg.gat, cfg.gcn
    if not LAYERS_RANGE[0] <= g.layers <= LAYERS_RANGE[1]:
        raise ConfigError(f"gat.layers must be in {LAYERS_RANGE}")
    if g.hidden not in HIDDEN_GRID or c.hidden not in HIDDEN_GRID:
        raise ConfigError(f"hidden widths must be one of {HIDDEN_GRID}")
    if g.heads not in HEADS_GRID:
        raise ConfigError(f"gat.heads must be one of {HEADS_GRID}")
    if g.dropout not in DROPOUT_GRID or c.dropout not in DROPOUT_GRID:
        raise ConfigError(f"dropout must be one of {DROPOUT_GRID}")
    if not 1 <= c.layers <= LAYERS_RANGE[1] + 2:
        raise ConfigError("gcn.layers must be in [1, 5]")
    if g.out_channels != 2 or c.out_channels != 2:
        raise ConfigError("only binary classification (out_channels = 2) is supported")
    if cfg.features.window_fn not in ("hann", "rect"):
        raise ConfigError("features.window_fn must be 'hann' or 'rect'")
    unknown = set(cfg.classifiers) - {"rf", "gcn", "gat"}
    if unknown or not cfg.classifiers:
        raise ConfigError(f"classifiers must be a non-empty subset of rf, gcn, gat; got {cfg.classifiers}")
    if cfg.jobs < 1:
        raise ConfigError("jobs must be >= 1")
    p = cfg.preprocess
    if not 0 < p.low_hz < p.high_hz:
        raise ConfigError("filter band must satisfy 0 < low_hz < high_hz")
    if p.ica_on_failure not in ("skip", "error"):
        raise ConfigError("ica.on_failure must be 'skip' or 'error'")
    if not 1 <= p.ica_components <= 14:
        raise ConfigError("ica.components must be in [1, 14]")
    if not p.win_len_s > p.overlap_s >= 0:
        raise ConfigError("window.len_s must exceed window.overlap_s >= 0")
    if cfg.explain.top_k < 0 or cfg.explain.top_k > 91:
        raise ConfigError("explain.top_k must be in [0, 91]")
    if cfg.synth.n_subjects < 2 or not 0 <= cfg.synth.class_effect <= 1:
        raise ConfigError("synth.n_subjects >= 2 and synth.class_effect in [0, 1] required")
