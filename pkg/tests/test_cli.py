import csv
import json

import pytest

from epigat.cli import EXIT_CONFIG, EXIT_DATA, EXIT_OK, build_parser, config_from_args, main
from epigat.config import build_config, env_overrides, read_config_file
from epigat.errors import ConfigError

TINY = """
synth.n_subjects = 4
synth.duration_s = 20
train.iterations = 2
forest.n_trees = 5
gat.hidden = 8
gat.heads = 2
gcn.hidden = 8
ica.enabled = false
"""


@pytest.fixture
def workdir(tmp_path):
    (tmp_path / "cfg.txt").write_text(TINY)
    return tmp_path


def _run(workdir, *args):
    return main([*args, "--config", str(workdir / "cfg.txt"),
                 "--data-dir", str(workdir / "data"), "--output-dir", str(workdir / "out")],
                environ={})


def test_synth_all_and_rerun_determinism(workdir):
    assert _run(workdir, "synth") == EXIT_OK
    assert _run(workdir, "all") == EXIT_OK
    out = workdir / "out"
    first = {n: (out / f"metrics_{n}.json").read_bytes() for n in ("rf", "gcn", "gat")}
    report = json.loads(first["gat"])
    assert set(report) == {"classifier", "dataset", "subject_level", "window_level"}
    assert set(report["subject_level"]["per_class"]) == {"control", "epilepsy"}
    with open(out / "subject_scores.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["subject_id", "label", "score_rf", "score_gcn", "score_gat"]
    assert len(rows) == 5
    delong = json.loads((out / "delong.json").read_text())
    assert set(delong["pairs"]) == {"rf_vs_gcn", "rf_vs_gat", "gcn_vs_gat"}
    assert (out / "connectome_gat.svg").exists()
    manifest = json.loads((out / "run_manifest_loocv.json").read_text())
    assert manifest["seed"] == 0 and len(manifest["inputs"]) == 5
    assert all(len(h) == 64 for h in manifest["inputs"].values())
    assert _run(workdir, "loocv") == EXIT_OK
    for n, blob in first.items():
        assert (out / f"metrics_{n}.json").read_bytes() == blob


def test_train_then_explain(workdir):
    assert _run(workdir, "synth") == EXIT_OK
    assert _run(workdir, "preprocess") == EXIT_OK
    assert _run(workdir, "featurize") == EXIT_OK
    assert _run(workdir, "train", "--classifiers", "gat") == EXIT_OK
    assert _run(workdir, "explain", "--top-k", "3") == EXIT_OK
    svg = (workdir / "out" / "connectome_gat_train.svg").read_text()
    assert svg.count('class="edge"') == 3


def test_gat_only_builds_no_other_models(workdir, monkeypatch):
    import epigat.training as tr
    assert _run(workdir, "synth") == EXIT_OK
    assert _run(workdir, "preprocess") == EXIT_OK
    assert _run(workdir, "featurize") == EXIT_OK
    built = []
    real = tr.init_params
    monkeypatch.setattr(tr, "init_params", lambda s, c: built.append(type(c).__name__) or real(s, c))
    monkeypatch.setattr(tr, "rf_train", lambda *a, **k: pytest.fail("RF constructed"))
    assert _run(workdir, "loocv", "--classifiers", "gat") == EXIT_OK
    assert set(built) == {"GatConfig"}
    assert not (workdir / "out" / "metrics_rf.json").exists()


def test_unknown_key_exit_2(workdir):
    assert main(["loocv", "--set", "gat.bogus=1"], environ={}) == EXIT_CONFIG
    (workdir / "bad.txt").write_text("nonsense.key = 3\n")
    assert main(["synth", "--config", str(workdir / "bad.txt")], environ={}) == EXIT_CONFIG


def test_out_of_grid_value_exit_2():
    assert main(["synth", "--set", "gat.hidden=12"], environ={}) == EXIT_CONFIG
    assert main(["synth", "--top-k", "92"], environ={}) == EXIT_CONFIG
    assert main(["bogus-command"], environ={}) == EXIT_CONFIG


def test_missing_inputs_exit_3(tmp_path):
    assert main(["loocv", "--data-dir", str(tmp_path / "none"),
                 "--output-dir", str(tmp_path / "o")], environ={}) == EXIT_DATA


def test_precedence_flags_env_file(tmp_path):
    f = tmp_path / "c.txt"
    f.write_text("seed = 1\ntrain.lr = 0.01\ngat.heads = 4  # trailing comment\n")
    assert read_config_file(f) == {"seed": 1, "train.lr": 0.01, "gat.heads": 4}
    args = build_parser().parse_args(["loocv", "--config", str(f), "--seed", "3"])
    env = {"EPIGAT_TRAIN__LR": "0.02", "EPIGAT_GAT__HEADS": "8", "OTHER": "x"}
    cfg = config_from_args(args, env)
    assert cfg.seed == 3
    assert cfg.train.lr == 0.02
    assert cfg.gat.heads == 8
    assert env_overrides(env) == {"train.lr": 0.02, "gat.heads": 8}


def test_aliases_and_defaults():
    cfg = build_config({"filter.low_hz": 1.0, "window.overlap_s": 2})
    assert cfg.preprocess.low_hz == 1.0 and cfg.preprocess.overlap_s == 2.0
    d = build_config()
    assert (d.gat.heads, d.gat.hidden, d.gat.layers) == (6, 32, 2)
    assert (d.train.lr, d.train.weight_decay, d.train.iterations) == (1e-3, 5.8e-3, 400)
    assert d.train.early_stop_patience == 10


@pytest.mark.parametrize("layer", [{"gat.heads": 3}, {"gat.dropout": 0.3}, {"gat.layers": 4},
                                   {"train.val_fraction": 0.7}, {"classifiers": ["svm"]},
                                   {"train.lr": "fast"}, {"unknown": 1}])
def test_invalid_values(layer):
    with pytest.raises(ConfigError):
        build_config(layer)
