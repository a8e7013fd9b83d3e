"""Command-line driver: ``epigat <subcommand> [flags]``.

Subcommands
    synth       write a labelled synthetic dataset (CSV recordings + manifest)
    preprocess  recordings -> filtered, ICA-cleaned 5 s windows (.npz per subject)
    featurize   windows -> GraphSample JSON per subject
    train       single stratified train/validation/test split for GAT and GCN
    loocv       leave-one-subject-out evaluation of RF, GCN and GAT with DeLong
    explain     attention and Grad-CAM exports for a model saved by ``train``
    all         preprocess, featurize and loocv in one go

Exit codes
    0  success
    2  configuration or usage error
    3  input data error (missing files, malformed CSV, bad manifest)
    4  pipeline error (numerical or split problem, e.g. single-class fold)
    1  anything else
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from dataclasses import replace
from itertools import combinations
from pathlib import Path

import numpy as np

from . import __version__
from .config import build_config, env_overrides, read_config_file
from .connectivity import load_graphs, save_graphs
from .errors import ConfigError, DataError, DegenerateVariance, EpiGatError, SingleClass
from .io_dataset import (LABELS, generate_synthetic_dataset, load_manifest, load_recording,
                         write_manifest, write_recording)
from .metrics import compute_metrics, delong_test

log = logging.getLogger("epigat")

EXIT_OK, EXIT_INTERNAL, EXIT_CONFIG, EXIT_DATA, EXIT_PIPELINE = 0, 1, 2, 3, 4


# Helpers --------------------------------------------------------------------

def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _dump(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_run_manifest(out_dir, command, cfg, inputs):
    """Config echo, root seed and content hashes of every input file."""
    inputs = sorted({str(p) for p in inputs})
    _dump(Path(out_dir) / f"run_manifest_{command}.json", {
        "command": command,
        "version": __version__,
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "inputs": {p: _sha256(p) for p in inputs},
    })


def _labels01(manifest):
    return {e.subject_id: LABELS.index(e.label) for e in manifest}


def _paths(cfg):
    data = Path(cfg.data_dir)
    out = Path(cfg.output_dir)
    return data, data / cfg.manifest, out


def _arch_map(cfg):
    return {"gat": replace(cfg.gat), "gcn": replace(cfg.gcn)}


# Stages ---------------------------------------------------------------------

def cmd_synth(cfg):
    data, man_path, _ = _paths(cfg)
    s = cfg.synth
    recs, manifest = generate_synthetic_dataset(s.n_subjects, s.class_effect, cfg.seed,
                                                duration_s=s.duration_s)
    data.mkdir(parents=True, exist_ok=True)
    for rec, entry in zip(recs, manifest):
        write_recording(rec, data / entry.file)
    write_manifest(manifest, man_path)
    write_run_manifest(cfg.output_dir, "synth", cfg, [])
    log.info("wrote %d synthetic recordings to %s", len(recs), data)


def cmd_preprocess(cfg):
    from .preprocess import preprocess_recording

    data, man_path, out = _paths(cfg)
    manifest = load_manifest(man_path)
    manifest.validate_files(data)
    labels = _labels01(manifest)
    wdir = out / "windows"
    wdir.mkdir(parents=True, exist_ok=True)
    inputs = [man_path]
    pcfg = replace(cfg.preprocess, seed=cfg.seed)
    for e in manifest:
        path = data / e.file
        inputs.append(path)
        rec = load_recording(path, subject_id=e.subject_id)
        wins = preprocess_recording(rec, pcfg, labels[e.subject_id])
        np.savez(wdir / f"{e.subject_id}.npz", data=np.stack([w.data for w in wins]),
                 label=labels[e.subject_id], fs=rec.fs)
        log.info("%s: %d windows", e.subject_id, len(wins))
    write_run_manifest(out, "preprocess", cfg, inputs)


def cmd_featurize(cfg):
    from .pipeline import featurize
    from .preprocess import Window

    _, man_path, out = _paths(cfg)
    manifest = load_manifest(man_path)
    gdir = out / "graphs"
    gdir.mkdir(parents=True, exist_ok=True)
    inputs = []
    for e in manifest:
        path = out / "windows" / f"{e.subject_id}.npz"
        if not path.exists():
            raise FileNotFoundError(f"{path} missing; run 'preprocess' first")
        inputs.append(path)
        z = np.load(path)
        label = int(z["label"])
        wins = [Window(e.subject_id, k, d, label) for k, d in enumerate(z["data"])]
        save_graphs(featurize(wins, cfg.features, float(z["fs"])), gdir / f"{e.subject_id}.json")
    write_run_manifest(out, "featurize", cfg, inputs)


def _load_graph_dataset(cfg):
    _, man_path, out = _paths(cfg)
    manifest = load_manifest(man_path)
    dataset, inputs = {}, [man_path]
    for e in manifest:
        path = out / "graphs" / f"{e.subject_id}.json"
        if not path.exists():
            raise FileNotFoundError(f"{path} missing; run 'featurize' first")
        inputs.append(path)
        dataset[e.subject_id] = load_graphs(path)
    return dataset, _labels01(manifest), inputs


def _report_dict(name, dataset_name, reports):
    return {"classifier": name, "dataset": dataset_name,
            "subject_level": reports["subject"].to_dict(),
            "window_level": reports["window"].to_dict()}


def _delong_pairs(y, scores):
    out = {}
    for a, b in combinations([c for c in ("rf", "gcn", "gat") if c in scores], 2):
        key = f"{a}_vs_{b}"
        try:
            r = delong_test(y, scores[a], scores[b])
            out[key] = r.to_dict()
        except (DegenerateVariance, SingleClass) as exc:
            out[key] = {"error": type(exc).__name__, "detail": str(exc)}
    return out


def cmd_loocv(cfg):
    from .explain import EdgeImportance, NodeImportance, export_connectome
    from .training import loocv

    dataset, labels, inputs = _load_graph_dataset(cfg)
    out = Path(cfg.output_dir)
    clfs = list(cfg.classifiers)
    archs = {k: v for k, v in _arch_map(cfg).items() if k in clfs}
    res = loocv(dataset, labels, clfs, archs, cfg.train, cfg.forest, seed=cfg.seed,
                jobs=cfg.jobs, normalize=cfg.features.normalize, explain="gat" in clfs,
                correct_only=cfg.explain.correct_only)
    for name in clfs:
        _dump(out / f"metrics_{name}.json", _report_dict(name, cfg.dataset, res.reports[name]))
    y = res.subject_labels()
    scores = {name: res.scores(name) for name in clfs}
    with open(out / "subject_scores.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["subject_id", "label", "score_rf", "score_gcn", "score_gat"])
        for k, f in enumerate(res.folds):
            w.writerow([f.subject, f.label] + [repr(float(scores[c][k])) if c in scores else ""
                                               for c in ("rf", "gcn", "gat")])
    _dump(out / "delong.json", {"dataset": cfg.dataset, "level": "subject",
                                "pairs": _delong_pairs(y, scores)})
    _dump(out / "histories.json", {f.subject: f.histories for f in res.folds})
    if "gat" in clfs:
        folds = [f for f in res.folds if f.edge_importance is not None]
        if folds:
            m = np.mean([f.edge_importance for f in folds], axis=0)
            sl = np.mean([f.self_importance for f in folds], axis=0)
            ni = NodeImportance(np.mean([f.node_importance for f in folds], axis=0))
            # directed means are not kept per fold; the symmetric matrix stands in
            export_connectome(EdgeImportance(m, sl, m), ni, cfg.explain.top_k, out,
                              "connectome_gat")
    write_run_manifest(out, "loocv", cfg, inputs)
    for name in clfs:
        log.info("%s subject AUROC %s", name, res.reports[name]["subject"].auroc)
    return res


def cmd_train(cfg):
    from .features import apply_normalizer, fit_normalizer
    from .models import save_model
    from .training import fold_seeds, split_validation, train_model

    dataset, labels, inputs = _load_graph_dataset(cfg)
    out = Path(cfg.output_dir)
    seeds = fold_seeds(cfg.seed, 0)
    subjects = sorted(dataset)
    pool, test = split_validation(subjects, labels, cfg.train.val_fraction, seeds["split"])
    fit, val = split_validation(pool, labels, cfg.train.val_fraction, seeds["split"] + 1)

    def windows(ids):
        return [w for s in ids for w in dataset[s]]

    fit_w, val_w, test_w = windows(fit), windows(val), windows(test)
    if cfg.features.normalize:
        norm = fit_normalizer([w.node_features for w in fit_w])
        fit_w, val_w, test_w = ([w.with_features(apply_normalizer(norm, w.node_features))
                                 for w in ws] for ws in (fit_w, val_w, test_w))
        _dump(out / "models" / "normalizer.json",
              {"mean": norm.mean.tolist(), "std": norm.std.tolist()})
    split = {"fit": fit, "val": val, "test": test}
    _dump(out / "models" / "split.json", split)
    archs = _arch_map(cfg)
    for name in [c for c in cfg.classifiers if c in archs]:
        model, hist = train_model(fit_w, val_w, archs[name], cfg.train, seed=seeds[name])
        save_model(model, out / "models" / f"{name}.json")
        probs = model.predict_proba(test_w)[:, 1]
        wy = np.array([w.label for w in test_w])
        rep = compute_metrics(wy, (probs >= 0.5).astype(int), probs)
        _dump(out / f"train_metrics_{name}.json",
              {"classifier": name, "split": split, "window_level": rep.to_dict(),
               "history": hist.to_dict()})
    write_run_manifest(out, "train", cfg, inputs)


def cmd_explain(cfg):
    from .explain import edge_importance, export_connectome, node_importance
    from .features import Normalizer, apply_normalizer
    from .models import load_model

    dataset, _, inputs = _load_graph_dataset(cfg)
    out = Path(cfg.output_dir)
    mpath = out / "models" / "gat.json"
    if not mpath.exists():
        raise FileNotFoundError(f"{mpath} missing; run 'train' first")
    model = load_model(mpath)
    inputs.append(mpath)
    split = json.loads((out / "models" / "split.json").read_text())
    samples = [w for s in split["test"] for w in dataset[s]]
    npath = out / "models" / "normalizer.json"
    if npath.exists():
        d = json.loads(npath.read_text())
        norm = Normalizer(np.asarray(d["mean"]), np.asarray(d["std"]))
        samples = [w.with_features(apply_normalizer(norm, w.node_features)) for w in samples]
        inputs.append(npath)
    if cfg.explain.correct_only:
        probs = model.predict_proba(samples)[:, 1]
        samples = [w for w, p in zip(samples, probs) if (p >= 0.5) == (w.label == 1)]
    ei = edge_importance(model, samples)
    ni = node_importance(model, samples)
    export_connectome(ei, ni, cfg.explain.top_k, out, "connectome_gat_train")
    write_run_manifest(out, "explain", cfg, inputs)


def cmd_all(cfg):
    cmd_preprocess(cfg)
    cmd_featurize(cfg)
    return cmd_loocv(cfg)


COMMANDS = {"synth": cmd_synth, "preprocess": cmd_preprocess, "featurize": cmd_featurize,
            "train": cmd_train, "loocv": cmd_loocv, "explain": cmd_explain, "all": cmd_all}


# Argument handling ----------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat 'section.key = value' config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--jobs", type=int, help="parallel LOOCV folds")
    common.add_argument("--classifiers", help="comma list drawn from rf,gcn,gat")
    common.add_argument("--top-k", type=int, dest="top_k", help="edges drawn in connectome SVGs")
    common.add_argument("--data-dir", dest="data_dir")
    common.add_argument("--output-dir", dest="output_dir")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key; repeatable")
    common.add_argument("-v", "--verbose", action="store_true")
    p = argparse.ArgumentParser(prog="epigat", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"epigat {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=_first_line(name))
    return p


def _first_line(name):
    for line in __doc__.splitlines():
        if line.strip().startswith(name + " "):
            return line.strip()[len(name):].strip()
    return ""


def config_from_args(args, environ=None):
    from .config import parse_value

    layers = []
    if args.config:
        layers.append(read_config_file(args.config))
    layers.append(env_overrides(environ))
    flags = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        flags[k.strip()] = parse_value(v)
    if args.seed is not None:
        flags["seed"] = args.seed
    if args.jobs is not None:
        flags["jobs"] = args.jobs
    if args.classifiers:
        flags["classifiers"] = [c.strip() for c in args.classifiers.split(",") if c.strip()]
    if args.top_k is not None:
        flags["explain.top_k"] = args.top_k
    if args.data_dir:
        flags["data_dir"] = args.data_dir
    if args.output_dir:
        flags["output_dir"] = args.output_dir
    layers.append(flags)
    return build_config(*layers)


def main(argv=None, environ=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args, environ)
        COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except EpiGatError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_PIPELINE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
