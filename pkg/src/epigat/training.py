"""Adam training, early stopping and leave-one-subject-out evaluation."""
from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .config import ForestConfig, GatConfig, GcnConfig, TrainConfig
from .errors import ClassMissing, EmptySplit, InvalidSpec, ShapeMismatch
from .features import apply_normalizer, fit_normalizer
from .forest import flatten_window_features, rf_predict_proba, rf_train
from .metrics import compute_metrics
from .models import GraphBatch, init_params

log = logging.getLogger(__name__)

BETA1, BETA2, ADAM_EPS = 0.9, 0.999, 1e-8


def adam_init(params):
    return {"m": {k: np.zeros_like(v) for k, v in params.items()},
            "v": {k: np.zeros_like(v) for k, v in params.items()}}


def adam_step(params, grads, state, t, cfg):
    """One Adam update with bias correction and decoupled weight decay.

    Decay is applied first as p <- p - lr*wd*p, then the adaptive step.
    Returns new (params, state); inputs are not modified.
    """
    if t < 1:
        raise ValueError("Adam step counter starts at 1")
    lr, wd = cfg.lr, cfg.weight_decay
    new_p, new_m, new_v = {}, {}, {}
    for k, p in params.items():
        g = grads.get(k)
        if g is None:
            g = np.zeros_like(p)
        if g.shape != p.shape:
            raise ShapeMismatch("adam_step", p.shape, g.shape)
        m = BETA1 * state["m"][k] + (1 - BETA1) * g
        v = BETA2 * state["v"][k] + (1 - BETA2) * g * g
        m_hat = m / (1 - BETA1 ** t)
        v_hat = v / (1 - BETA2 ** t)
        q = p - lr * wd * p
        new_p[k] = q - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
        new_m[k], new_v[k] = m, v
    return new_p, {"m": new_m, "v": new_v}


@dataclass
class History:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False

    def to_dict(self):
        return {"train_loss": self.train_loss, "val_loss": self.val_loss,
                "best_epoch": self.best_epoch, "stopped_early": self.stopped_early}


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    chunks = [order[i:i + batch_size] for i in range(0, n, batch_size)]
    # batch norm needs at least two graphs per batch
    if len(chunks) > 1 and chunks[-1].size < 2:
        chunks[-2] = np.concatenate([chunks[-2], chunks.pop()])
    return chunks


def evaluate_loss(model, samples, batch_size=256) -> float:
    total, n = 0.0, 0
    for i in range(0, len(samples), batch_size):
        b = GraphBatch(samples[i:i + batch_size])
        out = model.forward(b, training=False)
        total += float(ad.nll_loss(out.log_probs, b.labels).value) * b.n_graphs
        n += b.n_graphs
    return total / n


def train_model(train, val, arch, cfg: TrainConfig, seed=None):
    """Minimise NLL with Adam; keep the parameters with the lowest validation loss.

    ``val`` may be empty, in which case the final parameters are returned and
    no early stopping applies. Returns (model, History).
    """
    train = list(train)
    val = list(val)
    if len(train) < 2:
        raise EmptySplit("training split needs at least two windows")
    seed = cfg.seed if seed is None else seed
    ss = np.random.SeedSequence(seed)
    init_seed, shuffle_seed, drop_seed = (int(s.generate_state(1)[0]) for s in ss.spawn(3))
    model = init_params(init_seed, arch)
    rng = np.random.default_rng(shuffle_seed)
    drop_rng = np.random.default_rng(drop_seed)
    labels = np.array([s.label for s in train])
    opt = adam_init(model.params)
    hist = History()
    best, best_loss, stale, step = None, np.inf, 0, 0
    for epoch in range(cfg.iterations):
        total = 0.0
        for idx in _batches(len(train), cfg.batch_size, rng):
            batch = GraphBatch([train[i] for i in idx])
            params = model.param_tensors(track=True)
            with ad.Tape() as tape:
                out = model.forward(batch, training=True, params=params, rng=drop_rng)
                loss = ad.nll_loss(out.log_probs, labels[idx])
            grads = ad.backward(tape, loss)
            step += 1
            model.params, opt = adam_step(
                model.params, {k: grads[t] for k, t in params.items()}, opt, step, cfg)
            total += float(loss.value) * idx.size
        hist.train_loss.append(total / len(train))
        if val:
            vl = evaluate_loss(model, val)
            hist.val_loss.append(vl)
            if vl < best_loss:
                best_loss, best, stale = vl, model.state(), 0
                hist.best_epoch = epoch
            else:
                stale += 1
                if stale >= cfg.early_stop_patience:
                    hist.stopped_early = True
                    break
    if best is not None:
        model.load_state(best)
    else:
        hist.best_epoch = len(hist.train_loss) - 1
    return model, hist


# Leave-one-subject-out ------------------------------------------------------

def fold_seeds(root_seed: int, fold: int) -> dict:
    """Per-fold seeds: SeedSequence(root_seed, spawn_key=(fold,)) split four ways."""
    ss = np.random.SeedSequence(root_seed, spawn_key=(fold,))
    names = ("split", "gat", "gcn", "rf")
    return {n: int(c.generate_state(1)[0]) for n, c in zip(names, ss.spawn(len(names)))}


def split_validation(subjects, labels, fraction, seed):
    """Stratified subject split -> (fit_subjects, val_subjects).

    Each class contributes round(fraction * count) subjects (at least one)
    to validation, provided at least one stays for fitting.
    """
    rng = np.random.default_rng(seed)
    fit, val = [], []
    for cls in (0, 1):
        members = sorted(s for s in subjects if labels[s] == cls)
        k = max(1, int(round(fraction * len(members)))) if len(members) >= 2 else 0
        k = min(k, len(members) - 1)
        chosen = set(rng.choice(members, size=k, replace=False).tolist()) if k else set()
        val += [s for s in members if s in chosen]
        fit += [s for s in members if s not in chosen]
    return sorted(fit), sorted(val)


def aggregate(probs, how="mean") -> float:
    """Subject score from window epilepsy probabilities."""
    probs = np.asarray(probs)
    if how == "vote":
        return float(np.mean(probs >= 0.5))
    return float(np.mean(probs))


@dataclass
class FoldResult:
    subject: str
    label: int
    window_probs: dict       # classifier -> array of window epilepsy probabilities
    scores: dict             # classifier -> subject-level score
    histories: dict = field(default_factory=dict)
    edge_importance: np.ndarray | None = None
    self_importance: np.ndarray | None = None
    node_importance: np.ndarray | None = None
    train_subjects: list = field(default_factory=list)
    val_subjects: list = field(default_factory=list)
    seconds: float = 0.0     # wall time of the fold, not part of any metric


def _normalise(samples, norm):
    return [s.with_features(apply_normalizer(norm, s.node_features)) for s in samples]


def run_fold(fold, subjects, dataset, labels, classifiers, archs, cfg, forest_cfg,
             root_seed, normalize=True, explain=True, correct_only=False):
    """Train every requested classifier with ``subjects[fold]`` held out."""
    from .explain import edge_importance_matrix, gradcam_node_importance

    t0 = time.perf_counter()
    held = subjects[fold]
    pool = [s for s in subjects if s != held]
    if len({labels[s] for s in pool}) < 2:
        raise ClassMissing(f"training pool without {held!r} is single-class")
    seeds = fold_seeds(root_seed, fold)
    fit_subj, val_subj = split_validation(pool, labels, cfg.val_fraction, seeds["split"])
    fit_raw = [w for s in fit_subj for w in dataset[s]]
    val_raw = [w for s in val_subj for w in dataset[s]]
    test_raw = list(dataset[held])
    if normalize:
        norm = fit_normalizer([w.node_features for w in fit_raw])
        fit_w, val_w, test_w = (_normalise(x, norm) for x in (fit_raw, val_raw, test_raw))
    else:
        fit_w, val_w, test_w = fit_raw, val_raw, test_raw
    res = FoldResult(held, labels[held], {}, {}, train_subjects=fit_subj, val_subjects=val_subj)
    for name in classifiers:
        if name == "rf":
            pool_w = fit_w + val_w
            X = np.stack([flatten_window_features(w) for w in pool_w])
            y = np.array([w.label for w in pool_w])
            forest = rf_train(X, y, forest_cfg, seed=seeds["rf"])
            Xt = np.stack([flatten_window_features(w) for w in test_w])
            probs = rf_predict_proba(forest, Xt)[:, 1]
        else:
            model, hist = train_model(fit_w, val_w, archs[name], cfg, seed=seeds[name])
            res.histories[name] = hist.to_dict()
            probs = model.predict_proba(test_w)[:, 1]
            if name == "gat" and explain:
                chosen = test_w
                if correct_only:
                    chosen = [w for w, p in zip(test_w, probs) if (p >= 0.5) == (w.label == 1)]
                if chosen:
                    res.edge_importance, res.self_importance = edge_importance_matrix(model, chosen)
                    res.node_importance = np.mean(
                        [gradcam_node_importance(model, w, 1) for w in chosen], axis=0)
        res.window_probs[name] = probs
        res.scores[name] = aggregate(probs, cfg.aggregation)
    res.seconds = time.perf_counter() - t0
    log.info("fold %d (%s) done: %s", fold, held,
             ", ".join(f"{k}={v:.3f}" for k, v in res.scores.items()))
    return res


@dataclass
class LoocvResult:
    subjects: list
    labels: dict
    folds: list
    reports: dict             # classifier -> {"subject": MetricsReport, "window": MetricsReport}

    def scores(self, classifier) -> np.ndarray:
        return np.array([f.scores[classifier] for f in self.folds])

    def subject_labels(self) -> np.ndarray:
        return np.array([f.label for f in self.folds])


def loocv(dataset, labels, classifiers=("rf", "gcn", "gat"), archs=None,
          cfg: TrainConfig | None = None, forest_cfg: ForestConfig | None = None,
          seed=0, jobs=1, normalize=True, explain=True, correct_only=False) -> LoocvResult:
    """Leave-one-subject-out evaluation.

    ``dataset`` maps subject id -> list of un-normalised GraphSamples and
    ``labels`` maps subject id -> 0/1. Folds follow sorted subject order.
    """
    cfg = cfg or TrainConfig()
    forest_cfg = forest_cfg or ForestConfig()
    archs = dict(archs or {})
    archs.setdefault("gat", GatConfig())
    archs.setdefault("gcn", GcnConfig())
    subjects = sorted(dataset)
    if len(subjects) < 3:
        raise InvalidSpec("LOOCV needs at least three subjects")
    if len({labels[s] for s in subjects}) < 2:
        raise ClassMissing("dataset has a single class")
    args = [(k, subjects, dataset, labels, list(classifiers), archs, cfg, forest_cfg,
             seed, normalize, explain, correct_only) for k in range(len(subjects))]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            folds = list(ex.map(_run_fold_star, args))
    else:
        folds = [run_fold(*a) for a in args]
    y_subj = np.array([f.label for f in folds])
    reports = {}
    for name in classifiers:
        s = np.array([f.scores[name] for f in folds])
        wp = np.concatenate([f.window_probs[name] for f in folds])
        wy = np.concatenate([np.full(f.window_probs[name].size, f.label) for f in folds])
        reports[name] = {
            "subject": compute_metrics(y_subj, (s >= 0.5).astype(int), s),
            "window": compute_metrics(wy, (wp >= 0.5).astype(int), wp),
        }
    return LoocvResult(subjects, dict(labels), folds, reports)


def _run_fold_star(a):
    return run_fold(*a)
