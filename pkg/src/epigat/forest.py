"""Random forest baseline on flattened window features (Gini, bootstrap)."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, SingleClass

FOREST_VERSION = 1
N_CLASSES = 2


def flatten_window_features(g) -> np.ndarray:
    """Node features row-major (node, feature), then the upper-triangle PLVs."""
    iu = np.triu_indices(g.plv.shape[0], k=1)
    return np.concatenate([g.node_features.reshape(-1), g.plv[iu]])


def feature_index_map(n_nodes=14, n_features=5):
    """Position -> ('node', node, feature) or ('plv', i, j) for the flat layout."""
    out = [("node", i, f) for i in range(n_nodes) for f in range(n_features)]
    iu, ju = np.triu_indices(n_nodes, k=1)
    out += [("plv", int(i), int(j)) for i, j in zip(iu, ju)]
    return out


def gini(counts) -> float:
    counts = np.asarray(counts, dtype=float)
    n = counts.sum()
    if n == 0:
        return 0.0
    p = counts / n
    return float(1.0 - np.sum(p * p))


@dataclass
class Tree:
    feature: np.ndarray    # -1 marks a leaf
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    counts: np.ndarray     # (n_nodes, 2) training class counts
    gains: np.ndarray      # Gini gain of each accepted split (nan at leaves)

    def leaf_index(self, X):
        X = np.atleast_2d(X)
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = self.feature[node] >= 0
        while np.any(active):
            rows = np.nonzero(active)[0]
            nd = node[rows]
            go_left = X[rows, self.feature[nd]] <= self.threshold[nd]
            node[rows] = np.where(go_left, self.left[nd], self.right[nd])
            active[rows] = self.feature[node[rows]] >= 0
        return node

    def predict_proba(self, X):
        c = self.counts[self.leaf_index(X)]
        return c / c.sum(axis=1, keepdims=True)

    def to_dict(self):
        return {k: getattr(self, k).tolist() for k in
                ("feature", "threshold", "left", "right", "counts", "gains")}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["feature"], dtype=np.int64),
                   np.asarray(d["threshold"], dtype=np.float64),
                   np.asarray(d["left"], dtype=np.int64),
                   np.asarray(d["right"], dtype=np.int64),
                   np.asarray(d["counts"], dtype=np.float64),
                   np.asarray([np.nan if v is None else v for v in d["gains"]], dtype=np.float64))


def _best_split(X, y, feats):
    """Best (gain, feature, threshold) over ``feats`` or None if all constant."""
    xs = X[:, feats]
    order = np.argsort(xs, axis=0, kind="stable")
    vs = np.take_along_axis(xs, order, axis=0)
    ys = y[order]
    n = y.size
    n_left = np.arange(1, n)[:, None]
    pos_left = np.cumsum(ys, axis=0)[:-1]
    pos_total = ys.sum(axis=0)
    n_right = n - n_left
    pl = pos_left / n_left
    pr = (pos_total - pos_left) / n_right
    weighted = (n_left * 2 * pl * (1 - pl) + n_right * 2 * pr * (1 - pr)) / n
    valid = vs[:-1] < vs[1:]
    if not np.any(valid):
        return None
    p = pos_total[0] / n
    parent = 2 * p * (1 - p)
    gain = np.where(valid, parent - weighted, -np.inf)
    flat = int(np.argmax(gain))
    i, k = divmod(flat, len(feats))
    lo, hi = vs[i, k], vs[i + 1, k]
    thr = lo + (hi - lo) / 2.0
    if not lo <= thr < hi:
        thr = lo
    return max(float(gain[i, k]), 0.0), int(feats[k]), float(thr)


def build_tree(X, y, rng, max_features, max_depth=None, min_leaf=1) -> Tree:
    d = X.shape[1]
    feature, threshold, left, right, counts, gains = [], [], [], [], [], []

    def new_node(idx):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        c = np.bincount(y[idx], minlength=N_CLASSES).astype(float)
        counts.append(c)
        gains.append(np.nan)
        return len(feature) - 1

    root = new_node(np.arange(y.size))
    stack = [(root, np.arange(y.size), 0)]
    while stack:
        node, idx, depth = stack.pop()
        c = counts[node]
        if (c > 0).sum() < 2 or idx.size < 2 * min_leaf or (
                max_depth is not None and depth >= max_depth):
            continue
        perm = rng.permutation(d)
        split = _best_split(X[idx], y[idx], perm[:max_features])
        if split is None and max_features < d:
            split = _best_split(X[idx], y[idx], perm[max_features:])
        if split is None:
            continue
        gain, f, thr = split
        go_left = X[idx, f] <= thr
        li, ri = idx[go_left], idx[~go_left]
        if li.size < min_leaf or ri.size < min_leaf:
            continue
        feature[node], threshold[node], gains[node] = f, thr, gain
        left[node] = new_node(li)
        right[node] = new_node(ri)
        stack.append((right[node], ri, depth + 1))
        stack.append((left[node], li, depth + 1))
    return Tree(np.array(feature, dtype=np.int64), np.array(threshold),
                np.array(left, dtype=np.int64), np.array(right, dtype=np.int64),
                np.array(counts), np.array(gains))


@dataclass
class Forest:
    trees: list
    n_features: int
    max_depth: int | None
    max_features: int
    min_leaf: int
    seed: int
    oob_proba: np.ndarray | None = None
    oob_labels: np.ndarray | None = None

    @property
    def n_trees(self):
        return len(self.trees)

    def oob_accuracy(self) -> float:
        seen = ~np.isnan(self.oob_proba[:, 0])
        pred = np.argmax(self.oob_proba[seen], axis=1)
        return float(np.mean(pred == self.oob_labels[seen]))


def _resolve_max_features(spec, d):
    if spec == "sqrt":
        return max(1, int(np.sqrt(d)))
    if spec is None:
        return d
    return max(1, min(int(spec), d))


def rf_train(X, y, cfg=None, seed=0) -> Forest:
    """Fit a forest; rows are put in canonical order first so the result does
    not depend on the order samples were supplied in."""
    n_trees = getattr(cfg, "n_trees", 500)
    max_depth = getattr(cfg, "max_depth", None)
    min_leaf = getattr(cfg, "min_leaf", 1)
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y).astype(np.int64)
    if X.ndim != 2 or X.shape[0] != y.size:
        raise DimensionMismatch(f"X {X.shape} vs y {y.shape}")
    if y.size < 2 or np.unique(y).size < 2:
        raise SingleClass("random forest needs both classes")
    canon = np.lexsort(np.column_stack([X, y]).T[::-1])
    X, y = X[canon], y[canon]
    n, d = X.shape
    k = _resolve_max_features(getattr(cfg, "max_features", "sqrt"), d)
    seqs = np.random.SeedSequence(seed).spawn(n_trees)
    trees = []
    oob_sum = np.zeros((n, N_CLASSES))
    oob_n = np.zeros(n)
    for ss in seqs:
        rng = np.random.default_rng(ss)
        boot = rng.integers(0, n, n)
        tree = build_tree(X[boot], y[boot], rng, k, max_depth, min_leaf)
        trees.append(tree)
        out = np.ones(n, dtype=bool)
        out[boot] = False
        if np.any(out):
            oob_sum[out] += tree.predict_proba(X[out])
            oob_n[out] += 1
    with np.errstate(invalid="ignore", divide="ignore"):
        oob = oob_sum / oob_n[:, None]
    inv = np.empty_like(canon)
    inv[canon] = np.arange(n)
    return Forest(trees, d, max_depth, k, min_leaf, seed, oob[inv], y[inv])


def rf_predict_proba(forest: Forest, x) -> np.ndarray:
    """Mean over trees of leaf class frequencies; (2,) for one vector, (n, 2) for a matrix."""
    X = np.asarray(x, dtype=np.float64)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != forest.n_features:
        raise DimensionMismatch(f"expected {forest.n_features} features, got {X.shape[1]}")
    total = np.zeros((X.shape[0], N_CLASSES))
    for t in forest.trees:
        total += t.predict_proba(X)
    proba = total / forest.n_trees
    return proba[0] if single else proba


def save_forest(forest: Forest, path) -> None:
    d = {
        "format": "epigat-forest", "version": FOREST_VERSION, "seed": forest.seed,
        "n_features": forest.n_features, "max_depth": forest.max_depth,
        "max_features": forest.max_features, "min_leaf": forest.min_leaf,
        "trees": [t.to_dict() for t in forest.trees],
    }
    Path(path).write_text(json.dumps(d))


def load_forest(path) -> Forest:
    d = json.loads(Path(path).read_text())
    if d.get("format") != "epigat-forest" or d.get("version") != FOREST_VERSION:
        raise ValueError("not a version-1 epigat forest checkpoint")
    return Forest([Tree.from_dict(t) for t in d["trees"]], d["n_features"], d["max_depth"],
                  d["max_features"], d["min_leaf"], d["seed"])
