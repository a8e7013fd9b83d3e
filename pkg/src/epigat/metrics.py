"""Classification metrics, Mann-Whitney AUROC and the DeLong paired test."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats

from .errors import DegenerateVariance, LengthMismatch, SingleClass

CLASS_NAMES = ("control", "epilepsy")


def _binary(labels, scores=None):
    y = np.asarray(labels).astype(np.int64).reshape(-1)
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0/1")
    if scores is not None:
        s = np.asarray(scores, dtype=np.float64).reshape(-1)
        if s.shape != y.shape:
            raise LengthMismatch(f"{y.size} labels vs {s.size} scores")
    if y.min(initial=1) == y.max(initial=0) or y.size == 0:
        raise SingleClass("both classes must be present")
    return y


def auroc(labels, scores) -> float:
    """P(score_pos > score_neg) with ties counted one half."""
    y = _binary(labels, scores)
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    ranks = stats.rankdata(s, method="average")
    m = int(y.sum())
    n = y.size - m
    u = ranks[y == 1].sum() - m * (m + 1) / 2.0
    return float(u / (m * n))


def structural_components(labels, scores):
    """DeLong placement values: (V10 over positives, V01 over negatives)."""
    y = _binary(labels, scores)
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    pos, neg = s[y == 1], s[y == 0]
    m, n = pos.size, neg.size
    r_all = stats.rankdata(s, method="average")
    r_pos = stats.rankdata(pos, method="average")
    r_neg = stats.rankdata(neg, method="average")
    v10 = (r_all[y == 1] - r_pos) / n
    v01 = 1.0 - (r_all[y == 0] - r_neg) / m
    return v10, v01


@dataclass(frozen=True)
class DeLongResult:
    auroc_a: float
    auroc_b: float
    z: float
    p: float
    variance: float

    def to_dict(self):
        return asdict(self)


def delong_test(labels, scores_a, scores_b) -> DeLongResult:
    """Two-sided DeLong test for the difference of two correlated AUROCs.

    Identical score vectors give z = 0 and p = 1. A non-positive variance with
    a non-zero AUROC difference raises ``DegenerateVariance``.
    """
    y = _binary(labels, scores_a)
    _binary(labels, scores_b)
    comps = [structural_components(y, s) for s in (scores_a, scores_b)]
    v10 = np.stack([c[0] for c in comps])
    v01 = np.stack([c[1] for c in comps])
    aucs = v10.mean(axis=1)
    m, n = v10.shape[1], v01.shape[1]
    s10 = np.cov(v10) if m > 1 else np.zeros((2, 2))
    s01 = np.cov(v01) if n > 1 else np.zeros((2, 2))
    cov = s10 / m + s01 / n
    var = float(cov[0, 0] + cov[1, 1] - 2 * cov[0, 1])
    diff = float(aucs[0] - aucs[1])
    if var <= 1e-300:
        if diff == 0.0:
            return DeLongResult(float(aucs[0]), float(aucs[1]), 0.0, 1.0, max(var, 0.0))
        raise DegenerateVariance(f"variance {var} with AUROC difference {diff}")
    z = diff / np.sqrt(var)
    p = float(2 * stats.norm.sf(abs(z)))
    return DeLongResult(float(aucs[0]), float(aucs[1]), float(z), min(p, 1.0), var)


@dataclass
class MetricsReport:
    per_class: dict
    accuracy: float
    macro_f1: float
    weighted_f1: float
    auroc: float | None
    counts: dict

    def to_dict(self):
        return asdict(self)


def _safe_div(a, b):
    return float(a / b) if b else 0.0


def compute_metrics(labels, predictions, scores=None) -> MetricsReport:
    """Per-class precision/recall/F1 with accuracy, macro/weighted F1 and AUROC.

    Undefined ratios (empty denominators) are reported as 0.
    """
    y = np.asarray(labels).astype(np.int64).reshape(-1)
    p = np.asarray(predictions).astype(np.int64).reshape(-1)
    if y.shape != p.shape:
        raise LengthMismatch(f"{y.size} labels vs {p.size} predictions")
    if scores is not None and np.asarray(scores).size != y.size:
        raise LengthMismatch(f"{y.size} labels vs {np.asarray(scores).size} scores")
    tp = int(np.sum((y == 1) & (p == 1)))
    tn = int(np.sum((y == 0) & (p == 0)))
    fp = int(np.sum((y == 0) & (p == 1)))
    fn = int(np.sum((y == 1) & (p == 0)))
    per_class = {}
    for cls, name in enumerate(CLASS_NAMES):
        hit = int(np.sum((y == cls) & (p == cls)))
        predicted = int(np.sum(p == cls))
        support = int(np.sum(y == cls))
        prec = _safe_div(hit, predicted)
        rec = _safe_div(hit, support)
        f1 = _safe_div(2 * prec * rec, prec + rec)
        per_class[name] = {"precision": prec, "recall": rec, "f1": f1, "support": support}
    f1s = np.array([per_class[c]["f1"] for c in CLASS_NAMES])
    sup = np.array([per_class[c]["support"] for c in CLASS_NAMES], dtype=float)
    weighted = float(np.dot(f1s, sup) / sup.sum()) if sup.sum() else 0.0
    auc = None
    if scores is not None and 0 < y.sum() < y.size:
        auc = auroc(y, scores)
    return MetricsReport(
        per_class=per_class,
        accuracy=_safe_div(tp + tn, y.size),
        macro_f1=float(f1s.mean()),
        weighted_f1=weighted,
        auroc=auc,
        counts={"tp": tp, "fp": fp, "fn": fn, "tn": tn, "n": int(y.size)},
    )
