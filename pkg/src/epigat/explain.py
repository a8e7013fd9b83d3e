"""Edge importance from final-layer attention, Grad-CAM node importance, and
schematic connectome export."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .errors import EmptySampleSet, InvalidTopK
from .io_dataset import CHANNELS
from .models import GraphBatch

# approximate top-view 10-20 positions, nose up, unit head radius
ELECTRODE_XY = {
    "AF3": (-0.25, 0.80), "AF4": (0.25, 0.80),
    "F7": (-0.70, 0.55), "F3": (-0.33, 0.55), "F4": (0.33, 0.55), "F8": (0.70, 0.55),
    "FC5": (-0.58, 0.28), "FC6": (0.58, 0.28),
    "T7": (-0.90, 0.00), "T8": (0.90, 0.00),
    "P7": (-0.70, -0.55), "P8": (0.70, -0.55),
    "O1": (-0.28, -0.88), "O2": (0.28, -0.88),
}


@dataclass
class EdgeImportance:
    matrix: np.ndarray          # symmetric, zero diagonal
    self_loops: np.ndarray      # mean self-attention per node
    directed: np.ndarray        # pre-symmetrisation [target, source] means
    channels: tuple = CHANNELS

    def ranked(self, k=None):
        iu, ju = np.triu_indices(self.matrix.shape[0], k=1)
        w = self.matrix[iu, ju]
        order = np.argsort(-w, kind="stable")
        if k is not None:
            order = order[:k]
        return [(int(iu[o]), int(ju[o]), float(w[o])) for o in order]


@dataclass
class NodeImportance:
    scores: np.ndarray
    channels: tuple = field(default=CHANNELS)

    def ranked(self):
        order = np.argsort(-self.scores, kind="stable")
        return [(int(i), float(self.scores[i])) for i in order]


def directed_attention(model, samples, batch_size=256) -> np.ndarray:
    """(n_samples, n, n) head-averaged final-layer attention, [target, source]."""
    samples = list(samples)
    out = []
    for i in range(0, len(samples), batch_size):
        batch = GraphBatch(samples[i:i + batch_size])
        res = model.forward(batch, training=False)
        alpha = res.attn2.mean(axis=1)
        n = samples[i].n_nodes
        mats = np.zeros((batch.n_graphs, n, n))
        g = batch.graph.ids[batch.dst.ids]
        offset = g * n
        mats[g, batch.dst.ids - offset, batch.src.ids - offset] = alpha
        out.append(mats)
    return np.concatenate(out, axis=0)


def edge_importance(model, samples) -> EdgeImportance:
    """Sample-averaged, head-averaged final-layer attention, symmetrised."""
    samples = list(samples)
    if not samples:
        raise EmptySampleSet("edge importance needs at least one sample")
    d = directed_attention(model, samples).mean(axis=0)
    sym = 0.5 * (d + d.T)
    np.fill_diagonal(sym, 0.0)
    return EdgeImportance(sym, np.diag(d).copy(), d)


def edge_importance_matrix(model, samples):
    """(symmetric matrix with zero diagonal, self-loop vector) over ``samples``."""
    ei = edge_importance(model, samples)
    return ei.matrix, ei.self_loops


def gradcam_node_importance(model, sample, target_class=1) -> np.ndarray:
    """Graph Grad-CAM: ReLU(H2 @ mean-over-nodes(d logit / d H2))."""
    params = model.param_tensors(track=True)
    with ad.Tape() as tape:
        out = model.forward(GraphBatch([sample]), training=False, params=params)
        onehot = np.zeros(out.logits.shape)
        onehot[0, target_class] = 1.0
        score = ad.sum(ad.multiply(out.logits, onehot))
    h2 = out.embeddings
    grads = ad.backward(tape, score, wrt=[h2])
    weights = grads[h2].mean(axis=0)
    return np.maximum(h2.value @ weights, 0.0)


def node_importance(model, samples, target_class=1) -> NodeImportance:
    samples = list(samples)
    if not samples:
        raise EmptySampleSet("node importance needs at least one sample")
    return NodeImportance(np.mean([gradcam_node_importance(model, s, target_class)
                                   for s in samples], axis=0))


# Export -----------------------------------------------------------------------

def _color(t):
    """Pale yellow -> dark red ramp for t in [0, 1]."""
    lo, hi = np.array([255, 237, 160]), np.array([128, 0, 38])
    r, g, b = (lo + (hi - lo) * float(np.clip(t, 0, 1))).round().astype(int)
    return f"#{r:02x}{g:02x}{b:02x}"


def connectome_svg(ei: EdgeImportance, ni: NodeImportance | None, top_k: int,
                   size=400) -> str:
    c = size / 2
    r = size * 0.42

    def xy(ch):
        x, y = ELECTRODE_XY[ch]
        return c + r * x, c - r * y

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
             f'viewBox="0 0 {size} {size}">',
             f'<circle cx="{c}" cy="{c}" r="{r:.1f}" fill="none" stroke="#444" stroke-width="2"/>',
             f'<polygon points="{c - 12},{c - r + 1} {c},{c - r - 16} {c + 12},{c - r + 1}" '
             f'fill="none" stroke="#444" stroke-width="2"/>']
    edges = ei.ranked(top_k)
    if edges:
        ws = np.array([w for _, _, w in edges])
        lo, hi = ws.min(), ws.max()
        for i, j, w in reversed(edges):
            t = (w - lo) / (hi - lo) if hi > lo else 1.0
            (x1, y1), (x2, y2) = xy(ei.channels[i]), xy(ei.channels[j])
            parts.append(f'<line class="edge" data-pair="{ei.channels[i]}-{ei.channels[j]}" '
                         f'x1="{x1:.1f}" y1="{y1:.1f}" x2="{x2:.1f}" y2="{y2:.1f}" '
                         f'stroke="{_color(t)}" stroke-width="{1.5 + 3 * t:.2f}"/>')
    scores = ni.scores if ni is not None else np.zeros(len(ei.channels))
    top = scores.max() if scores.size and scores.max() > 0 else 1.0
    for k, ch in enumerate(ei.channels):
        x, y = xy(ch)
        parts.append(f'<circle class="node" cx="{x:.1f}" cy="{y:.1f}" r="11" '
                     f'fill="{_color(scores[k] / top)}" stroke="#222"/>')
        parts.append(f'<text x="{x:.1f}" y="{y + 3.5:.1f}" font-size="8" '
                     f'text-anchor="middle" font-family="sans-serif">{ch}</text>')
    parts.append("</svg>")
    return "\n".join(parts)


def connectome_dict(ei: EdgeImportance, ni: NodeImportance | None) -> dict:
    d = {
        "channels": list(ei.channels),
        "edge_matrix": ei.matrix.tolist(),
        "self_loops": ei.self_loops.tolist(),
        "directed": ei.directed.tolist(),
        "ranked_edges": [{"a": ei.channels[i], "b": ei.channels[j], "weight": w}
                         for i, j, w in ei.ranked()],
    }
    if ni is not None:
        d["node_importance"] = ni.scores.tolist()
        d["ranked_nodes"] = [{"channel": ni.channels[i], "score": s} for i, s in ni.ranked()]
    return d


def export_connectome(ei: EdgeImportance, ni: NodeImportance | None, top_k: int,
                      out_dir, stem="connectome"):
    """Write ``<stem>.json`` and ``<stem>.svg``; returns the two paths."""
    n_pairs = len(ei.channels) * (len(ei.channels) - 1) // 2
    if not 0 <= top_k <= n_pairs:
        raise InvalidTopK(f"top_k must be in [0, {n_pairs}], got {top_k}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    jpath, spath = out_dir / f"{stem}.json", out_dir / f"{stem}.svg"
    jpath.write_text(json.dumps(connectome_dict(ei, ni), indent=1))
    spath.write_text(connectome_svg(ei, ni, top_k))
    return jpath, spath


def load_connectome(path):
    d = json.loads(Path(path).read_text())
    ei = EdgeImportance(np.asarray(d["edge_matrix"]), np.asarray(d["self_loops"]),
                        np.asarray(d["directed"]), tuple(d["channels"]))
    ni = None
    if "node_importance" in d:
        ni = NodeImportance(np.asarray(d["node_importance"]), tuple(d["channels"]))
    return ei, ni
