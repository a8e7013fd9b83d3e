"""GATv2 graph classifier and GCN baseline on the autodiff engine."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import BatchNormState, Segments, Tensor
from .config import GatConfig, GcnConfig
from .errors import ShapeMismatch

CHECKPOINT_VERSION = 1


class GraphBatch:
    """Disjoint union of graph samples with global node indices."""

    def __init__(self, samples):
        samples = list(samples)
        if not samples:
            raise ValueError("empty batch")
        self.samples = samples
        xs, srcs, dsts, attrs, gids = [], [], [], [], []
        offset = 0
        for k, s in enumerate(samples):
            n = s.n_nodes
            src, dst = s.edges
            xs.append(s.node_features)
            srcs.append(src + offset)
            dsts.append(dst + offset)
            attrs.append(s.edge_attr)
            gids.append(np.full(n, k))
            offset += n
        self.x = np.concatenate(xs, axis=0)
        self.n_nodes = offset
        self.n_graphs = len(samples)
        self.src = Segments(np.concatenate(srcs), offset)
        self.dst = Segments(np.concatenate(dsts), offset)
        self.edge_attr = np.concatenate(attrs)[:, None]
        self.graph = Segments(np.concatenate(gids), self.n_graphs)
        self.labels = np.array([-1 if s.label is None else s.label for s in samples])

    @property
    def n_edges(self) -> int:
        return len(self.dst)


def as_batch(g) -> GraphBatch:
    if isinstance(g, GraphBatch):
        return g
    if isinstance(g, (list, tuple)):
        return GraphBatch(g)
    return GraphBatch([g])


def glorot(rng, fan_in, fan_out, shape):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def _heads_glorot(rng, fan_in, fan_out, heads, rows):
    """Stack ``heads`` independently initialised (rows x fan_out) blocks column-wise."""
    return np.concatenate([glorot(rng, fan_in, fan_out, (rows, fan_out))
                           for _ in range(heads)], axis=1)


def gatv2_layer(p, x, src, dst, edge_attr, heads, out_per_head, concat=True,
                negative_slope=0.2):
    """One multi-head GATv2 convolution.

    ``p`` holds Tensors ``W_dst``, ``W_src`` (the two halves of the attention
    projection acting on target and source features), ``W_e`` (edge attribute
    projection), ``a`` (heads x out_per_head) and ``M`` (message transform).
    Returns the pre-activation node output and the (n_edges, heads) attention
    coefficients, which sum to one over each target's in-neighbourhood.
    """
    hd = heads * out_per_head
    e = len(dst)
    n = x.shape[0]
    if p["W_dst"].shape != (x.shape[1], hd) or p["M"].shape != (x.shape[1], hd):
        raise ShapeMismatch("gatv2_layer", x.shape, p["W_dst"].shape, p["M"].shape)
    scores = ad.gatv2_scores(ad.matmul(x, p["W_dst"]), ad.matmul(x, p["W_src"]), edge_attr,
                             p["W_e"], p["a"], src, dst, negative_slope)
    alpha = ad.segment_softmax(scores, dst)
    out = ad.attention_aggregate(alpha, ad.matmul(x, p["M"]), src, dst, n)
    if not concat:
        out = ad.multiply(ad.sum(ad.reshape(out, (n, heads, out_per_head)), axis=1),
                          1.0 / heads)
    return out, alpha


@dataclass
class GatOutput:
    log_probs: Tensor
    logits: Tensor
    attention: list       # per layer, (n_edges, heads) arrays
    embeddings: Tensor    # final node embeddings H2
    batch: GraphBatch

    @property
    def attn1(self):
        return self.attention[0]

    @property
    def attn2(self):
        return self.attention[-1]

    @property
    def h2(self):
        return self.embeddings


class _Model:
    kind = ""

    def __init__(self, config, seed=0):
        self.config = config
        self.seed = seed
        self.params, self.fans = self._init_params(np.random.default_rng(seed))
        self.bn = self._init_bn()

    def param_tensors(self, track=False):
        return {k: Tensor(v, requires_grad=track) for k, v in self.params.items()}

    def _dropout(self, h, rng, training):
        rate = self.config.dropout
        if not training or rate == 0 or rng is None:
            return h
        mask = (rng.random(h.shape) >= rate) / (1.0 - rate)
        return ad.multiply(h, mask)

    def _head(self, p, z, training, rng):
        z = ad.add(ad.matmul(z, p["mlp.W1"]), p["mlp.b1"])
        z = ad.relu(ad.batch_norm(z, p["mlp.bn_gamma"], p["mlp.bn_beta"], self.bn["mlp"], training))
        z = self._dropout(z, rng, training)
        return ad.add(ad.matmul(z, p["mlp.W2"]), p["mlp.b2"])

    def _init_head(self, rng, params, fans, width):
        h = self.config.mlp_hidden
        params["mlp.W1"] = glorot(rng, width, h, (width, h))
        fans["mlp.W1"] = (width, h)
        params["mlp.b1"] = np.zeros(h)
        params["mlp.bn_gamma"] = np.ones(h)
        params["mlp.bn_beta"] = np.zeros(h)
        out = self.config.out_channels
        params["mlp.W2"] = glorot(rng, h, out, (h, out))
        fans["mlp.W2"] = (h, out)
        params["mlp.b2"] = np.zeros(out)

    def predict_proba(self, samples, batch_size=256):
        """(n, 2) class probabilities in eval mode."""
        samples = list(samples)
        out = []
        for i in range(0, len(samples), batch_size):
            res = self.forward(GraphBatch(samples[i:i + batch_size]), training=False)
            out.append(np.exp(res.log_probs.value))
        return np.concatenate(out, axis=0)

    def state(self):
        return ({k: v.copy() for k, v in self.params.items()},
                {k: s.copy() for k, s in self.bn.items()})

    def load_state(self, state):
        params, bn = state
        self.params = {k: v.copy() for k, v in params.items()}
        self.bn = {k: s.copy() for k, s in bn.items()}


class GATClassifier(_Model):
    """Stacked GATv2 layers with LayerNorm + ELU, sum pooling and an MLP head."""

    kind = "gat"

    def _init_params(self, rng):
        cfg = self.config
        params, fans = {}, {}
        d_in = cfg.in_features
        hd = cfg.heads * cfg.hidden
        for l in range(cfg.layers):
            pre = f"gat{l + 1}."
            # W acts on [x_dst || x_src], so each head's fan-in is 2 * d_in
            params[pre + "W_dst"] = _heads_glorot(rng, 2 * d_in, cfg.hidden, cfg.heads, d_in)
            params[pre + "W_src"] = _heads_glorot(rng, 2 * d_in, cfg.hidden, cfg.heads, d_in)
            params[pre + "W_e"] = _heads_glorot(rng, 1, cfg.hidden, cfg.heads, 1)
            params[pre + "a"] = np.stack([glorot(rng, cfg.hidden, 1, cfg.hidden)
                                          for _ in range(cfg.heads)])
            params[pre + "M"] = _heads_glorot(rng, d_in, cfg.hidden, cfg.heads, d_in)
            fans[pre + "W_dst"] = fans[pre + "W_src"] = (2 * d_in, cfg.hidden)
            fans[pre + "W_e"] = (1, cfg.hidden)
            fans[pre + "a"] = (cfg.hidden, 1)
            fans[pre + "M"] = (d_in, cfg.hidden)
            d_out = cfg.width
            params[pre + "ln_gamma"] = np.ones(d_out)
            params[pre + "ln_beta"] = np.zeros(d_out)
            d_in = d_out
        self._init_head(rng, params, fans, d_in)
        return params, fans

    def _init_bn(self):
        return {"mlp": BatchNormState(self.config.mlp_hidden)}

    def forward(self, g, training=False, params=None, rng=None) -> GatOutput:
        cfg = self.config
        batch = as_batch(g)
        p = params if params is not None else self.param_tensors()
        h = Tensor(batch.x)
        edge_attr = Tensor(batch.edge_attr)
        attention = []
        for l in range(cfg.layers):
            pre = f"gat{l + 1}."
            layer = {k: p[pre + k] for k in ("W_dst", "W_src", "W_e", "a", "M")}
            h, alpha = gatv2_layer(layer, h, batch.src, batch.dst, edge_attr, cfg.heads,
                                   cfg.hidden, cfg.concat, cfg.negative_slope)
            attention.append(alpha.value)
            h = ad.elu(ad.layer_norm(h, p[pre + "ln_gamma"], p[pre + "ln_beta"]))
            h = self._dropout(h, rng, training)
        embeddings = h
        z = ad.segment_sum(h, batch.graph)
        logits = self._head(p, z, training, rng)
        return GatOutput(ad.log_softmax(logits), logits, attention, embeddings, batch)


def gcn_edge_weights(batch: GraphBatch, weighted=True) -> np.ndarray:
    """Symmetric degree normalisation w_ij / sqrt(d_i d_j) per edge."""
    w = batch.edge_attr[:, 0] if weighted else np.ones(batch.n_edges)
    deg = np.bincount(batch.dst.ids, weights=w, minlength=batch.n_nodes)
    inv = np.where(deg > 0, 1.0 / np.sqrt(np.where(deg > 0, deg, 1.0)), 0.0)
    return w * inv[batch.dst.ids] * inv[batch.src.ids]


@dataclass
class GcnOutput:
    log_probs: Tensor
    logits: Tensor
    embeddings: Tensor
    layer_outputs: list
    batch: GraphBatch


class GCNClassifier(_Model):
    """Graph convolutions ReLU(BatchNorm(A_norm X W)), sum pooling, MLP head."""

    kind = "gcn"

    def _init_params(self, rng):
        cfg = self.config
        params, fans = {}, {}
        d_in = cfg.in_features
        for l in range(cfg.layers):
            pre = f"gcn{l + 1}."
            params[pre + "W"] = glorot(rng, d_in, cfg.hidden, (d_in, cfg.hidden))
            fans[pre + "W"] = (d_in, cfg.hidden)
            params[pre + "bn_gamma"] = np.ones(cfg.hidden)
            params[pre + "bn_beta"] = np.zeros(cfg.hidden)
            d_in = cfg.hidden
        self._init_head(rng, params, fans, d_in)
        return params, fans

    def _init_bn(self):
        bn = {f"gcn{l + 1}": BatchNormState(self.config.hidden) for l in range(self.config.layers)}
        bn["mlp"] = BatchNormState(self.config.mlp_hidden)
        return bn

    def forward(self, g, training=False, params=None, rng=None) -> GcnOutput:
        cfg = self.config
        batch = as_batch(g)
        p = params if params is not None else self.param_tensors()
        coef = gcn_edge_weights(batch, cfg.weighted)[:, None]
        h = Tensor(batch.x)
        outs = []
        for l in range(cfg.layers):
            pre = f"gcn{l + 1}."
            hw = ad.matmul(h, p[pre + "W"])
            msg = ad.multiply(ad.gather_rows(hw, batch.src), coef)
            h = ad.scatter_add_rows(msg, batch.dst, batch.n_nodes)
            h = ad.batch_norm(h, p[pre + "bn_gamma"], p[pre + "bn_beta"],
                              self.bn[f"gcn{l + 1}"], training)
            h = self._dropout(ad.relu(h), rng, training)
            outs.append(h.value)
        z = ad.segment_sum(h, batch.graph)
        logits = self._head(p, z, training, rng)
        return GcnOutput(ad.log_softmax(logits), logits, h, outs, batch)


def init_params(seed, config):
    """Fresh model for ``config`` (a GatConfig or GcnConfig); deterministic per seed."""
    if isinstance(config, GatConfig):
        return GATClassifier(config, seed)
    if isinstance(config, GcnConfig):
        return GCNClassifier(config, seed)
    raise TypeError(f"unsupported model config {type(config).__name__}")


def gat_forward(model, g, training=False):
    return model.forward(g, training=training)


def gcn_forward(model, g, training=False):
    return model.forward(g, training=training).log_probs


# Checkpoints ----------------------------------------------------------------

def model_to_dict(model) -> dict:
    return {
        "format": "epigat-model",
        "version": CHECKPOINT_VERSION,
        "kind": model.kind,
        "seed": model.seed,
        "config": asdict(model.config),
        "params": {k: {"shape": list(v.shape), "values": v.reshape(-1).tolist()}
                   for k, v in model.params.items()},
        "batch_norm": {k: {"running_mean": s.running_mean.tolist(),
                           "running_var": s.running_var.tolist(),
                           "momentum": s.momentum, "eps": s.eps}
                       for k, s in model.bn.items()},
    }


def model_from_dict(d):
    if d.get("format") != "epigat-model" or d.get("version") != CHECKPOINT_VERSION:
        raise ValueError("not a version-1 epigat model checkpoint")
    cls, cfg_cls = {"gat": (GATClassifier, GatConfig), "gcn": (GCNClassifier, GcnConfig)}[d["kind"]]
    model = cls(cfg_cls(**d["config"]), d["seed"])
    model.params = {k: np.asarray(v["values"], dtype=np.float64).reshape(v["shape"])
                    for k, v in d["params"].items()}
    for k, s in d["batch_norm"].items():
        st = BatchNormState(len(s["running_mean"]), s["momentum"], s["eps"])
        st.running_mean = np.asarray(s["running_mean"], dtype=np.float64)
        st.running_var = np.asarray(s["running_var"], dtype=np.float64)
        model.bn[k] = st
    return model


def save_model(model, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model)))


def load_model(path):
    return model_from_dict(json.loads(Path(path).read_text()))
