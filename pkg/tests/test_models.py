import numpy as np
import pytest

import epigat.autodiff as ad
from epigat.autodiff import Segments, Tensor, grad_check
from epigat.config import GatConfig, GcnConfig
from epigat.models import (GATClassifier, GCNClassifier, GraphBatch, gatv2_layer, glorot,
                           init_params, load_model, save_model)
from conftest import random_graph

SMALL_GAT = GatConfig(hidden=8, heads=2)
SMALL_GCN = GcnConfig(hidden=8, layers=2, mlp_hidden=8)


def layer_params(rng, d_in, heads, width):
    hd = heads * width
    return {"W_dst": rng.normal(size=(d_in, hd)), "W_src": rng.normal(size=(d_in, hd)),
            "W_e": rng.normal(size=(1, hd)), "a": rng.normal(size=(heads, width)),
            "M": rng.normal(size=(d_in, hd))}


def dense_gatv2(p, x, plv, heads, width, slope=0.2):
    """Per-node loop straight from the layer definition; complete graph with self-loops."""
    n = x.shape[0]
    out = np.zeros((n, heads * width))
    for h in range(heads):
        cols = slice(h * width, (h + 1) * width)
        for i in range(n):
            s = np.empty(n)
            for j in range(n):
                z = p["W_dst"][:, cols].T @ x[i] + p["W_src"][:, cols].T @ x[j] \
                    + p["W_e"][0, cols] * plv[i, j]
                s[j] = p["a"][h] @ np.where(z > 0, z, slope * z)
            alpha = np.exp(s - s.max())
            alpha /= alpha.sum()
            for j in range(n):
                out[i, cols] += alpha[j] * (p["M"][:, cols].T @ x[j])
    return out


def run_layer(p, batch, heads, width):
    tp = {k: Tensor(v) for k, v in p.items()}
    out, alpha = gatv2_layer(tp, Tensor(batch.x), batch.src, batch.dst,
                             Tensor(batch.edge_attr), heads, width)
    return out.value, alpha.value


def test_layer_matches_dense_loop(rng):
    g = random_graph(rng)
    p = layer_params(rng, 5, 3, 4)
    out, _ = run_layer(p, GraphBatch([g]), 3, 4)
    np.testing.assert_allclose(out, dense_gatv2(p, g.node_features, g.plv, 3, 4), atol=1e-10)


def test_attention_sums_to_one(rng):
    for _ in range(20):
        g = random_graph(rng)
        b = GraphBatch([g])
        _, alpha = run_layer(layer_params(rng, 5, 6, 4), b, 6, 4)
        sums = b.dst.sum(alpha)
        np.testing.assert_allclose(sums, 1.0, atol=1e-12)


def test_isolated_node_self_attention(rng):
    heads, width = 2, 3
    p = layer_params(rng, 4, heads, width)
    x = rng.normal(size=(3, 4))
    src = np.array([0, 1, 0, 1, 2])
    dst = np.array([0, 0, 1, 1, 2])
    ea = rng.uniform(size=(5, 1))
    tp = {k: Tensor(v) for k, v in p.items()}
    out, alpha = gatv2_layer(tp, Tensor(x), Segments(src, 3), Segments(dst, 3), Tensor(ea),
                             heads, width)
    np.testing.assert_array_equal(alpha.value[4], 1.0)
    np.testing.assert_allclose(out.value[2], x[2] @ p["M"], atol=1e-14)


def test_symmetric_pair_half_attention(rng):
    p = layer_params(rng, 4, 2, 3)
    x = np.tile(rng.normal(size=4), (2, 1))
    src, dst = np.array([0, 1, 0, 1]), np.array([0, 0, 1, 1])
    tp = {k: Tensor(v) for k, v in p.items()}
    _, alpha = gatv2_layer(tp, Tensor(x), Segments(src, 2), Segments(dst, 2),
                           Tensor(np.full((4, 1), 0.7)), 2, 3)
    np.testing.assert_allclose(alpha.value, 0.5, atol=1e-15)


def test_zero_attention_parameters_give_uniform_weights(rng):
    p = layer_params(rng, 5, 2, 4)
    p["a"][:] = 0
    p["W_e"][:] = 0
    b = GraphBatch([random_graph(rng)])
    out, alpha = run_layer(p, b, 2, 4)
    np.testing.assert_allclose(alpha, 1 / 14, atol=1e-15)
    np.testing.assert_allclose(out, np.tile((b.x @ p["M"]).mean(axis=0), (14, 1)), atol=1e-12)


def test_layer_equivariance(rng):
    g = random_graph(rng)
    perm = rng.permutation(14)
    p = layer_params(rng, 5, 2, 4)
    out, _ = run_layer(p, GraphBatch([g]), 2, 4)
    out_p, _ = run_layer(p, GraphBatch([g.permuted(perm)]), 2, 4)
    np.testing.assert_allclose(out_p, out[perm], atol=1e-12)


@pytest.mark.parametrize("cls,cfg", [(GATClassifier, GatConfig()), (GCNClassifier, GcnConfig())])
def test_model_permutation_invariance(rng, cls, cfg):
    model = cls(cfg, seed=3)
    gs = [random_graph(rng, index=k) for k in range(10)]
    ps = [g.permuted(rng.permutation(14)) for g in gs]
    a = model.forward(gs).log_probs.value
    b = model.forward(ps).log_probs.value
    np.testing.assert_allclose(a, b, atol=1e-9)


@pytest.mark.parametrize("cls,cfg", [(GATClassifier, GatConfig()), (GCNClassifier, GcnConfig())])
def test_batch_duplicate_matches_single(rng, cls, cfg):
    model = cls(cfg, seed=1)
    g = random_graph(rng)
    single = model.forward([g]).log_probs.value
    pair = model.forward([g, g]).log_probs.value
    np.testing.assert_allclose(pair, np.vstack([single, single]), atol=1e-12)


def test_gat_widths():
    model = GATClassifier(GatConfig(), 0)
    assert model.params["gat1.W_dst"].shape == (5, 192)
    assert model.params["gat2.W_dst"].shape == (192, 192)
    assert model.params["gat2.a"].shape == (6, 32)
    assert model.params["mlp.W1"].shape == (192, 64)


def test_gcn_regular_graph_equal_embeddings():
    from epigat.connectivity import GraphSample
    plv = np.full((14, 14), 0.4)
    np.fill_diagonal(plv, 1.0)
    g = GraphSample(np.tile([1.0, -2.0, 0.5, 3.0, 0.1], (14, 1)), plv, 0, "s", 0)
    out = GCNClassifier(GcnConfig(), 0).forward([g])
    for h in out.layer_outputs:
        np.testing.assert_allclose(h, np.tile(h[0], (14, 1)), atol=1e-12)
    gat = GATClassifier(GatConfig(), 0).forward([g])
    np.testing.assert_allclose(gat.embeddings.value, np.tile(gat.embeddings.value[0], (14, 1)),
                               atol=1e-12)


def test_glorot_bounds_and_variance():
    rng = np.random.default_rng(0)
    w = glorot(rng, 192, 64, (192, 64))
    bound = np.sqrt(6 / (192 + 64))
    assert np.abs(w).max() <= bound
    assert w.var() == pytest.approx(bound ** 2 / 3, rel=0.05)
    model = GATClassifier(GatConfig(), 0)
    for name, (fi, fo) in model.fans.items():
        assert np.abs(model.params[name]).max() <= np.sqrt(6 / (fi + fo))


def test_seed_determinism():
    a, b, c = (init_params(s, GatConfig()) for s in (4, 4, 5))
    for k in a.params:
        assert a.params[k].tobytes() == b.params[k].tobytes()
    assert any(not np.array_equal(a.params[k], c.params[k]) for k in a.params)
    with pytest.raises(TypeError):
        init_params(0, object())


@pytest.mark.parametrize("cls,cfg", [(GATClassifier, GatConfig()), (GCNClassifier, GcnConfig())])
def test_checkpoint_roundtrip(tmp_path, rng, cls, cfg):
    model = cls(cfg, seed=2)
    gs = [random_graph(rng, index=k, label=k % 2) for k in range(4)]
    model.forward(gs, training=True)  # move running statistics off their defaults
    save_model(model, tmp_path / "m.json")
    back = load_model(tmp_path / "m.json")
    for k in model.params:
        assert model.params[k].tobytes() == back.params[k].tobytes()
    assert model.predict_proba(gs).tobytes() == back.predict_proba(gs).tobytes()


def _full_model_loss(model, gs, names):
    labels = np.array([g.label for g in gs])

    def f(ts):
        p = model.param_tensors()
        p.update(dict(zip(names, ts)))
        out = model.forward(gs, training=True, params=p)
        for st in model.bn.values():  # keep eval statistics fixed between evaluations
            st.running_mean[:] = 0
            st.running_var[:] = 1
        return ad.nll_loss(out.log_probs, labels)
    return f


@pytest.mark.parametrize("cls,cfg", [(GATClassifier, SMALL_GAT), (GCNClassifier, SMALL_GCN)])
def test_full_model_grad_check(rng, cls, cfg):
    model = cls(cfg, seed=0)
    gs = [random_graph(rng, index=k, label=k % 2) for k in range(3)]
    names = sorted(model.params)
    err = grad_check(_full_model_loss(model, gs, names), [model.params[k] for k in names],
                     max_coords=12)
    assert err < 1e-4
