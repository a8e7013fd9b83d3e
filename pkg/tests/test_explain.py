import json

import numpy as np
import pytest

from epigat.config import GatConfig
from epigat.errors import EmptySampleSet, InvalidTopK
from epigat.explain import (EdgeImportance, NodeImportance, connectome_svg, directed_attention,
                            edge_importance, export_connectome, gradcam_node_importance,
                            load_connectome, node_importance)
from epigat.models import GATClassifier, GraphBatch
from conftest import random_graph


@pytest.fixture
def model():
    return GATClassifier(GatConfig(hidden=8, heads=2), seed=4)


def uniform_model():
    m = GATClassifier(GatConfig(hidden=8, heads=2), seed=0)
    for k in m.params:
        if k.endswith(".a") or k.endswith(".W_e"):
            m.params[k][:] = 0.0
    return m


def test_uniform_attention_gives_one_over_14(rng):
    ei = edge_importance(uniform_model(), [random_graph(rng) for _ in range(3)])
    np.testing.assert_allclose(ei.directed, 1 / 14, atol=1e-15)
    np.testing.assert_allclose(ei.self_loops, 1 / 14, atol=1e-15)
    assert np.all(np.diag(ei.matrix) == 0)


def test_single_sample_single_head_hand_extraction(rng):
    m = GATClassifier(GatConfig(hidden=8, heads=2, concat=True), seed=1)
    g = random_graph(rng)
    out = m.forward([g])
    alpha = out.attn2.mean(axis=1)
    src, dst = g.edges
    ref = np.zeros((14, 14))
    for k in range(len(src)):
        ref[dst[k], src[k]] = alpha[k]
    np.testing.assert_array_equal(directed_attention(m, [g])[0], ref)
    ei = edge_importance(m, [g])
    np.testing.assert_allclose(ei.matrix[3, 7], (ref[3, 7] + ref[7, 3]) / 2, atol=1e-15)


def test_two_sample_mean(model, rng):
    a, b = random_graph(rng, index=0), random_graph(rng, index=1)
    ea, eb, eab = (edge_importance(model, s) for s in ([a], [b], [a, b]))
    np.testing.assert_allclose(eab.matrix, (ea.matrix + eb.matrix) / 2, atol=1e-12)
    np.testing.assert_allclose(eab.self_loops, (ea.self_loops + eb.self_loops) / 2, atol=1e-12)


def test_rows_sum_to_one_and_order_invariance(model, rng):
    gs = [random_graph(rng, index=k) for k in range(6)]
    ei = edge_importance(model, gs)
    np.testing.assert_allclose(ei.directed.sum(axis=1), 1.0, atol=1e-9)
    np.testing.assert_array_equal(ei.matrix, ei.matrix.T)
    rev = edge_importance(model, gs[::-1])
    np.testing.assert_allclose(rev.matrix, ei.matrix, atol=1e-14)


def test_empty_samples(model):
    with pytest.raises(EmptySampleSet):
        edge_importance(model, [])
    with pytest.raises(EmptySampleSet):
        node_importance(model, [])


def test_gradcam_zero_gradient(model, rng):
    model.params["mlp.W2"][:, 1] = 0.0
    np.testing.assert_array_equal(gradcam_node_importance(model, random_graph(rng), 1), 0.0)


def test_gradcam_linear_head_closed_form(model, rng):
    g = random_graph(rng)
    p = model.params
    st = model.bn["mlp"]
    st.running_mean = rng.normal(size=st.running_mean.size)
    st.running_var = rng.uniform(0.5, 2.0, st.running_var.size)
    h2 = model.forward([g]).embeddings.value
    pooled = h2.sum(axis=0)
    scale = p["mlp.bn_gamma"] / np.sqrt(st.running_var + st.eps)
    pre = (pooled @ p["mlp.W1"] + p["mlp.b1"] - st.running_mean) * scale + p["mlp.bn_beta"]
    # d logit_1 / d H2[v] is the same for every node v
    w = p["mlp.W1"] @ (scale * (pre > 0) * p["mlp.W2"][:, 1])
    expected = np.maximum(h2 @ w, 0.0)
    np.testing.assert_allclose(gradcam_node_importance(model, g, 1), expected, atol=1e-9)


def test_gradcam_nonnegative(model, rng):
    for k in range(5):
        assert np.all(gradcam_node_importance(model, random_graph(rng, index=k), k % 2) >= 0)
    ni = node_importance(model, [random_graph(rng) for _ in range(3)])
    assert ni.scores.shape == (14,)


def _ei(rng):
    d = rng.uniform(size=(14, 14))
    sym = (d + d.T) / 2
    np.fill_diagonal(sym, 0)
    return EdgeImportance(sym, np.diag(d).copy(), d)


def test_svg_top_k_zero_has_only_nodes(rng):
    svg = connectome_svg(_ei(rng), None, 0)
    assert 'class="edge"' not in svg
    assert svg.count('class="node"') == 14


def test_svg_edges_drawn_once(rng):
    ei = _ei(rng)
    svg = connectome_svg(ei, NodeImportance(rng.uniform(size=14)), 91)
    assert svg.count('class="edge"') == 91
    pairs = [line.split('data-pair="')[1].split('"')[0] for line in svg.splitlines()
             if 'class="edge"' in line]
    assert len({frozenset(p.split("-")) for p in pairs}) == 91


def test_ranked_excludes_diagonal(rng):
    ei = _ei(rng)
    ranked = ei.ranked()
    assert len(ranked) == 91 and all(i < j for i, j, _ in ranked)
    ws = [w for _, _, w in ranked]
    assert ws == sorted(ws, reverse=True)


def test_export_roundtrip(tmp_path, rng):
    ei, ni = _ei(rng), NodeImportance(rng.uniform(size=14))
    jpath, spath = export_connectome(ei, ni, 10, tmp_path)
    back, nback = load_connectome(jpath)
    assert back.matrix.tobytes() == ei.matrix.tobytes()
    assert nback.scores.tobytes() == ni.scores.tobytes()
    assert spath.read_text().count('class="edge"') == 10
    d = json.loads(jpath.read_text())
    assert len(d["ranked_edges"]) == 91


@pytest.mark.parametrize("k", [-1, 92])
def test_invalid_top_k(tmp_path, rng, k):
    with pytest.raises(InvalidTopK):
        export_connectome(_ei(rng), None, k, tmp_path)


def test_batched_attention_matches_single(model, rng):
    gs = [random_graph(rng, index=k) for k in range(4)]
    batched = directed_attention(model, gs)
    for k, g in enumerate(gs):
        np.testing.assert_allclose(batched[k], directed_attention(model, [g])[0], atol=1e-12)
    assert GraphBatch(gs).n_graphs == 4
