import math

import numpy as np
import pytest

from relate3d import nn
from relate3d.geometry import Box3D
from relate3d.relation import (
    BOX_DIM, ProposalSet, RelationConfig, RelationModule, apply_residuals, box_difference, create_head,
    decode_box, encode_box, forward, init_nodes, layer_forward, refine, refine_head_forward, zero_head,
)
from relate3d.spatial_graph import GraphStrategy, RelationGraph, knn_graph

from conftest import random_box, straight_line_mlp

SMALL = RelationConfig(strategy=GraphStrategy("knn", k=4), num_layers=2, node_dim=8, input_feature_dim=5,
                       output_dim=6, head_hidden=(7,))


def random_proposals(rng, n, d=5, spread=8.0):
    boxes = [random_box(rng, spread=spread) for _ in range(n)]
    return ProposalSet(boxes, rng.normal(size=(n, d)))


def module_with_biases(config, seed=0):
    m = RelationModule.create(config, seed)
    r = np.random.default_rng(seed + 100)
    for p in [m.init_mlp, *m.edge_mlps, m.projection]:
        for b in p.biases:
            b[...] = r.normal(0, 0.2, size=b.shape)
    return m


# -- box vectors --------------------------------------------------------------

def test_encode_examples():
    assert encode_box(Box3D(0, 0, 0, 1, 1, 1, 0)).tolist() == [0, 0, 0, 1, 1, 1, 0]
    assert encode_box(Box3D(0, 0, 0, 1, 1, 1, 0.7))[6] == 0.7
    b = Box3D(1.25, -3.5, 0.4, 1.6, 1.7, 4.1, -2.9)
    assert decode_box(encode_box(b)) == b


def test_box_difference_examples():
    b = Box3D(1, 2, 3, 1, 2, 3, 0.5)
    assert not box_difference(b, b).any()
    d = box_difference(b.replace(theta=3.0), b.replace(theta=-3.0))
    assert d[6] == pytest.approx(6.0 - 2 * math.pi, abs=1e-12)
    assert d[6] == pytest.approx(-0.2832, abs=1e-4)


def test_box_difference_translation_exact(rng):
    # dyadic coordinates keep the shifted sums exact
    for _ in range(100):
        a, b = (Box3D(*(np.round(rng.normal(0, 10, 3) * 1024) / 1024), 1.5, 1.6, 4.0, rng.uniform(-3, 3))
                for _ in range(2))
        t = np.round(rng.normal(0, 50, 3) * 64) / 64
        shift = dict(zip("xyz", t))
        ta = a.replace(**{k: getattr(a, k) + v for k, v in shift.items()})
        tb = b.replace(**{k: getattr(b, k) + v for k, v in shift.items()})
        assert np.array_equal(box_difference(ta, tb), box_difference(a, b))


# -- config and module --------------------------------------------------------

def test_full_size_shape_contract(rng):
    cfg = RelationConfig(num_layers=4, node_dim=256, output_dim=256)
    assert cfg.concat_dim == 1280
    m = RelationModule.create(cfg, 0)
    assert m.projection.weights[0].shape == (1280, 256)
    props = random_proposals(rng, 10, d=32)
    out, states = forward(m, props)
    assert out.shape == (10, 256)
    assert len(states) == 5 and all(s.shape == (10, 256) for s in states)


def test_config_json_round_trip():
    cfg = SMALL.with_flags(use_box_diff=False)
    assert RelationConfig.from_json(cfg.to_json()) == cfg


def test_config_validation():
    with pytest.raises(ValueError):
        RelationConfig(num_layers=0)
    with pytest.raises(ValueError):
        RelationConfig(node_box_scale=(1.0,) * 6)
    with pytest.raises(ValueError):
        RelationConfig(diff_box_scale=(1.0,) * 6 + (0.0,))


def test_module_json_round_trip(rng):
    m = module_with_biases(SMALL)
    back = RelationModule.from_json(m.to_json())
    props = random_proposals(rng, 7)
    assert np.array_equal(forward(m, props)[0], forward(back, props)[0])
    with pytest.raises(ValueError):
        RelationModule.from_json({**m.to_json(), "format_version": 99})


def test_ablation_flags_change_widths():
    cfg = SMALL.with_flags(use_init_box=False, use_box_diff=False, use_feature_append=False)
    assert cfg.init_in_dim == 5
    assert cfg.edge_in_dim == 16
    assert cfg.concat_dim == 8
    m = RelationModule.create(cfg, 0)
    assert m.init_mlp.spec.in_dim == 5


# -- node init ----------------------------------------------------------------

def test_init_nodes_empty_and_duplicates(rng):
    m = module_with_biases(SMALL)
    assert init_nodes(m, ProposalSet([], np.zeros((0, 5)))).shape == (0, 8)
    b = random_box(rng)
    f = rng.normal(size=5)
    v = init_nodes(m, ProposalSet([b, b], np.stack([f, f])))
    assert np.array_equal(v[0], v[1])


def test_init_nodes_matches_standalone_mlp(rng):
    cfg = RelationConfig(**{**SMALL.to_json(), "strategy": SMALL.strategy, "node_box_scale": (1.0,) * 7})
    m = module_with_biases(cfg)
    props = random_proposals(rng, 9)
    v = init_nodes(m, props)
    for i in range(9):
        row = np.concatenate([props.features[i], encode_box(props.boxes[i])])[None]
        assert np.array_equal(v[i], straight_line_mlp(m.init_mlp, row)[0])


def test_init_nodes_dim_mismatch(rng):
    m = module_with_biases(SMALL)
    with pytest.raises(nn.ShapeError):
        init_nodes(m, random_proposals(rng, 3, d=4))


# -- layers -------------------------------------------------------------------

def test_isolated_node_passes_through(rng):
    m = module_with_biases(SMALL)
    v = rng.normal(size=(3, 8))
    boxes = [random_box(rng) for _ in range(3)]
    g = RelationGraph(3, ((1,), (0,), ()))
    out = layer_forward(m, 0, v, boxes, g)
    assert np.array_equal(out[2], v[2])


def test_symmetric_pair_gets_equal_states(rng):
    m = module_with_biases(SMALL)
    b = random_box(rng)
    v = np.tile(rng.normal(size=8), (2, 1))
    out = layer_forward(m, 1, v, [b, b], RelationGraph(2, ((1,), (0,))))
    assert np.array_equal(out[0], out[1])


def test_single_neighbor_is_one_edge_mlp(rng):
    m = module_with_biases(SMALL)
    boxes = [random_box(rng) for _ in range(2)]
    v = rng.normal(size=(2, 8))
    out = layer_forward(m, 0, v, boxes, RelationGraph(2, ((1,), ())))
    diff = box_difference(boxes[1], boxes[0]) * np.asarray(SMALL.diff_box_scale)
    edge_in = np.concatenate([v[1] - v[0], diff, v[0]])[None]
    assert np.array_equal(out[0], straight_line_mlp(m.edge_mlps[0], edge_in)[0])


def test_box_diff_flag_drops_box_term(rng):
    cfg = SMALL.with_flags(use_box_diff=False)
    m = module_with_biases(cfg)
    boxes = [random_box(rng) for _ in range(2)]
    v = rng.normal(size=(2, 8))
    g = RelationGraph(2, ((1,), ()))
    out = layer_forward(m, 0, v, boxes, g)
    moved = [boxes[0], boxes[1].replace(x=boxes[1].x + 3.0, theta=boxes[1].theta + 1.0)]
    assert np.array_equal(out, layer_forward(m, 0, v, moved, g))
    edge_in = np.concatenate([v[1] - v[0], v[0]])[None]
    assert np.array_equal(out[0], straight_line_mlp(m.edge_mlps[0], edge_in)[0])


# -- full forward -------------------------------------------------------------

def test_single_proposal_chain(rng):
    m = module_with_biases(SMALL)
    props = random_proposals(rng, 1)
    out, states = forward(m, props)
    v0 = states[0]
    assert all(np.array_equal(s, v0) for s in states)
    concat = np.tile(v0, (1, SMALL.num_layers + 1))
    assert np.array_equal(out, straight_line_mlp(m.projection, concat))


def test_permutation_equivariance(rng):
    m = module_with_biases(SMALL)
    for _ in range(10):
        n = int(rng.integers(2, 25))
        props = random_proposals(rng, n)
        g = knn_graph(props.centers(), 4)
        perm = rng.permutation(n)
        out, _ = forward(m, props, g)
        pout, _ = forward(m, props.permute(perm), g.permute(perm))
        assert np.array_equal(out[perm], pout)


def test_neighbor_order_invariance(rng):
    m = module_with_biases(SMALL)
    props = random_proposals(rng, 15)
    g = knn_graph(props.centers(), 5)
    shuffled = RelationGraph(15, tuple(tuple(rng.permutation(row)) for row in g.neighbors))
    assert np.array_equal(forward(m, props, g)[0], forward(m, props, shuffled)[0])


def test_edgeless_graph_rows_are_independent(rng):
    m = module_with_biases(SMALL)
    props = random_proposals(rng, 6)
    g = RelationGraph.empty(6)
    out, _ = forward(m, props, g)
    other = ProposalSet(props.boxes[:1] + [random_box(rng) for _ in range(5)],
                        np.vstack([props.features[:1], rng.normal(size=(5, 5))]))
    assert np.array_equal(forward(m, other, g)[0][0], out[0])


def test_output_is_not_translation_invariant(rng):
    m = module_with_biases(SMALL)
    props = random_proposals(rng, 8)
    moved = ProposalSet([b.replace(x=b.x + 5.0, y=b.y - 3.0) for b in props.boxes], props.features)
    assert not np.array_equal(forward(m, props)[0], forward(m, moved)[0])


def test_graph_size_mismatch(rng):
    m = module_with_biases(SMALL)
    with pytest.raises(nn.ShapeError):
        forward(m, random_proposals(rng, 4), RelationGraph.empty(3))


# -- head ---------------------------------------------------------------------

def test_zero_head_keeps_boxes(rng):
    m = module_with_biases(SMALL)
    props = random_proposals(rng, 5)
    boxes, scores = refine(m, zero_head(SMALL), props)
    assert boxes == props.boxes
    assert np.array_equal(scores, np.full(5, 0.5))


def test_fresh_head_is_identity_refinement(rng):
    m = module_with_biases(SMALL)
    props = random_proposals(rng, 5)
    boxes, _ = refine(m, create_head(SMALL, 3), props)
    assert boxes == props.boxes


def test_residual_wraps_heading():
    b = Box3D(0, 0, 0, 1, 1, 1, math.pi / 2)
    (out,) = apply_residuals([b], [[0, 0, 0, 0, 0, 0, math.pi]])
    assert out.theta == pytest.approx(-math.pi / 2, abs=1e-12)


def test_residual_sizes_stay_positive():
    (out,) = apply_residuals([Box3D(0, 0, 0, 1, 1, 1, 0)], [[0, 0, 0, -5, 0, 0, 0]])
    assert out.h > 0


def test_head_matches_standalone_mlp(rng):
    head = create_head(SMALL, 1)
    head.weights[-1][...] = rng.normal(size=head.weights[-1].shape)
    feats = rng.normal(size=(4, SMALL.output_dim))
    residuals, logits = refine_head_forward(head, feats)
    full = straight_line_mlp(head, feats)
    assert np.array_equal(residuals, full[:, :BOX_DIM])
    assert np.array_equal(logits, full[:, BOX_DIM])
