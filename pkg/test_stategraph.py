"""
Tests for the graph representation and the state distance metrics.
"""

from itertools import permutations

import numpy as np
import pytest

from build_graph import (EDGE_WIDTH, MESH_EDGE, build_graph, env_descriptor, make_node_sampler,
                         node_feature_width, radius_pairs, sampler_from_cfg)
from calculate_bipartite_distance import calculate_bipartite_distance
from calculate_chamfer_distance import calculate_chamfer_distance
from calculate_footprint_iou import calculate_footprint_iou
from clothsim import ClothConfig, make_cloth
from config_defaults import get_cfg_defaults
from envsdf import make_scenario, sdf_query
from quantify_state_distance import quantify_state_distance
from voxel_downsample import voxel_downsample


def _grid(n=13, spacing=0.025, z=0.1):
    r, c = np.meshgrid(np.arange(n), np.arange(n), indexing='ij')
    return np.column_stack([r.ravel() * spacing, c.ravel() * spacing, np.full(n * n, z)])


def test_voxel_downsample():
    """Test voxel centroids and the point-to-node mapping."""
    print("Testing voxel_downsample...")
    pts = np.array([[0.005, 0.005, 0.005], [0.006, 0.005, 0.005]])
    centroids, mapping = voxel_downsample(pts, 0.0216)
    assert len(centroids) == 1, f"Two close points should merge, got {len(centroids)} nodes"
    assert np.allclose(centroids[0], pts.mean(axis=0)), "Node should sit at the midpoint"
    assert list(mapping) == [0, 0], "Both points should map to node 0"

    grid = _grid(5, 0.05, 0.01)
    centroids, mapping = voxel_downsample(grid, 0.0216)
    assert len(centroids) == len(grid), "Points 0.05 m apart should each get a node"
    assert np.allclose(centroids[mapping], grid), "Singleton voxels should reproduce their points"

    empty, mapping = voxel_downsample(np.zeros((0, 3)), 0.0216)
    assert empty.shape == (0, 3) and len(mapping) == 0, "Empty input should give empty output"
    with pytest.raises(ValueError):
        voxel_downsample(grid, 0.0)

    cloth = make_cloth(ClothConfig(rows=13, cols=13)).positions
    centroids, mapping = voxel_downsample(cloth, 0.0216)
    buckets = {}
    for p in cloth:
        buckets.setdefault(tuple(np.floor(p / 0.0216).astype(int)), []).append(p)
    assert len(centroids) == len(buckets), f"Expected {len(buckets)} voxels, got {len(centroids)}"
    for node, p in zip(mapping, cloth):
        members = buckets[tuple(np.floor(p / 0.0216).astype(int))]
        assert np.allclose(centroids[node], np.mean(members, axis=0)), "Centroid does not match its bucket"
    print("✓ voxel_downsample tests passed")


def test_build_graph_features():
    """Test node and edge features of a static cloth over flat ground."""
    print("Testing build_graph...")
    scene = make_scenario('flat')
    x = _grid()
    history = np.repeat(x[None], 6, axis=0)
    mesh = np.array([[0, 1], [1, 2]])
    sample = build_graph(history, scene, [0, 12], 0.045, 0.01, mesh)

    assert sample.node_features.shape == (169, node_feature_width(5)) == (169, 21), "Node features must be 21 wide"
    assert sample.edge_features.shape == (sample.n_edges, EDGE_WIDTH), "One feature row per directed edge"
    assert EDGE_WIDTH == 6, "Edge features must be 6 wide"
    assert np.all(sample.node_features[:, :15] == 0.0), "Static history should give zero velocities"
    assert np.allclose(sample.node_features[:, 17:], [0.1, 0, 0, 1]), "Descriptor over flat ground at z=0.1"
    assert np.array_equal(sample.node_features[[0, 12], 16], [1.0, 1.0]), "Picked one-hot not set"
    assert sample.node_features[1, 15] == 1.0, "Free nodes should be flagged as free"
    assert not sample.padded, "A full window should not be padded"

    pairs = set(zip(sample.senders.tolist(), sample.receivers.tolist()))
    assert all((j, i) in pairs for i, j in pairs), "Edges must be present in both directions"
    d = np.linalg.norm(x[sample.senders] - x[sample.receivers], axis=1)
    types = np.argmax(sample.edge_features[:, 4:], axis=1)
    assert np.all((d < 0.045) | (types == MESH_EDGE)), "Every edge must be short or a mesh edge"
    assert np.sum(types == MESH_EDGE) == 4, "Two mesh edges give four directed edges"
    assert np.allclose(sample.edge_features[:, 3], d), "Edge length feature mismatch"

    short = build_graph(history[:3], scene, [0, 12], 0.045, 0.01)
    assert short.padded, "Short histories should be flagged"
    assert short.node_features.shape[1] == 21, "Padding should keep the feature width"
    print("✓ build_graph tests passed")


def test_radius_edges_match_brute_force():
    """Test radius edges against an O(M^2) pair scan, also after reordering nodes."""
    print("Testing radius edges...")
    x = _grid() + np.random.default_rng(0).normal(0.0, 0.003, size=(169, 3))
    found = {tuple(p) for p in radius_pairs(x, 0.045).tolist()}
    brute = {(i, j) for i in range(len(x)) for j in range(i + 1, len(x)) if np.linalg.norm(x[i] - x[j]) < 0.045}
    assert found == brute, f"Radius edges differ from the brute-force scan ({len(found)} vs {len(brute)})"

    perm = np.random.default_rng(1).permutation(len(x))
    permuted = {tuple(sorted((perm[i], perm[j]))) for i, j in radius_pairs(x[perm], 0.045).tolist()}
    assert permuted == brute, "Radius edge set should not depend on node order"
    print("✓ radius edge tests passed")


def test_env_descriptor_matches_sdf():
    """Test the descriptor against direct SDF queries and the ground-only variant."""
    scene = make_scenario('platform')
    x = np.random.default_rng(2).uniform([0.2, -0.3, 0.16], [0.7, 0.3, 0.4], size=(50, 3))
    d, g = sdf_query(scene, x)
    assert np.array_equal(env_descriptor(scene, x), np.column_stack([d, g])), "Descriptor must equal sdf_query"
    ground = env_descriptor(scene, x, 'ground')
    assert np.allclose(ground[:, 0], x[:, 2]) and np.allclose(ground[:, 1:], [0, 0, 1]), "Ground-only descriptor"


def test_node_samplers():
    """Test grid and voxel node samplers."""
    state = make_cloth(ClothConfig(rows=13, cols=13))
    full = make_node_sampler(state, 'grid', 1)
    assert full.n_nodes == 169 and list(full.picked_nodes) == [0, 12], "Full grid keeps every particle"
    coarse = make_node_sampler(state, 'grid', 3)
    assert coarse.grid_shape == (4, 4), f"Downsampling 13 by 3 should keep 4 rows, got {coarse.grid_shape}"
    assert np.allclose(coarse.nodes(state.positions)[coarse.picked_nodes], state.picker_positions), \
        "Grasped corners must survive downsampling"
    voxel = make_node_sampler(state, 'voxel', voxel=0.0216)
    nodes = voxel.nodes(state.positions)
    assert nodes.shape == (voxel.n_nodes, 3), "Voxel sampler should give one position per node"
    assert np.all(voxel.mesh_edges[:, 0] < voxel.mesh_edges[:, 1]), "Mesh edges should be ordered pairs"


@pytest.mark.parametrize('side', [40, 17])
def test_default_sampler_gives_model_grid(side):
    """Test that the default graph settings coarsen a fine cloth to the 13 x 13 model grid."""
    print("Testing the default node sampler...")
    cfg = get_cfg_defaults()
    assert cfg.GRAPH.downsample == 3, "Default grid subsampling factor should be 3"
    state = make_cloth(ClothConfig(rows=side, cols=side))
    sampler = sampler_from_cfg(state, cfg.GRAPH)
    assert sampler.grid_shape == (13, 13), f"A {side} x {side} cloth should give 13 x 13 nodes"
    nodes = sampler.nodes(state.positions)
    assert np.allclose(nodes[sampler.picked_nodes], state.picker_positions), "Grasped corners must be nodes"

    history = np.repeat(nodes[None], cfg.GRAPH.n_history + 1, axis=0)
    sample = build_graph(history, make_scenario('flat'), sampler.picked_nodes, cfg.GRAPH.radius, cfg.SIM.dt,
                         sampler.mesh_edges, n_history=cfg.GRAPH.n_history)
    assert sample.node_features.shape[0] == 169, "build_graph should see the 169 coarse nodes"
    assert np.array_equal(np.nonzero(sample.node_features[:, 16])[0], np.sort(sampler.picked_nodes)), \
        "Picked flags should sit on the coarse corner nodes"

    small = make_cloth(ClothConfig(rows=9, cols=9))
    assert sampler_from_cfg(small, cfg.GRAPH).grid_shape == (9, 9), "Cloths below the model grid stay whole"
    print("✓ default node sampler tests passed")


def test_bipartite_distance():
    """Test the matched mean distance against permutation brute force."""
    print("Testing bipartite distance...")
    rng = np.random.default_rng(3)
    a = rng.uniform(size=(8, 3))
    assert calculate_bipartite_distance(a, a) == 0.0, "Identical sets should have distance 0"

    two = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
    d = calculate_bipartite_distance(two, two + [0.01, 0.0, 0.0])
    assert abs(d - 0.01) < 1e-12, f"Translated pair should have distance 0.01, got {d}"

    for _ in range(200):
        n, m = rng.integers(1, 7, size=2)
        s, g = rng.uniform(size=(n, 3)), rng.uniform(size=(m, 3))
        small, large = (s, g) if n <= m else (g, s)
        best = min(
            np.mean(np.linalg.norm(small - large[list(p)], axis=1))
            for p in permutations(range(len(large)), len(small))
        )
        d = calculate_bipartite_distance(s, g, threshold=10.0)
        assert abs(d - best) < 1e-12, f"Assignment {d} differs from brute force {best}"

    b = rng.uniform(size=(8, 3))
    assert abs(calculate_bipartite_distance(a, b, 10.0) - calculate_bipartite_distance(b, a, 10.0)) < 1e-12, \
        "Distance should be symmetric for equal cardinalities"
    shift = np.array([3.0, -2.0, 1.0])
    assert abs(calculate_bipartite_distance(a + shift, b + shift, 10.0)
               - calculate_bipartite_distance(a, b, 10.0)) < 1e-12, "Distance should be translation-consistent"

    far = calculate_bipartite_distance(a, a + [5.0, 0.0, 0.0], threshold=0.1)
    assert far == 0.1, f"Saturated distance should equal the threshold, got {far}"
    with pytest.raises(ValueError):
        calculate_bipartite_distance(np.zeros((0, 3)), a)
    print("✓ bipartite distance tests passed")


def test_chamfer_distance():
    """Test the symmetric Chamfer distance."""
    print("Testing chamfer distance...")
    rng = np.random.default_rng(4)
    a = rng.uniform(size=(10, 3))
    assert calculate_chamfer_distance(a, a) == 0.0, "Identical sets should have distance 0"
    d = calculate_chamfer_distance([[0.0, 0.0, 0.0]], [[0.05, 0.0, 0.0]])
    assert abs(d - 0.05) < 1e-12, f"Singletons 0.05 m apart, got {d}"

    base = _grid(5, 0.1, 0.0)[:20] + rng.uniform(-0.01, 0.01, size=(20, 3))
    d = calculate_chamfer_distance(base, base + [0.02, 0.0, 0.0])
    assert abs(d - 0.02) < 1e-12, f"Shifted copy should be 0.02 away, got {d}"
    print("✓ chamfer distance tests passed")


def test_footprint_iou():
    """Test footprint IoU on identical, disjoint and half-overlapping squares."""
    print("Testing footprint IoU...")
    k = np.arange(100)
    xx, yy = np.meshgrid(0.005 + 0.01 * k, 0.005 + 0.01 * k, indexing='ij')
    square = np.column_stack([xx.ravel(), yy.ravel(), np.zeros(xx.size)])

    assert calculate_footprint_iou(square, square) == 1.0, "Identical footprints should give 1"
    assert calculate_footprint_iou(square, square + [2.0, 0.0, 0.0]) == 0.0, "Disjoint footprints should give 0"
    iou = calculate_footprint_iou(square, square + [0.5, 0.0, 0.0], cell=0.01)
    assert abs(iou - 1.0 / 3.0) < 0.05 / 3.0, f"Half overlap should be near 1/3, got {iou}"
    with pytest.raises(ValueError):
        calculate_footprint_iou(square, square, cell=0.0)
    print("✓ footprint IoU tests passed")


def test_quantify_state_distance():
    """Test the combined report."""
    a = _grid(5)
    report = quantify_state_distance(a, a + [0.01, 0.0, 0.0])
    assert abs(report.mean_matched_distance - 0.01) < 1e-12, "MPE of a 1 cm shift"
    assert abs(report.chamfer - 0.01) < 1e-12, "Chamfer of a 1 cm shift"
    assert 0.0 <= report.iou <= 1.0, "IoU must be a ratio"
    assert set(report.as_record()) == {'mean_matched_distance', 'chamfer', 'iou'}


def test_state_distance_progress_lines(capsys):
    """Test that each metric announces itself when verbose and stays silent otherwise."""
    a = _grid(5)
    quantify_state_distance(a, a, verbose=True)
    out = capsys.readouterr().out.splitlines()
    assert out == ['-   Calculating: Bipartite matching distance', '-   Calculating: Chamfer distance',
                   '-   Calculating: Footprint IoU'], f"Unexpected progress lines: {out}"
    quantify_state_distance(a, a)
    assert capsys.readouterr().out == '', "Metrics should be silent by default"


if __name__ == '__main__':
    pytest.main([__file__, '-v'])
