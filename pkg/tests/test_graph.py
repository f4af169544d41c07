import numpy as np
import pytest

from armik.datagen import FamilySpec, generate_config_dataset, sample_family_configs
from armik.evaluation import convex_angle_distance
from armik.graph import (
    FeatureStats,
    build_edge_features,
    build_graph,
    build_node_features,
    dataset_targets,
    draw_reference_angles,
    edge_count,
    node_feature_names,
    normalize_features,
    topology,
)
from armik.seeding import substream


@pytest.fixture(scope="module")
def ds3():
    spec = FamilySpec(dof=3, n_configs=1, samples_per_config=1, seed=606)
    config = sample_family_configs(spec)[0]
    return config, generate_config_dataset(config, 300, substream(606, "graph-tests"), {"config": "c0"})


class TestTopology:
    def test_edge_counts(self):
        assert edge_count(5, "N") == 8
        assert edge_count(5, "F") == 20
        for dof in (3, 5, 6):
            for conn in ("N", "F"):
                senders, receivers = topology(dof, conn)
                assert senders.shape[0] == edge_count(dof, conn)
                assert np.all(senders != receivers)  # no self-loops

    def test_neighbourly_pairs(self):
        senders, receivers = topology(3, "N")
        pairs = set(zip(senders.tolist(), receivers.tolist()))
        assert pairs == {(0, 1), (1, 0), (1, 2), (2, 1)}

    def test_canonical_order_receiver_major(self):
        for dof, conn in ((3, "N"), (5, "F"), (6, "N")):
            senders, receivers = topology(dof, conn)
            keys = list(zip(receivers.tolist(), senders.tolist()))
            assert keys == sorted(keys)

    def test_unknown_tokens(self):
        with pytest.raises(ValueError):
            topology(3, "X")
        with pytest.raises(ValueError):
            edge_count(3, "Q")


class TestBuildGraph:
    def test_de_feature_length(self, ds3):
        _, ds = ds3
        graph = build_graph(ds.row(0), "N", "DE")
        assert graph.nodes.shape == (3, 7)
        assert len(node_feature_names("DE")) == 7

    def test_rg_feature_length_and_band(self, ds3):
        _, ds = ds3
        rng = substream(1, "refs")
        graph = build_graph(ds.row(0), "N", "RG", rng=rng)
        assert graph.nodes.shape == (3, 8)
        theta = np.array([ds.row(0)[f"theta_deg_{j}"] for j in (1, 2, 3)])
        ref = graph.nodes[:, 7]
        assert np.all(convex_angle_distance(ref, theta) <= 10.0)

    def test_reference_band_tracks_target_across_seam(self):
        rng = substream(2, "refs-band")
        theta = np.full(2000, 5.0)
        refs = draw_reference_angles(theta, rng)
        # band [-5, 15) around 5 deg; no fold into [0, 360)
        assert refs.min() >= -5.0 and refs.max() < 15.0
        assert np.any(refs < 0.0)
        assert np.all(convex_angle_distance(refs % 360.0, theta) <= 10.0)

    def test_pose_broadcast_to_all_nodes(self, ds3):
        _, ds = ds3
        graph = build_graph(ds.row(5), "F", "DE")
        assert np.all(graph.nodes[:, :6] == graph.nodes[0, :6])

    def test_targets_are_radians(self, ds3):
        _, ds = ds3
        row = ds.row(2)
        graph = build_graph(row, "N", "DE")
        expected = np.array([row[f"theta_deg_{j}"] for j in (1, 2, 3)]) * np.pi / 180.0
        np.testing.assert_allclose(graph.targets, expected, atol=1e-12)

    def test_adjacent_edge_reads_later_joint(self, ds3):
        config, ds = ds3
        graph = build_graph(ds.row(0), "N", "DE")
        for s, r, feats in zip(graph.senders, graph.receivers, graph.edge_feats):
            later = max(s, r)
            joint = config.joints[later]
            assert feats[0] == joint.alpha
            assert feats[1] == pytest.approx(joint.a + joint.d)

    def test_full_connectivity_long_edges_cumulative(self, ds3):
        config, ds = ds3
        graph = build_graph(ds.row(0), "F", "DE")
        seg = [j.a + j.d for j in config.joints]
        for s, r, feats in zip(graph.senders, graph.receivers, graph.edge_feats):
            lo, hi = min(s, r), max(s, r)
            if hi - lo > 1:
                assert feats[0] == 0.0
                assert feats[1] == pytest.approx(sum(seg[lo + 1 : hi + 1]))

    def test_direction_symmetric_edge_features(self, ds3):
        _, ds = ds3
        graph = build_graph(ds.row(1), "F", "DE")
        feats = {(int(s), int(r)): tuple(f) for s, r, f in zip(graph.senders, graph.receivers, graph.edge_feats)}
        for (s, r), f in feats.items():
            assert feats[(r, s)] == f

    def test_unknown_mode_rejected(self, ds3):
        _, ds = ds3
        with pytest.raises(ValueError):
            build_graph(ds.row(0), "N", "XX")
        with pytest.raises(ValueError):
            build_graph(ds.row(0), "Z", "DE")

    def test_rg_needs_reference_source(self, ds3):
        _, ds = ds3
        with pytest.raises(ValueError):
            build_graph(ds.row(0), "N", "RG")

    def test_batch_builders_match_single(self, ds3):
        _, ds = ds3
        nodes = build_node_features(ds, "DE")
        edges = build_edge_features(ds, "F")
        targets = dataset_targets(ds)
        for i in (0, 7, 123):
            graph = build_graph(ds.row(i), "F", "DE")
            assert np.array_equal(nodes[i], graph.nodes)
            assert np.array_equal(edges[i], graph.edge_feats)
            assert np.array_equal(targets[i], graph.targets)


class TestFeatureStats:
    def test_constant_channel_maps_to_zero_and_is_flagged(self, ds3):
        _, ds = ds3
        nodes = build_node_features(ds, "DE")
        edges = build_edge_features(ds, "N")
        stats = FeatureStats.compute(nodes, edges)
        # single config: every edge twist is constant
        assert stats.edge_clamped[0]
        normalized = stats.normalize_edges(edges)
        assert np.all(normalized[:, :, 0] == 0.0)

    def test_normalize_denormalize_round_trip(self, ds3):
        _, ds = ds3
        nodes = build_node_features(ds, "DE")
        edges = build_edge_features(ds, "N")
        stats = FeatureStats.compute(nodes, edges)
        back = stats.denormalize_nodes(stats.normalize_nodes(nodes))
        assert np.abs(back - nodes).max() < 1e-12
        back_e = stats.denormalize_edges(stats.normalize_edges(edges))
        assert np.abs(back_e - edges).max() < 1e-12

    def test_training_means_vanish_after_normalization(self, ds3):
        _, ds = ds3
        nodes = build_node_features(ds, "DE")
        edges = build_edge_features(ds, "N")
        stats = FeatureStats.compute(nodes, edges)
        flat = stats.normalize_nodes(nodes).reshape(-1, nodes.shape[-1])
        assert np.abs(flat.mean(axis=0)).max() < 1e-10
        live = ~stats.node_clamped
        assert np.abs(flat.std(axis=0)[live] - 1.0).max() < 1e-10

    def test_graph_normalization_leaves_targets(self, ds3):
        _, ds = ds3
        nodes = build_node_features(ds, "DE")
        edges = build_edge_features(ds, "N")
        stats = FeatureStats.compute(nodes, edges)
        graph = build_graph(ds.row(0), "N", "DE")
        normalized = normalize_features(graph, stats)
        assert np.array_equal(normalized.targets, graph.targets)
        assert np.array_equal(normalized.nodes, stats.normalize_nodes(graph.nodes))

    def test_serialization_round_trip(self, ds3):
        _, ds = ds3
        stats = FeatureStats.compute(build_node_features(ds, "DE"), build_edge_features(ds, "N"))
        back = FeatureStats.from_dict(stats.to_dict())
        assert np.array_equal(back.node_mean, stats.node_mean)
        assert np.array_equal(back.node_std, stats.node_std)
        assert np.array_equal(back.node_clamped, stats.node_clamped)
        assert np.array_equal(back.edge_mean, stats.edge_mean)
