import itertools
from math import comb

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ambigraph.exceptions import DisconnectedGraph
from ambigraph.geometry import angular_difference_deg, random_rotation
from ambigraph.multigraph import (
    LABEL_STR,
    EdgeKey,
    build_multigraph,
    clique_bits,
    induced_clique,
    is_consistent_clique,
    m2m_relative,
    random_label_init,
    spanning_tree_init,
)
from scenes import fake_detection, random_detections

FIG3_VIEWS = {1: [1, 2, 3, 4], 2: [1, 2], 3: [3, 4]}


@pytest.fixture
def fig3_graph(rng):
    return build_multigraph(random_detections(rng, FIG3_VIEWS))


class TestM2MRelative:
    def test_identity_for_equal_rotations(self, rng):
        R = random_rotation(rng)
        np.testing.assert_allclose(m2m_relative(R, R), np.eye(3), atol=1e-14)

    def test_transpose_symmetry(self, rng):
        A, B = random_rotation(rng), random_rotation(rng)
        np.testing.assert_allclose(m2m_relative(A, B).T, m2m_relative(B, A), atol=1e-15)

    @given(st.integers(0, 2**32 - 1))
    def test_loop_closure(self, seed):
        rng = np.random.default_rng(seed)
        Ri, Rj, Rk = (random_rotation(rng) for _ in range(3))
        np.testing.assert_allclose(m2m_relative(Rj, Rk) @ m2m_relative(Ri, Rj), m2m_relative(Ri, Rk), atol=1e-12)


class TestBuild:
    def test_fig3_has_eight_edges_between_1_and_2(self, fig3_graph):
        between = [k for k in fig3_graph.edges if (k.i, k.j) == (1, 2)]
        assert len(between) == 8

    def test_single_image_edge_count(self, rng):
        g = build_multigraph(random_detections(rng, {0: [0, 1, 2, 3]}))
        assert len(g.edges) == 24

    @settings(max_examples=25)
    @given(st.integers(0, 2**32 - 1))
    def test_edge_count_formula(self, seed):
        rng = np.random.default_rng(seed)
        views = {t: sorted(rng.choice(6, size=int(rng.integers(2, 6)), replace=False).tolist()) for t in range(4)}
        g = build_multigraph(random_detections(rng, views), check_connected=False)
        assert len(g.edges) == sum(4 * comb(len(ms), 2) for ms in views.values())

    def test_edges_follow_composition(self, fig3_graph):
        g = fig3_graph
        for k, R in g.edges.items():
            expected = g.detections[(k.t, k.j)].rotation(k.b).T @ g.detections[(k.t, k.i)].rotation(k.a)
            np.testing.assert_allclose(R, expected, atol=1e-12)

    def test_reversed_query_is_transpose_of_swapped_label(self, fig3_graph):
        g = fig3_graph
        for k in g.edges:
            np.testing.assert_array_equal(g.edge(k.t, k.j, k.i, k.ab[::-1]), g.edges[k].T)

    def test_reversed_label_differs(self, fig3_graph):
        R01 = fig3_graph.edge(1, 2, 1, "01")
        R10 = fig3_graph.edge(1, 2, 1, "10")
        assert angular_difference_deg(R01, R10) > 1e-6

    def test_duplicated_hypothesis_gives_equal_edges(self, rng):
        R = random_rotation(rng)
        dets = [fake_detection(0, 0, R), fake_detection(0, 1, random_rotation(rng), random_rotation(rng))]
        g = build_multigraph(dets)
        for b in "01":
            np.testing.assert_array_equal(g.edge(0, 0, 1, "0" + b), g.edge(0, 0, 1, "1" + b))

    def test_disconnected(self, rng):
        with pytest.raises(DisconnectedGraph) as exc:
            build_multigraph(random_detections(rng, {0: [0, 1], 1: [2, 3]}))
        assert sorted(map(sorted, exc.value.components)) == [[0, 1], [2, 3]]

    def test_duplicate_detection_rejected(self, rng):
        dets = random_detections(rng, {0: [0, 1]})
        with pytest.raises(ValueError):
            build_multigraph(dets + dets[:1])

    def test_order_independent(self, rng):
        dets = random_detections(rng, FIG3_VIEWS)
        a = build_multigraph(dets)
        b = build_multigraph(dets[::-1])
        assert a.detection_keys == b.detection_keys
        assert list(a.edges) == list(b.edges)
        np.testing.assert_array_equal(a.pair_rot, b.pair_rot)


class TestConsistentClique:
    @pytest.fixture
    def triangle(self, rng):
        return build_multigraph(random_detections(rng, {0: [1, 2, 3]}))

    def test_induced_edges_are_consistent(self, triangle):
        edges = [EdgeKey(0, 1, 2, "01"), EdgeKey(0, 1, 3, "00"), EdgeKey(0, 2, 3, "10")]
        assert is_consistent_clique(triangle, 0, edges)
        assert clique_bits(triangle, 0, edges) == {1: 0, 2: 1, 3: 0}

    def test_conflicting_selector(self, triangle):
        edges = [EdgeKey(0, 1, 2, "01"), EdgeKey(0, 1, 3, "10"), EdgeKey(0, 2, 3, "10")]
        assert not is_consistent_clique(triangle, 0, edges)

    def test_missing_pair(self, triangle):
        assert not is_consistent_clique(triangle, 0, [EdgeKey(0, 1, 2, "00"), EdgeKey(0, 1, 3, "00")])

    def test_two_edges_on_one_pair(self, triangle):
        edges = [EdgeKey(0, 1, 2, "00"), EdgeKey(0, 1, 2, "01"), EdgeKey(0, 1, 3, "00"), EdgeKey(0, 2, 3, "00")]
        assert not is_consistent_clique(triangle, 0, edges)

    def test_enumeration_gives_two_to_the_v(self, triangle):
        pairs = list(itertools.combinations([1, 2, 3], 2))
        count = 0
        for labels in itertools.product(LABEL_STR, repeat=len(pairs)):
            edges = [EdgeKey(0, i, j, ab) for (i, j), ab in zip(pairs, labels)]
            count += is_consistent_clique(triangle, 0, edges)
        assert count == 2**3

    @given(st.integers(2, 6), st.integers(0, 2**32 - 1))
    def test_induced_clique_round_trip(self, V, seed):
        rng = np.random.default_rng(seed)
        g = build_multigraph(random_detections(rng, {0: list(range(V))}))
        bits = {i: int(b) for i, b in enumerate(rng.integers(0, 2, size=V))}
        assert clique_bits(g, 0, induced_clique(0, bits)) == bits

    def test_duplicated_hypotheses_collapse_distinct_cliques(self, rng):
        R = random_rotation(rng)
        dets = [fake_detection(0, 0, R)] + random_detections(rng, {0: [1, 2]})
        g = build_multigraph(dets)
        distinct = set()
        for bits in itertools.product((0, 1), repeat=3):
            edges = induced_clique(0, dict(zip((0, 1, 2), bits)))
            distinct.add(tuple(np.round(np.concatenate([g.edges[e].ravel() for e in edges]), 12)))
        assert len(distinct) == 2**2


class TestSpanningTreeInit:
    def test_tree_size_single_image(self, rng):
        g = build_multigraph(random_detections(rng, {0: [0, 1, 2, 3, 4]}))
        init = spanning_tree_init(g)
        assert len(init.tree_edges) == 4
        assert set(init.rotations) == set(g.markers)
        np.testing.assert_array_equal(init.rotations[init.root], np.eye(3))

    def test_noiseless_scene_reproduces_relative_rotations(self, noiseless_scene):
        truth, dets = noiseless_scene
        init = spanning_tree_init(build_multigraph(dets))
        # R_i estimates P_i^T up to a common right factor
        for i, j in itertools.combinations(sorted(init.rotations), 2):
            est = init.rotations[j] @ init.rotations[i].T
            true = truth.marker_poses[j].rotation.T @ truth.marker_poses[i].rotation
            assert angular_difference_deg(est, true) < 1e-9 * 180 / np.pi

    def test_indicators_follow_cheapest_edge(self, rng):
        g = build_multigraph(random_detections(rng, FIG3_VIEWS))
        init = spanning_tree_init(g, sigma0=2.0)
        assert set(init.indicators) == set(g.detection_keys)
        assert all(abs(v) == 2.0 for v in init.indicators.values())
        # err0 <= err1 everywhere, so the cheapest label is always 00
        assert all(v == -2.0 for v in init.indicators.values())

    def test_deterministic(self, rng):
        dets = random_detections(rng, FIG3_VIEWS)
        a, b = spanning_tree_init(build_multigraph(dets)), spanning_tree_init(build_multigraph(dets[::-1]))
        assert a.tree_edges == b.tree_edges
        for m in a.rotations:
            np.testing.assert_array_equal(a.rotations[m], b.rotations[m])

    def test_disconnected(self, rng):
        g = build_multigraph(random_detections(rng, {0: [0, 1], 1: [2, 3]}), check_connected=False)
        with pytest.raises(DisconnectedGraph):
            spanning_tree_init(g)


class TestRandomLabelInit:
    def test_forced_labels_follow_tree_edges(self, rng):
        g = build_multigraph(random_detections(rng, FIG3_VIEWS))
        p_one = {k: float(k[1] % 2) for k in g.detection_keys}
        init = random_label_init(g, np.random.default_rng(0), sigma0=3.0, p_one=p_one)
        assert init.indicators == {k: 3.0 if p else -3.0 for k, p in p_one.items()}
        assert len(init.tree_edges) == len(g.markers) - 1
        for e in init.tree_edges:
            assert e.ab == f"{e.i % 2}{e.j % 2}"
            est = init.rotations[e.j] @ init.rotations[e.i].T
            np.testing.assert_allclose(est, g.edges[e], atol=1e-12)

    def test_true_labels_reproduce_noiseless_scene(self, noiseless_scene):
        truth, dets = noiseless_scene
        g = build_multigraph(dets)
        p_one = {k: float(truth.labels[k]) for k in g.detection_keys}
        init = random_label_init(g, np.random.default_rng(5), p_one=p_one)
        for i, j in itertools.combinations(g.markers, 2):
            est = init.rotations[j] @ init.rotations[i].T
            true = truth.marker_poses[j].rotation.T @ truth.marker_poses[i].rotation
            assert angular_difference_deg(est, true) < 1e-6

    def test_seeded(self, rng):
        g = build_multigraph(random_detections(rng, FIG3_VIEWS))
        a = random_label_init(g, np.random.default_rng(9))
        b = random_label_init(g, np.random.default_rng(9))
        assert a.indicators == b.indicators and a.tree_edges == b.tree_edges

    def test_disconnected(self, rng):
        g = build_multigraph(random_detections(rng, {0: [0, 1], 1: [2, 3]}), check_connected=False)
        with pytest.raises(DisconnectedGraph):
            random_label_init(g, rng)
