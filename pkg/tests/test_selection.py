import time

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ambigraph.multigraph import build_multigraph, is_consistent_clique
from ambigraph.selection import (
    EdgeWeightTable,
    brute_force_mwc,
    disambiguate,
    edge_weights,
    solve_mwc,
    weight_ratio,
)
from oracles import brute_mwc, phi


def _random_table(rng, V):
    S = {(0, i): float(rng.normal(scale=3.0)) for i in range(V)}
    return S, edge_weights(S, 0, range(V))


class TestWeightRatio:
    def test_zero_is_fully_ambiguous(self):
        assert weight_ratio(0.0) == 1.0

    @pytest.mark.parametrize("s", [50.0, -50.0])
    def test_saturation(self, s):
        assert weight_ratio(s) < 1e-20

    @given(st.floats(-700, 700))
    def test_symmetric_and_bounded(self, s):
        assert weight_ratio(s) == weight_ratio(-s)
        assert 0.0 <= weight_ratio(s) <= 1.0


class TestEdgeWeights:
    def test_worked_example(self):
        S = {(0, 1): np.log(0.9 / 0.1), (0, 2): np.log(0.8 / 0.2)}
        w = edge_weights(S, 0, [1, 2])
        np.testing.assert_allclose(w.weights[(1, 2)], [0.02, 0.08, 0.18, 0.72], atol=1e-15)

    def test_all_zero(self):
        w = edge_weights({(3, i): 0.0 for i in range(4)}, 3, range(4))
        for v in w.weights.values():
            np.testing.assert_array_equal(v, 0.25)

    @given(st.integers(0, 2**32 - 1))
    def test_rows_sum_to_one(self, seed):
        _, w = _random_table(np.random.default_rng(seed), 5)
        for v in w.weights.values():
            assert abs(v.sum() - 1.0) <= 1e-15

    def test_reversed_lookup(self):
        S = {(0, 1): 2.0, (0, 2): -1.0}
        w = edge_weights(S, 0, [2, 1])
        assert w.weight(2, 1, "01") == w.weight(1, 2, "10")


class TestSolveMwc:
    def test_two_markers(self):
        S = {(0, 1): np.log(9.0), (0, 2): np.log(4.0)}
        sel = solve_mwc(edge_weights(S, 0, [1, 2]))
        assert sel.bits == {1: 1, 2: 1}
        assert sel.score == pytest.approx(0.72)

    @pytest.mark.parametrize("V", [3, 9])
    def test_matches_enumeration_oracle(self, rng, V):
        for _ in range(20):
            S, table = _random_table(rng, V)
            sel = solve_mwc(table)
            best, maximizers = brute_mwc(list(range(V)), lambda i, j, a, b: table.weight(i, j, f"{a}{b}"))
            assert sel.score == pytest.approx(best, abs=1e-12)
            assert tuple(sel.bits[i] for i in range(V)) in maximizers

    def test_v9_is_fast(self, rng):
        _, table = _random_table(rng, 9)
        solve_mwc(table)
        t0 = time.perf_counter()
        for _ in range(20):
            solve_mwc(table)
        assert (time.perf_counter() - t0) / 20 < 1e-3

    @given(st.integers(0, 2**32 - 1), st.integers(2, 9))
    def test_equals_per_vertex_threshold(self, seed, V):
        S, table = _random_table(np.random.default_rng(seed), V)
        sel = solve_mwc(table)
        assert sel.bits == {i: int(phi(S[(0, i)]) > 0.5) for i in range(V)}
        assert sel.bits == brute_force_mwc(table)[0]

    def test_general_weights_match_brute_force(self, rng):
        # not product-form: the enumeration is still exact
        for _ in range(50):
            V = int(rng.integers(2, 7))
            ms = tuple(range(V))
            w = {(i, j): rng.uniform(size=4) for i in ms for j in ms if i < j}
            table = EdgeWeightTable(0, ms, w)
            sel = solve_mwc(table)
            assert sel.score == pytest.approx(brute_force_mwc(table)[1], abs=1e-12)

    @pytest.mark.parametrize("s, bit", [(0.3, 1), (-0.3, 0), (0.0, 0)])
    def test_single_marker_threshold(self, s, bit):
        assert solve_mwc(edge_weights({(0, 5): s}, 0, [5])).bits == {5: bit}

    def test_ties_prefer_hypothesis_zero(self):
        sel = solve_mwc(edge_weights({(0, 0): 0.0, (0, 1): 0.0, (0, 2): 0.0}, 0, range(3)))
        assert sel.bits == {0: 0, 1: 0, 2: 0}


class TestDisambiguate:
    def test_noiseless_scene_is_perfect(self, noiseless_scene):
        truth, dets = noiseless_scene
        res = disambiguate(dets)
        agree = [res.labels[d.key] == truth.labels[d.key] for d in dets]
        assert all(agree) or not any(agree)

    def test_keeps_every_detection(self, noisy_scene):
        _, dets = noisy_scene
        res = disambiguate(dets)
        assert set(res.labels) == {d.key for d in dets}
        assert set(res.weight_ratios) == {d.key for d in dets}

    def test_resolved_poses_and_cliques(self, noisy_scene):
        _, dets = noisy_scene
        res = disambiguate(dets)
        g = res.graph
        for d in dets:
            assert res.poses[d.key] is d.pose(res.labels[d.key])
        for t, sel in res.images.items():
            if len(g.images[t]) > 1:
                assert is_consistent_clique(g, t, sel.clique)

    def test_accepts_prebuilt_graph(self, noisy_scene):
        g = build_multigraph(noisy_scene[1])
        assert disambiguate(g).labels == disambiguate(noisy_scene[1]).labels
