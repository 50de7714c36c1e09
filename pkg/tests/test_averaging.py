import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ambigraph.averaging import (
    AveragingConfig,
    clique_constrained_objective,
    edge_residuals,
    exhaustive_solve,
    irls_multigraph_averaging,
    lifted_gradient,
    lifted_objective,
    sigmoid,
    solve_lifted,
    solve_selected_averaging,
)
from ambigraph.exceptions import TooLarge
from ambigraph.geometry import angular_difference_deg, random_rotation
from ambigraph.harness import SceneConfig, generate_scene
from ambigraph.multigraph import build_multigraph
from oracles import fd_lifted_gradient, naive_clique_objective, naive_lifted_objective
from scenes import random_detections, scene_subset

seeds = st.integers(0, 2**32 - 1)


def _random_problem(seed, n_markers=4, n_images=3):
    rng = np.random.default_rng(seed)
    while True:
        views = {
            t: sorted(rng.choice(n_markers, size=int(rng.integers(2, n_markers + 1)), replace=False).tolist())
            for t in range(n_images)
        }
        g = build_multigraph(random_detections(rng, views), check_connected=False)
        if g.is_connected() and len(g.markers) == n_markers:
            break
    R = {m: random_rotation(rng) for m in g.markers}
    S = {k: float(rng.normal(scale=2.0)) for k in g.detection_keys}
    return g, R, S, rng


def _truth_rotations(truth, markers):
    return {m: truth.marker_poses[m].rotation.T for m in markers}


def _non_increasing(trace, tol=1e-12):
    return all(b <= a + tol * max(1.0, abs(a)) for a, b in zip(trace, trace[1:]))


class TestObjectives:
    @given(seeds)
    def test_lifted_matches_term_by_term_oracle(self, seed):
        g, R, S, _ = _random_problem(seed)
        assert lifted_objective(g, R, S) == pytest.approx(naive_lifted_objective(g, R, S), rel=1e-12)

    @given(seeds)
    def test_clique_matches_term_by_term_oracle(self, seed):
        g, R, _, rng = _random_problem(seed)
        bits = {k: int(rng.integers(0, 2)) for k in g.detection_keys}
        assert clique_constrained_objective(g, R, bits) == pytest.approx(naive_clique_objective(g, R, bits), rel=1e-12)

    @given(seeds)
    def test_lifted_reduces_to_clique_at_saturation(self, seed):
        g, R, _, rng = _random_problem(seed)
        bits = {k: int(rng.integers(0, 2)) for k in g.detection_keys}
        S = {k: 40.0 if b else -40.0 for k, b in bits.items()}
        assert lifted_objective(g, R, S) == pytest.approx(clique_constrained_objective(g, R, bits), rel=1e-12)

    def test_clique_rejects_soft_indicators(self):
        g, R, S, _ = _random_problem(0)
        with pytest.raises(ValueError):
            clique_constrained_objective(g, R, S)

    @given(st.floats(-700, 700))
    def test_sigmoid_symmetry(self, s):
        assert abs(sigmoid(s) + sigmoid(-s) - 1.0) <= 1e-15

    @given(seeds)
    def test_residuals_are_gauge_invariant(self, seed):
        g, R, _, rng = _random_problem(seed)
        G = random_rotation(rng)
        moved = {m: Rm @ G for m, Rm in R.items()}
        np.testing.assert_allclose(edge_residuals(g, moved), edge_residuals(g, R), atol=1e-12)

    def test_residual_bound(self):
        g, R, _, _ = _random_problem(1)
        assert np.all(edge_residuals(g, R) <= 2 * np.sqrt(2) + 1e-12)


class TestGradient:
    @settings(max_examples=20)
    @given(seeds)
    def test_matches_central_differences(self, seed):
        g, R, S, _ = _random_problem(seed)
        gR, gs = lifted_gradient(g, R, S)
        fR, fs = fd_lifted_gradient(lambda R_, S_: naive_lifted_objective(g, R_, S_), R, S, g.markers, g.detection_keys)
        anchor = g.markers[0]
        assert np.all(gR[anchor] == 0.0)
        a = np.concatenate([gR[m] for m in g.markers[1:]] + [[gs[k] for k in g.detection_keys]])
        b = np.concatenate([fR[m] for m in g.markers[1:]] + [[fs[k] for k in g.detection_keys]])
        assert np.linalg.norm(a - b) <= 1e-5 * np.linalg.norm(b)


class TestLiftedSolver:
    def test_noiseless_scene(self, noiseless_scene):
        truth, dets = noiseless_scene
        g = build_multigraph(dets)
        res = solve_lifted(g)
        assert res.objective < 1e-9
        assert _non_increasing(res.trace)
        est = res.rotations
        true = _truth_rotations(truth, g.markers)
        ref = g.markers[0]
        for m in g.markers:
            gap = angular_difference_deg(est[m] @ est[ref].T, true[m] @ true[ref].T)
            assert gap < 1e-6

    def test_trace_non_increasing_on_noisy_scene(self, noisy_scene):
        res = solve_lifted(build_multigraph(noisy_scene[1]))
        assert _non_increasing(res.trace)
        assert res.objective == pytest.approx(res.trace[-1])

    def test_result_matches_objective(self, noisy_scene):
        g = build_multigraph(noisy_scene[1])
        res = solve_lifted(g, config=AveragingConfig(max_iterations=50))
        assert lifted_objective(g, res.rotations, res.indicators) == pytest.approx(res.objective, rel=1e-12)
        assert res.iterations <= 50

    def test_restarts_never_worse(self):
        g, _ = scene_subset(0, noise_px=1.0)
        base = solve_lifted(g)
        multi = solve_lifted(g, config=AveragingConfig(restarts=3))
        assert multi.objective <= base.objective
        assert len(multi.info["start_objectives"]) == 4
        assert multi.objective == min(multi.info["start_objectives"])

    def test_deterministic(self):
        g, _ = scene_subset(2, noise_px=1.0)
        cfg = AveragingConfig(restarts=2, restart_seed=5)
        a, b = solve_lifted(g, config=cfg), solve_lifted(g, config=cfg)
        assert a.trace == b.trace
        assert a.indicators == b.indicators

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"robust_norm": "cauchy"},
            {"scale": 0.0},
            {"max_iterations": 0},
            {"max_indicator_step": 0.0},
            {"sharpen_iterations": -1},
            {"restarts": -1},
        ],
    )
    def test_config_validation(self, kwargs):
        with pytest.raises(ValueError):
            AveragingConfig(**kwargs)


class TestIrls:
    @pytest.mark.parametrize("norm", ["geman_mcclure", "huber", "l1"])
    def test_trace_non_increasing(self, noisy_scene, norm):
        res = irls_multigraph_averaging(build_multigraph(noisy_scene[1]), AveragingConfig(robust_norm=norm))
        assert _non_increasing(res.trace)
        assert len(res.edge_weights) == 4 * build_multigraph(noisy_scene[1]).n_pairs

    def test_noiseless_scene_recovers_rotations(self, noiseless_scene):
        truth, dets = noiseless_scene
        g = build_multigraph(dets)
        res = irls_multigraph_averaging(g)
        true = _truth_rotations(truth, g.markers)
        ref = g.markers[0]
        for m in g.markers:
            est = res.rotations[m] @ res.rotations[ref].T
            assert angular_difference_deg(est, true[m] @ true[ref].T) < 1e-3

    def test_scale_annealed_to_floor(self, noisy_scene):
        cfg = AveragingConfig(irls_max_iterations=100)
        res = irls_multigraph_averaging(build_multigraph(noisy_scene[1]), cfg)
        assert res.info["final_scale"] == pytest.approx(cfg.scale_floor)


class TestExhaustive:
    def test_noiseless_optimum_is_zero_at_truth(self):
        truth, _ = generate_scene(SceneConfig(n_markers=6, n_images=30, noise_px=0.0, seed=1))
        g, labels = scene_subset(1, noise_px=0.0, max_detections=10)
        assert clique_constrained_objective(g, _truth_rotations(truth, g.markers), labels) < 1e-9
        R, S, f = exhaustive_solve(g)
        assert f < 1e-6
        assert naive_clique_objective(g, R, S) == pytest.approx(f, abs=1e-9)

    def test_not_worse_than_truth(self):
        g, labels = scene_subset(4, noise_px=2.0, max_detections=10)
        truth, _ = generate_scene(SceneConfig(n_markers=6, n_images=30, noise_px=2.0, seed=4))
        _, _, f = exhaustive_solve(g)
        at_truth = naive_clique_objective(g, _truth_rotations(truth, g.markers), labels)
        assert f <= at_truth + 1e-9

    def test_selected_averaging_agrees(self):
        g, _ = scene_subset(3, noise_px=1.0, max_detections=10)
        R, S, f = exhaustive_solve(g)
        _, f2 = solve_selected_averaging(g, S)
        assert f2 == pytest.approx(f, rel=1e-3)

    def test_too_large(self, noisy_scene):
        with pytest.raises(TooLarge):
            exhaustive_solve(build_multigraph(noisy_scene[1]))

