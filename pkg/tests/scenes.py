"""Small synthetic instances shared by the test modules."""
from __future__ import annotations

import numpy as np

from ambigraph.geometry import RigidPose, random_rotation
from ambigraph.harness import SceneConfig, generate_scene
from ambigraph.multigraph import build_multigraph
from ambigraph.ppe import AmbiguousDetection


def scene_subset(seed: int, noise_px: float = 2.0, max_detections: int = 12):
    """Tiny instance cut from a standard generated scene.

    Images with at least two markers are added in order while the total stays
    within ``max_detections``; the result is the largest connected piece.
    Returns ``(graph, truth_labels)``.
    """
    rng = np.random.default_rng(seed)
    truth, dets = generate_scene(SceneConfig(n_markers=6, n_images=30, noise_px=noise_px, seed=seed))
    by_image: dict[int, list] = {}
    for d in dets:
        by_image.setdefault(d.image_id, []).append(d)
    order = [t for t in rng.permutation(sorted(by_image)).tolist() if len(by_image[t]) >= 2]
    chosen: list = []
    for t in order:
        if len(chosen) + len(by_image[t]) <= max_detections:
            trial = chosen + by_image[t]
            if len(build_multigraph(trial, check_connected=False).components()) == 1:
                chosen = trial
    g = build_multigraph(chosen)
    return g, {d.key: truth.labels[d.key] for d in chosen}


def fake_detection(t: int, i: int, R0, R1=None, err0: float = 0.1, err1: float = 0.2) -> AmbiguousDetection:
    """Detection with prescribed hypothesis rotations (corners are placeholders)."""
    R1 = R0 if R1 is None else R1
    tr = np.array([0.0, 0.0, 2.0])
    return AmbiguousDetection(t, i, np.zeros((4, 2)), RigidPose(R0, tr), RigidPose(R1, tr), err0, err1)


def random_detections(rng, views: dict[int, list[int]], duplicate: float = 0.0) -> list[AmbiguousDetection]:
    """Detections with random hypotheses for the given covisibility sets."""
    out = []
    for t, ms in views.items():
        for i in ms:
            R0 = random_rotation(rng)
            R1 = R0 if rng.uniform() < duplicate else random_rotation(rng)
            e = np.sort(rng.uniform(0.01, 1.0, size=2))
            out.append(fake_detection(t, i, R0, R1, e[0], e[1]))
    return out
