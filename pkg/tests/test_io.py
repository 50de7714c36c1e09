import jsonschema
import numpy as np
import pytest

from ambigraph.exceptions import MissingGroundTruth
from ambigraph.io import DETECTIONS_SCHEMA, csv_text, dumps, read_scene, require_truth, scene_document


def test_scene_round_trip(noisy_scene):
    truth, dets = noisy_scene
    doc = scene_document(truth.intrinsics, truth.marker_size, dets, truth, truth.config)
    jsonschema.validate(doc, DETECTIONS_SCHEMA)
    K, size, back, truth2 = read_scene(doc)
    assert size == truth.marker_size and K == truth.intrinsics
    assert [d.key for d in back] == sorted(d.key for d in dets)
    by_key = {d.key: d for d in dets}
    for d in back:
        np.testing.assert_array_equal(d.corners2d, by_key[d.key].corners2d)
        np.testing.assert_allclose(d.pose1.rotation, by_key[d.key].pose1.rotation, atol=1e-12)
    assert truth2.labels == truth.labels
    for k, p in truth.m2c.items():
        np.testing.assert_allclose(truth2.m2c[k].as_matrix(), p.as_matrix(), atol=1e-12)


def test_document_is_stable(noisy_scene):
    truth, dets = noisy_scene
    a = dumps(scene_document(truth.intrinsics, truth.marker_size, dets, truth))
    b = dumps(scene_document(truth.intrinsics, truth.marker_size, list(reversed(dets)), truth))
    assert a == b


def test_require_truth():
    with pytest.raises(MissingGroundTruth):
        require_truth(None)


def test_csv_text():
    assert csv_text(["a", "b"], [[1, 0.5], [2, float("nan")]]) == "a,b\n1,0.5\n2,nan\n"
