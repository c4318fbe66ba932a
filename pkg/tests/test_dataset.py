import json

import numpy as np
import pytest

from scenepeel.dataset import (
    ANNOTATIONS_SCHEMA,
    DatasetFormatError,
    read_dataset,
    record_from_scene,
    validate_annotations,
    write_dataset,
)
from scenepeel.raster import mask_to_rle
from scenepeel.scene import composite
from scenepeel.synth import SynthConfig, ground_truth_matrix, scene_for_index
from tests.conftest import build_scene, rect_mask


def _records(count=6, seed=99):
    cfg = SynthConfig(width=96, height=96, min_objects=3, max_objects=6,
                      size_min=16, size_max=40, seed=seed)
    out = []
    for i in range(count):
        scene = scene_for_index(cfg, i)
        out.append(record_from_scene(scene, i, ground_truth_matrix(scene), composite(scene)))
    return out


def test_round_trip_identity(tmp_path):
    records = _records()
    write_dataset(records, tmp_path)
    back = read_dataset(tmp_path)
    assert back == records


def test_annotations_schema_valid(tmp_path):
    write_dataset(_records(count=2), tmp_path)
    payload = json.loads((tmp_path / "annotations.json").read_text())
    validate_annotations(payload)  # should not raise
    assert {"categories", "images", "annotations"} <= set(payload)


def test_two_instance_pairwise_rows(tmp_path):
    front = rect_mask(16, 16, 2, 2, 8, 8)
    back = rect_mask(16, 16, 6, 6, 8, 8)
    scene = build_scene([(1, 0, front, (200, 0, 0)), (2, 1, back, (0, 200, 0))], 16, 16)
    rec = record_from_scene(scene, 0, ground_truth_matrix(scene), composite(scene))
    write_dataset([rec], tmp_path)
    payload = json.loads((tmp_path / "annotations.json").read_text())
    rows = [a["pairwise_order"] for a in payload["annotations"]]
    assert rows == [[0, 1], [-1, 0]]
    orders = [a["layer_order"] for a in payload["annotations"]]
    assert orders == [0, 1]


def test_read_rejects_visible_outside_amodal(tmp_path):
    write_dataset(_records(count=1), tmp_path)
    payload = json.loads((tmp_path / "annotations.json").read_text())
    ann = payload["annotations"][0]
    h, w = payload["images"][0]["height"], payload["images"][0]["width"]
    ann["segmentation_visible"] = mask_to_rle(np.ones((h, w), dtype=bool))
    (tmp_path / "annotations.json").write_text(json.dumps(payload))
    with pytest.raises(DatasetFormatError, match="not contained"):
        read_dataset(tmp_path)


def test_read_rejects_bad_run_lengths(tmp_path):
    write_dataset(_records(count=1), tmp_path)
    payload = json.loads((tmp_path / "annotations.json").read_text())
    payload["annotations"][0]["segmentation_amodal"]["counts"] = [1, 2]
    (tmp_path / "annotations.json").write_text(json.dumps(payload))
    with pytest.raises(DatasetFormatError, match="annotation id"):
        read_dataset(tmp_path)


def test_read_rejects_inconsistent_layer_order(tmp_path):
    write_dataset(_records(count=1), tmp_path)
    payload = json.loads((tmp_path / "annotations.json").read_text())
    payload["annotations"][0]["layer_order"] += 1
    (tmp_path / "annotations.json").write_text(json.dumps(payload))
    with pytest.raises(DatasetFormatError, match="layer_order"):
        read_dataset(tmp_path)


def test_malformed_json_names_location(tmp_path):
    write_dataset(_records(count=1), tmp_path)
    (tmp_path / "annotations.json").write_text('{"categories": [,]}')
    with pytest.raises(DatasetFormatError, match="line 1"):
        read_dataset(tmp_path)


def test_schema_violation_names_path(tmp_path):
    write_dataset(_records(count=1), tmp_path)
    payload = json.loads((tmp_path / "annotations.json").read_text())
    payload["annotations"][0]["pairwise_order"] = [7]
    (tmp_path / "annotations.json").write_text(json.dumps(payload))
    with pytest.raises(DatasetFormatError, match="annotations/0/pairwise_order"):
        read_dataset(tmp_path)


def test_missing_image_file(tmp_path):
    write_dataset(_records(count=1), tmp_path)
    next((tmp_path / "images").glob("*.png")).unlink()
    with pytest.raises(DatasetFormatError, match="missing file"):
        read_dataset(tmp_path)


def test_empty_dataset_round_trip(tmp_path):
    write_dataset([], tmp_path)
    assert read_dataset(tmp_path) == []


def test_fully_hidden_instance_gets_null_visible_bbox(tmp_path):
    front = rect_mask(16, 16, 2, 2, 10, 10)
    hidden = rect_mask(16, 16, 4, 4, 3, 3)
    scene = build_scene([(1, 0, front, (9, 9, 9)), (2, 1, hidden, (5, 5, 5))], 16, 16)
    rec = record_from_scene(scene, 0, ground_truth_matrix(scene), composite(scene))
    write_dataset([rec], tmp_path)
    payload = json.loads((tmp_path / "annotations.json").read_text())
    hidden_ann = [a for a in payload["annotations"] if a["instance_id"] == 2][0]
    assert hidden_ann["bbox_visible"] is None
    validate_annotations(payload)
    assert read_dataset(tmp_path) == [rec]
