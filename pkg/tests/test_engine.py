import numpy as np
import pytest

from scenepeel.components import OracleCompleter, OracleSegmenter
from scenepeel.engine import (
    EngineConfig,
    EngineContractError,
    carve_holes,
    decompose,
    dedup_detections,
    read_trace,
    select_fully_visible,
    write_trace,
)
from scenepeel.raster import BBox, bbox_from_mask, mask_area
from scenepeel.scene import Detection, composite
from scenepeel.synth import SynthConfig, generate_scene, ground_truth_matrix
from tests.conftest import build_scene, rect_mask


def det(mask, class_score=1.0, nonocc=1.0, ref_id=None, category="c"):
    return Detection(
        bbox=bbox_from_mask(mask),
        category=category,
        class_score=class_score,
        mask=mask,
        nonocc_score=nonocc,
        ref_id=ref_id,
    )


CFG = EngineConfig()


# --- selection ----------------------------------------------------------------

def test_select_passes_thresholds():
    d = det(rect_mask(8, 8, 0, 0, 2, 2), class_score=0.9, nonocc=0.9)
    assert select_fully_visible([d], CFG) == [d]


def test_select_fallback_argmax_nonocc():
    masks = [rect_mask(8, 8, x, 0, 2, 2) for x in (0, 2, 4)]
    dets = [
        det(masks[0], class_score=0.9, nonocc=0.1),
        det(masks[1], class_score=0.8, nonocc=0.4),
        det(masks[2], class_score=0.7, nonocc=0.3),
    ]
    assert select_fully_visible(dets, CFG) == [dets[1]]


def test_select_fallback_tiebreaks():
    low = rect_mask(8, 8, 0, 4, 2, 2)  # centroid lower on canvas
    high = rect_mask(8, 8, 0, 0, 2, 2)
    dets = [det(low, class_score=0.9, nonocc=0.2), det(high, class_score=0.9, nonocc=0.2)]
    # same scores: topmost centroid wins
    assert select_fully_visible(dets, CFG) == [dets[1]]


def test_select_empty_errors():
    with pytest.raises(ValueError):
        select_fully_visible([], CFG)


def test_selected_ordered_best_first():
    a = det(rect_mask(8, 8, 0, 0, 2, 2), class_score=0.8, nonocc=0.9)
    b = det(rect_mask(8, 8, 4, 0, 2, 2), class_score=0.9, nonocc=1.0)
    assert select_fully_visible([a, b], CFG) == [b, a]


# --- carve ---------------------------------------------------------------------

def test_carve_no_masks():
    img = np.full((6, 6, 3), 50, dtype=np.uint8)
    masked, hole = carve_holes(img, [])
    assert hole.sum() == 0
    assert np.array_equal(masked, img)


def test_carve_disjoint_and_overlapping():
    img = np.zeros((8, 8, 3), dtype=np.uint8)
    a = rect_mask(8, 8, 0, 0, 2, 2)
    b = rect_mask(8, 8, 4, 4, 2, 2)
    _, hole = carve_holes(img, [a, b])
    assert hole.sum() == 8
    c = rect_mask(8, 8, 1, 1, 2, 2)
    _, hole = carve_holes(img, [a, c])
    assert hole.sum() == int((a | c).sum()) < a.sum() + c.sum()


def test_carve_fills_sentinel():
    img = np.zeros((4, 4, 3), dtype=np.uint8)
    a = rect_mask(4, 4, 0, 0, 2, 2)
    masked, hole = carve_holes(img, [a])
    assert np.all(masked[hole] == 128)
    assert np.all(masked[~hole] == 0)


# --- dedup ----------------------------------------------------------------------

def test_dedup_keeps_higher_class_score():
    m = rect_mask(8, 8, 0, 0, 4, 4)
    near = m.copy()
    near[0, 0] = False
    d1 = det(m, class_score=0.8)
    d2 = det(near, class_score=0.9)
    kept = dedup_detections([d1, d2], 0.9)
    assert kept == [d2]
    far = det(rect_mask(8, 8, 4, 4, 3, 3), class_score=0.1)
    assert set(id(k) for k in dedup_detections([d1, far], 0.9)) == {id(d1), id(far)}


# --- decompose -------------------------------------------------------------------

def _scene(seed=13, **kw):
    defaults = dict(width=96, height=96, min_objects=4, max_objects=7, size_min=16, size_max=40)
    defaults.update(kw)
    return generate_scene(SynthConfig(seed=seed, **defaults))


def test_decompose_empty_scene():
    scene = build_scene([], width=32, height=32)
    res = decompose(composite(scene), OracleSegmenter(scene), OracleCompleter(scene), CFG)
    assert len(res.trace.steps) == 0
    assert res.matrix.n == 0


def test_oracle_round_trip_small():
    scene = _scene()
    res = decompose(composite(scene), OracleSegmenter(scene), OracleCompleter(scene), CFG)
    assert sorted(res.trace.instance_ids) == sorted(scene.ids)
    for rec in scene.instances:
        assert np.array_equal(res.masks[rec.id], rec.amodal_mask)
    gt = ground_truth_matrix(scene)
    ids = sorted(scene.ids)
    assert np.array_equal(res.matrix.reordered(ids).entries, gt.reordered(ids).entries)
    assert np.array_equal(res.trace.final_image, scene.background)


def test_decompose_rerun_identical():
    scene = _scene(seed=21)
    r1 = decompose(composite(scene), OracleSegmenter(scene), OracleCompleter(scene), CFG)
    r2 = decompose(composite(scene), OracleSegmenter(scene), OracleCompleter(scene), CFG)
    assert r1.step_of == r2.step_of and r1.substep_of == r2.substep_of
    for s1, s2 in zip(r1.trace.steps, r2.trace.steps):
        assert s1.selected_ids == s2.selected_ids
        assert np.array_equal(s1.completed_image, s2.completed_image)


def test_monotone_progress_and_step_budget():
    scene = _scene(seed=31)
    seg = OracleSegmenter(scene)
    res = decompose(composite(scene), seg, OracleCompleter(scene), CFG)
    assert len(res.trace.steps) <= min(CFG.max_steps, len(scene))
    sizes = [len(s.selected) for s in res.trace.steps]
    assert all(n >= 1 for n in sizes)
    assert sum(sizes) == len(scene)


def _chain_scene(depth, width=64):
    """Vertically nested rectangles forming a depth-long occlusion chain."""
    shapes = []
    palette = [(int(10 + 20 * k) % 255, 80, (40 * k) % 255) for k in range(depth)]
    for k in range(depth):
        m = rect_mask(width, width, 2 + k, 2 + k, width - 4 - 2 * k, width - 4 - 2 * k)
        shapes.append((k + 1, k, m, palette[k]))
    return build_scene(shapes, width, width)


def test_deep_chain_truncates_at_max_steps():
    scene = _chain_scene(12)
    res = decompose(composite(scene), OracleSegmenter(scene), OracleCompleter(scene), EngineConfig(max_steps=10))
    assert len(res.trace.steps) == 10
    remaining = set(scene.ids) - set(res.trace.instance_ids)
    assert len(remaining) == 2
    assert not (remaining & set(res.matrix.ids))


def test_max_steps_one():
    scene = _scene(seed=3)
    res = decompose(composite(scene), OracleSegmenter(scene), OracleCompleter(scene), EngineConfig(max_steps=1))
    assert len(res.trace.steps) == 1


class _LeakyCompleter:
    """Touches one pixel outside the hole: must be rejected."""

    def __init__(self, scene):
        self._inner = OracleCompleter(scene)

    def observe_step(self, step_index, selected):
        self._inner.observe_step(step_index, selected)

    def complete(self, image, hole):
        out = np.array(self._inner.complete(image, hole), copy=True)
        ys, xs = np.nonzero(~hole)
        out[ys[0], xs[0], 0] ^= 0xFF
        return out


def test_contract_violation_names_step():
    scene = _scene(seed=17)
    with pytest.raises(EngineContractError, match="step 0") as err:
        decompose(composite(scene), OracleSegmenter(scene), _LeakyCompleter(scene), CFG)
    assert err.value.step_index == 0
    assert "outside the hole" in str(err.value)


class _StaticSegmenter:
    def __init__(self, dets):
        self._dets = dets
        self.calls = 0

    def segment(self, image):
        self.calls += 1
        return list(self._dets) if self.calls == 1 else []


class _IdentityCompleter:
    def complete(self, image, hole):
        return image


def test_low_class_scores_stop_the_loop():
    d = det(rect_mask(8, 8, 0, 0, 2, 2), class_score=0.2, nonocc=1.0)
    seg = _StaticSegmenter([d])
    res = decompose(np.zeros((8, 8, 3), dtype=np.uint8), seg, _IdentityCompleter(), CFG)
    assert len(res.trace.steps) == 0


def test_detection_cap_by_class_score():
    masks = [rect_mask(32, 32, 2 * k, 0, 2, 2) for k in range(6)]
    dets = [det(m, class_score=1.0 - 0.01 * k, nonocc=1.0) for k, m in enumerate(masks)]
    seg = _StaticSegmenter(dets)
    cfg = EngineConfig(max_detections=3)
    res = decompose(np.zeros((32, 32, 3), dtype=np.uint8), seg, _IdentityCompleter(), cfg)
    assert len(res.trace.steps[0].selected) == 3


def test_engine_assigns_fresh_ids_without_refs():
    masks = [rect_mask(32, 32, 4 * k, 0, 3, 3) for k in range(3)]
    dets = [det(m, nonocc=1.0) for m in masks]
    res = decompose(np.zeros((32, 32, 3), dtype=np.uint8), _StaticSegmenter(dets), _IdentityCompleter(), CFG)
    assert sorted(res.trace.instance_ids) == [0, 1, 2]


# --- trace round trip -------------------------------------------------------------

def test_trace_round_trip(tmp_path):
    scene = _scene(seed=41)
    res = decompose(composite(scene), OracleSegmenter(scene), OracleCompleter(scene), CFG)
    write_trace(res, tmp_path / "t", dump_steps=True, completer="oracle")
    bundle = read_trace(tmp_path / "t")
    assert bundle.completer == "oracle"
    assert sorted(p.id for p in bundle.instances) == sorted(scene.ids)
    for p in bundle.instances:
        assert np.array_equal(p.mask, res.masks[p.id])
    assert np.array_equal(bundle.final_image, res.trace.final_image)
    ids = sorted(res.matrix.ids)
    assert np.array_equal(bundle.matrix.reordered(ids).entries, res.matrix.reordered(ids).entries)

    rebuilt = bundle.to_result()
    assert rebuilt.step_of == res.step_of
    for s1, s2 in zip(rebuilt.trace.steps, res.trace.steps):
        assert np.array_equal(s1.completed_image, s2.completed_image)
        assert np.array_equal(s1.hole_mask, s2.hole_mask)


def test_trace_without_steps_cannot_rebuild(tmp_path):
    scene = _scene(seed=43)
    res = decompose(composite(scene), OracleSegmenter(scene), OracleCompleter(scene), CFG)
    write_trace(res, tmp_path / "t", dump_steps=False)
    bundle = read_trace(tmp_path / "t")
    assert not bundle.has_step_images
    with pytest.raises(ValueError, match="dump_steps"):
        bundle.to_result()
