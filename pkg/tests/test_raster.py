import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scenepeel.raster import (
    BBox,
    DimensionMismatchError,
    bbox_from_mask,
    image_from_png,
    image_to_png,
    mask_from_png,
    mask_iou,
    mask_to_png,
    mask_to_rle,
    overlap_area,
    rle_to_mask,
    shift_mask,
)
from tests.conftest import mask_from_rows


def test_iou_identity_and_disjoint():
    a = mask_from_rows(["0110", "0110"])
    assert mask_iou(a, a) == 1.0
    b = mask_from_rows(["1001", "1001"])
    assert mask_iou(a, b) == 0.0


def test_iou_empty_union_is_zero():
    z = np.zeros((3, 3), dtype=bool)
    assert mask_iou(z, z) == 0.0


def test_iou_shifted_block():
    # 2x2 block against itself shifted 1px right: overlap 2, union 6
    a = np.zeros((4, 4), dtype=bool)
    a[1:3, 1:3] = True
    b = shift_mask(a, 1, 0)
    assert mask_iou(a, b) == pytest.approx(1 / 3)


def test_iou_dimension_mismatch():
    with pytest.raises(DimensionMismatchError):
        mask_iou(np.zeros((2, 2), dtype=bool), np.zeros((3, 2), dtype=bool))


def test_overlap_examples():
    a = mask_from_rows(["11111"])
    assert overlap_area(a, a) == 5
    assert overlap_area(a, ~a) == 0


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=40, deadline=None)
def test_overlap_matches_per_pixel_oracle(seed):
    rng = np.random.default_rng(seed)
    a = rng.random((9, 7)) < 0.4
    b = rng.random((9, 7)) < 0.4
    brute = sum(bool(a[y, x]) and bool(b[y, x]) for y in range(9) for x in range(7))
    assert overlap_area(a, b) == brute


def test_iou_symmetric_random():
    rng = np.random.default_rng(5)
    for _ in range(20):
        a = rng.random((8, 8)) < 0.5
        b = rng.random((8, 8)) < 0.5
        assert mask_iou(a, b) == mask_iou(b, a)
        assert overlap_area(a, b) <= min(a.sum(), b.sum())


def test_bbox_examples():
    m = np.zeros((6, 8), dtype=bool)
    m[4, 3] = True
    assert bbox_from_mask(m) == BBox(3, 4, 1, 1)
    assert bbox_from_mask(np.ones((6, 8), dtype=bool)) == BBox(0, 0, 8, 6)


def test_bbox_l_shape_scan_oracle():
    m = mask_from_rows(
        [
            "00000",
            "01000",
            "01000",
            "01110",
            "00000",
        ]
    )
    ys, xs = np.nonzero(m)
    expect = BBox(int(xs.min()), int(ys.min()), int(xs.max() - xs.min() + 1), int(ys.max() - ys.min() + 1))
    assert bbox_from_mask(m) == expect
    assert expect == BBox(1, 1, 3, 3)


def test_bbox_empty_mask_errors():
    with pytest.raises(ValueError):
        bbox_from_mask(np.zeros((3, 3), dtype=bool))


def test_bbox_rejects_degenerate_extents():
    with pytest.raises(ValueError):
        BBox(0, 0, 0, 3)


def test_png_round_trips():
    rng = np.random.default_rng(0)
    img = rng.integers(0, 256, size=(13, 9, 3), dtype=np.uint8)
    assert np.array_equal(image_from_png(image_to_png(img)), img)
    mask = rng.random((13, 9)) < 0.5
    assert np.array_equal(mask_from_png(mask_to_png(mask)), mask)


def test_rle_mask_round_trip_and_orientation():
    m = mask_from_rows(["10", "01"])
    rle = mask_to_rle(m)
    assert rle["size"] == [2, 2]
    # column-major: pixels (0,0)=1,(1,0)=0,(0,1)=0,(1,1)=1
    assert rle["counts"] == [0, 1, 2, 1]
    assert np.array_equal(rle_to_mask(rle), m)


def test_shift_mask_clips():
    m = mask_from_rows(["11", "11"])
    out = shift_mask(m, 1, 0)
    assert out.sum() == 2
    assert shift_mask(m, 5, 0).sum() == 0
