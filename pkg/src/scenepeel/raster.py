"""Raster primitives: binary masks, RGB images, boxes, and PNG helpers.

Conventions used throughout the package:

* masks are bool arrays of shape (H, W), row-major, origin at the top
  left with y growing downward;
* images are uint8 arrays of shape (H, W, 3); channel values are read as
  intensities in [0, 1] by the metrics;
* arrays handed out by constructors are frozen (non-writeable) so scenes
  can be shared across threads.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
from PIL import Image

from ._kernels import rle_decode, rle_encode


class DimensionMismatchError(ValueError):
    """Two rasters that must share a shape do not."""


def as_mask(bits: np.ndarray) -> np.ndarray:
    """Coerce to a frozen (H, W) bool mask."""
    m = np.asarray(bits)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise ValueError(f"mask must be 2D and nonempty, got shape {m.shape}")
    m = np.array(m, dtype=bool, copy=True)
    m.flags.writeable = False
    return m


def as_image(rgb: np.ndarray) -> np.ndarray:
    """Coerce to a frozen (H, W, 3) uint8 image."""
    a = np.asarray(rgb)
    if a.ndim != 3 or a.shape[2] != 3 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ValueError(f"image must be (H, W, 3), got shape {a.shape}")
    a = np.array(a, dtype=np.uint8, copy=True)
    a.flags.writeable = False
    return a


def _check_same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape[:2] != b.shape[:2]:
        raise DimensionMismatchError(f"raster shapes differ: {a.shape[:2]} vs {b.shape[:2]}")


def mask_area(m: np.ndarray) -> int:
    return int(np.count_nonzero(m))


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection over union of two equally sized masks; 0 when both empty."""
    _check_same_shape(a, b)
    inter = np.count_nonzero(a & b)
    union = np.count_nonzero(a | b)
    if union == 0:
        return 0.0
    return inter / union


def overlap_area(a: np.ndarray, b: np.ndarray) -> int:
    """Pixel count of the intersection of two equally sized masks."""
    _check_same_shape(a, b)
    return int(np.count_nonzero(a & b))


@dataclass(frozen=True)
class BBox:
    """Axis-aligned pixel box: top-left offset plus extents (w, h >= 1)."""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self) -> None:
        if self.w < 1 or self.h < 1:
            raise ValueError(f"box extents must be >= 1, got {self.w}x{self.h}")

    def as_xywh(self) -> list[int]:
        return [self.x, self.y, self.w, self.h]


def bbox_from_mask(m: np.ndarray) -> BBox:
    """Tight bounds of the true bits. Raises on an empty mask."""
    ys, xs = np.nonzero(m)
    if ys.size == 0:
        raise ValueError("cannot take the bounding box of an empty mask")
    y0, y1 = int(ys.min()), int(ys.max())
    x0, x1 = int(xs.min()), int(xs.max())
    return BBox(x=x0, y=y0, w=x1 - x0 + 1, h=y1 - y0 + 1)


def shift_mask(m: np.ndarray, dx: int, dy: int) -> np.ndarray:
    """Translate a mask, dropping bits that leave the canvas."""
    out = np.zeros_like(m)
    h, w = m.shape
    src_y = slice(max(0, -dy), min(h, h - dy))
    src_x = slice(max(0, -dx), min(w, w - dx))
    dst_y = slice(max(0, dy), min(h, h + dy))
    dst_x = slice(max(0, dx), min(w, w + dx))
    if src_y.start < src_y.stop and src_x.start < src_x.stop:
        out[dst_y, dst_x] = m[src_y, src_x]
    return out


def shift_image(img: np.ndarray, dx: int, dy: int, fill: int = 0) -> np.ndarray:
    out = np.full_like(img, fill)
    h, w = img.shape[:2]
    src_y = slice(max(0, -dy), min(h, h - dy))
    src_x = slice(max(0, -dx), min(w, w - dx))
    dst_y = slice(max(0, dy), min(h, h + dy))
    dst_x = slice(max(0, dx), min(w, w + dx))
    if src_y.start < src_y.stop and src_x.start < src_x.stop:
        out[dst_y, dst_x] = img[src_y, src_x]
    return out


# --- run-length mask codec (column-major, zero run first) ------------------

def mask_to_rle(mask: np.ndarray) -> dict:
    flat = np.ravel(np.asarray(mask, dtype=np.uint8), order="F")
    counts = rle_encode(flat)
    return {"size": [int(mask.shape[0]), int(mask.shape[1])], "counts": [int(c) for c in counts]}


def rle_to_mask(rle: dict) -> np.ndarray:
    h, w = (int(v) for v in rle["size"])
    flat = rle_decode(np.asarray(rle["counts"], dtype=np.int64), h * w)
    return flat.reshape((h, w), order="F").astype(bool)


# --- PNG round trips ------------------------------------------------------

def image_to_png(img: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(np.asarray(img, dtype=np.uint8), mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def image_from_png(data: bytes) -> np.ndarray:
    with Image.open(io.BytesIO(data)) as im:
        return as_image(np.asarray(im.convert("RGB")))


def mask_to_png(m: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(np.asarray(m, dtype=bool)).convert("1").save(buf, format="PNG")
    return buf.getvalue()


def mask_from_png(data: bytes) -> np.ndarray:
    with Image.open(io.BytesIO(data)) as im:
        return as_mask(np.asarray(im.convert("1")))


def rgba_png(img: np.ndarray, alpha_mask: np.ndarray) -> bytes:
    """RGBA PNG of an image with the mask as alpha (used for cutouts)."""
    _check_same_shape(img, alpha_mask)
    rgba = np.dstack([img, np.where(alpha_mask, 255, 0).astype(np.uint8)])
    buf = io.BytesIO()
    Image.fromarray(rgba, mode="RGBA").save(buf, format="PNG")
    return buf.getvalue()
