"""Concrete segmenters and completers for the decomposition engine.

Oracles consult a ground-truth scene and reproduce it exactly; the
corruption wrapper degrades oracle output reproducibly for robustness
studies; the heuristic pair works from pixels alone on flat-color scenes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ._kernels import harmonic_fill
from .order import binary_labels, peel
from .raster import bbox_from_mask, mask_area
from .scene import Detection, Scene, composite, visible_masks
from .synth import ground_truth_matrix

SEGMENTER_NAMES = ("oracle", "corrupted", "heuristic")
COMPLETER_NAMES = ("oracle", "inpaint")


class BookkeepingError(RuntimeError):
    """An oracle was told about an instance it does not know."""


class OracleSegmenter:
    """Emits the true visible mask of every instance still in the scene,
    with a hard 0/1 non-occlusion score from the ground-truth graph."""

    def __init__(self, scene: Scene, overlap_threshold: int = 1):
        self._scene = scene
        self._matrix = ground_truth_matrix(scene, overlap_threshold)
        self._removed: set[int] = set()

    def segment(self, image: np.ndarray) -> list[Detection]:
        remaining_scene = self._scene.without(self._removed)
        labels = binary_labels(peel(self._matrix, self._removed))
        vis = visible_masks(remaining_scene)
        dets = []
        for rec in remaining_scene.instances:
            mask = vis[rec.id]
            if mask_area(mask) == 0:
                continue  # fully hidden: nothing to detect yet
            dets.append(
                Detection(
                    bbox=bbox_from_mask(mask),
                    category=rec.category,
                    class_score=1.0,
                    mask=mask,
                    nonocc_score=1.0 if labels[rec.id] == 0 else 0.0,
                    ref_id=rec.id,
                )
            )
        return dets

    def observe_step(self, step_index: int, selected: list[tuple[int, Detection]]) -> None:
        for iid, _ in selected:
            if iid in self._removed or iid not in self._scene.ids:
                raise BookkeepingError(f"step {step_index}: unknown or already-removed instance {iid}")
            self._removed.add(iid)


@dataclass(frozen=True)
class CorruptionConfig:
    mask_erode_px: int = 0
    mask_dilate_px: int = 0
    label_flip_prob: float = 0.0
    drop_prob: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.mask_erode_px < 0 or self.mask_dilate_px < 0:
            raise ValueError("morphology radii must be >= 0")
        for name in ("label_flip_prob", "drop_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")


_SQUARE3 = np.ones((3, 3), dtype=bool)  # 8-neighborhood structuring element


class CorruptedSegmenter:
    """Wraps a segmenter and degrades each detection deterministically.

    Per detection: draw (flip, drop) from a stream keyed by
    (seed, step, instance), drop with probability ``drop_prob``, erode
    then dilate the mask with a square element (suppressing detections
    whose mask vanishes), and flip the non-occlusion score with
    probability ``label_flip_prob``.
    """

    def __init__(self, inner, cfg: CorruptionConfig):
        self._inner = inner
        self._cfg = cfg
        self._step = 0

    def segment(self, image: np.ndarray) -> list[Detection]:
        out = []
        for pos, det in enumerate(self._inner.segment(image)):
            key = det.ref_id if det.ref_id is not None else pos
            rng = np.random.default_rng(
                np.random.SeedSequence(entropy=self._cfg.seed, spawn_key=(self._step, key))
            )
            flip_u, drop_u = rng.random(2)
            if drop_u < self._cfg.drop_prob:
                continue
            mask = det.mask
            if self._cfg.mask_erode_px:
                mask = ndimage.binary_erosion(mask, structure=_SQUARE3, iterations=self._cfg.mask_erode_px)
            if self._cfg.mask_dilate_px:
                mask = ndimage.binary_dilation(mask, structure=_SQUARE3, iterations=self._cfg.mask_dilate_px)
            if mask_area(mask) == 0:
                continue
            nonocc = det.nonocc_score
            if flip_u < self._cfg.label_flip_prob:
                nonocc = 1.0 - nonocc
            out.append(
                Detection(
                    bbox=bbox_from_mask(mask),
                    category=det.category,
                    class_score=det.class_score,
                    mask=mask,
                    nonocc_score=nonocc,
                    ref_id=det.ref_id,
                )
            )
        return out

    def observe_step(self, step_index: int, selected: list[tuple[int, Detection]]) -> None:
        self._step += 1
        hook = getattr(self._inner, "observe_step", None)
        if hook is not None:
            hook(step_index, selected)


class HeuristicSegmenter:
    """Image-only segmenter for flat-color scenes.

    Connected components of color-quantized pixels become detections; the
    component owning most canvas-border pixels is taken as background.
    The non-occlusion score is one minus the fraction of a component's
    boundary shared with other detected components (background contact
    and canvas-border pixels do not count as shared).
    """

    def __init__(self, color_tolerance: int = 12, min_area: int = 20, category: str = "object"):
        if color_tolerance < 1:
            raise ValueError("color_tolerance must be >= 1")
        self.color_tolerance = color_tolerance
        self.min_area = min_area
        self.category = category

    def segment(self, image: np.ndarray) -> list[Detection]:
        img = np.asarray(image, dtype=np.uint8)
        h, w = img.shape[:2]
        q = (img.astype(np.int32) // self.color_tolerance)
        key = (q[..., 0] << 20) | (q[..., 1] << 10) | q[..., 2]

        label_img = np.zeros((h, w), dtype=np.int32)
        next_label = 1
        for k in np.unique(key):
            comp_labels, n = ndimage.label(key == k, structure=_SQUARE3)
            if n == 0:
                continue
            label_img[comp_labels > 0] = comp_labels[comp_labels > 0] + (next_label - 1)
            next_label += n

        border = np.zeros((h, w), dtype=bool)
        border[0, :] = border[-1, :] = True
        border[:, 0] = border[:, -1] = True
        border_counts = np.bincount(label_img[border], minlength=next_label)
        background_label = int(border_counts.argmax())

        areas = np.bincount(label_img.ravel(), minlength=next_label)
        kept = [
            lab
            for lab in range(1, next_label)
            if lab != background_label and areas[lab] >= self.min_area
        ]
        kept_set = np.zeros(next_label, dtype=bool)
        kept_set[kept] = True

        dets = []
        for lab in kept:
            mask = label_img == lab
            boundary = mask & ~(
                np.roll(mask, 1, 0) & np.roll(mask, -1, 0) & np.roll(mask, 1, 1) & np.roll(mask, -1, 1)
            )
            # roll wraps around the canvas; edge pixels are always boundary
            boundary[0, :] |= mask[0, :]
            boundary[-1, :] |= mask[-1, :]
            boundary[:, 0] |= mask[:, 0]
            boundary[:, -1] |= mask[:, -1]
            total = int(boundary.sum())
            shared = 0
            if total:
                ys, xs = np.nonzero(boundary)
                on_edge = (ys == 0) | (ys == h - 1) | (xs == 0) | (xs == w - 1)
                shared_px = np.zeros(ys.shape, dtype=bool)
                for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                    ny, nx = ys + dy, xs + dx
                    valid = (ny >= 0) & (ny < h) & (nx >= 0) & (nx < w) & ~on_edge
                    neigh = np.zeros(ys.shape, dtype=np.int32)
                    neigh[valid] = label_img[ny[valid], nx[valid]]
                    shared_px |= valid & kept_set[neigh] & (neigh != lab)
                shared = int(np.count_nonzero(shared_px))
            nonocc = 1.0 - (shared / total if total else 0.0)
            dets.append(
                Detection(
                    bbox=bbox_from_mask(mask),
                    category=self.category,
                    class_score=1.0,
                    mask=mask,
                    nonocc_score=float(nonocc),
                )
            )
        return dets


class OracleCompleter:
    """Fills holes with the true composite of whatever has not been
    removed yet; requires the engine's selection notifications."""

    def __init__(self, scene: Scene):
        self._scene = scene
        self._removed: set[int] = set()

    def observe_step(self, step_index: int, selected: list[tuple[int, Detection]]) -> None:
        for iid, _ in selected:
            if iid in self._removed or iid not in self._scene.ids:
                raise BookkeepingError(f"step {step_index}: unknown or already-removed instance {iid}")
            self._removed.add(iid)

    def complete(self, image: np.ndarray, hole: np.ndarray) -> np.ndarray:
        target = composite(self._scene.without(self._removed))
        return np.where(hole[..., None], target, image).astype(np.uint8)


class InpaintCompleter:
    """Classical diffusion fill: hole pixels relax to the mean of their
    4-neighbors until convergence, anchored by the surrounding pixels."""

    def __init__(self, max_iters: int = 4000, tol: float = 1e-4):
        self.max_iters = max_iters
        self.tol = tol

    def complete(self, image: np.ndarray, hole: np.ndarray) -> np.ndarray:
        hole = np.asarray(hole, dtype=bool)
        out = np.array(image, dtype=np.uint8, copy=True)
        if not hole.any():
            return out
        for c in range(3):
            channel = image[..., c].astype(np.float64) / 255.0
            filled, _ = harmonic_fill(channel, hole, self.tol, self.max_iters)
            out[..., c][hole] = np.rint(np.clip(filled[hole], 0.0, 1.0) * 255.0).astype(np.uint8)
        return out


def build_segmenter(
    name: str,
    scene: Scene | None = None,
    corruption: CorruptionConfig | None = None,
    overlap_threshold: int = 1,
):
    if name not in SEGMENTER_NAMES:
        raise ValueError(f"unknown segmenter {name!r}; valid names: {', '.join(SEGMENTER_NAMES)}")
    if name == "heuristic":
        return HeuristicSegmenter()
    if scene is None:
        raise ValueError(f"segmenter {name!r} needs a ground-truth scene")
    oracle = OracleSegmenter(scene, overlap_threshold)
    if name == "oracle":
        return oracle
    return CorruptedSegmenter(oracle, corruption or CorruptionConfig())


def build_completer(name: str, scene: Scene | None = None):
    if name not in COMPLETER_NAMES:
        raise ValueError(f"unknown completer {name!r}; valid names: {', '.join(COMPLETER_NAMES)}")
    if name == "inpaint":
        return InpaintCompleter()
    if scene is None:
        raise ValueError("completer 'oracle' needs a ground-truth scene")
    return OracleCompleter(scene)
