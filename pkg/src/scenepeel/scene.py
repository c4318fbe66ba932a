"""Scene model: instances with full (amodal) extent, depth ranks, and the
painter compositor that turns them back into an image.

Depth ranks ``z`` form a strict total order per scene, 0 = frontmost.
Instances are opaque; compositing paints back-to-front so the visible
surface of the scene is exactly recoverable from the z-order.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .raster import BBox, as_image, as_mask, mask_area


@dataclass(frozen=True)
class Detection:
    """One segmenter output: a mask plus classification and occlusion scores.

    ``nonocc_score`` is the confidence that the object is fully visible
    (no remaining object in front of it). ``ref_id`` optionally ties the
    detection back to a known scene instance; oracle components set it,
    image-only segmenters leave it None.
    """

    bbox: BBox
    category: str
    class_score: float
    mask: np.ndarray
    nonocc_score: float
    ref_id: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "mask", as_mask(self.mask))
        if mask_area(self.mask) == 0:
            raise ValueError("detection mask must be nonempty")
        for name in ("class_score", "nonocc_score"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")


@dataclass(frozen=True)
class InstanceRecord:
    """One object: full mask and appearance, visible mask, category, depth rank."""

    id: int
    category: str
    z: int
    amodal_mask: np.ndarray
    visible_mask: np.ndarray
    appearance: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "amodal_mask", as_mask(self.amodal_mask))
        object.__setattr__(self, "visible_mask", as_mask(self.visible_mask))
        object.__setattr__(self, "appearance", as_image(self.appearance))
        if self.amodal_mask.shape != self.visible_mask.shape:
            raise ValueError("amodal and visible masks must share dimensions")
        if self.appearance.shape[:2] != self.amodal_mask.shape:
            raise ValueError("appearance must share mask dimensions")
        if mask_area(self.amodal_mask) < 1:
            raise ValueError(f"instance {self.id}: amodal mask is empty")
        if np.any(self.visible_mask & ~self.amodal_mask):
            raise ValueError(f"instance {self.id}: visible mask exceeds amodal mask")


@dataclass(frozen=True)
class Scene:
    """Canvas plus z-ordered opaque instances over a background."""

    width: int
    height: int
    background: np.ndarray
    instances: tuple[InstanceRecord, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "background", as_image(self.background))
        object.__setattr__(self, "instances", tuple(sorted(self.instances, key=lambda r: r.z)))
        if self.background.shape[:2] != (self.height, self.width):
            raise ValueError("background does not match scene dimensions")
        ids = [r.id for r in self.instances]
        if len(set(ids)) != len(ids):
            raise ValueError("instance ids must be distinct")
        zs = [r.z for r in self.instances]
        if len(set(zs)) != len(zs):
            raise ValueError("instance z ranks must be distinct")
        for r in self.instances:
            if r.amodal_mask.shape != (self.height, self.width):
                raise ValueError(f"instance {r.id} rasters do not match scene dimensions")

    def __len__(self) -> int:
        return len(self.instances)

    @property
    def ids(self) -> tuple[int, ...]:
        return tuple(r.id for r in self.instances)

    def instance(self, instance_id: int) -> InstanceRecord:
        for r in self.instances:
            if r.id == instance_id:
                return r
        raise KeyError(f"no instance with id {instance_id}")

    def without(self, removed: set[int]) -> "Scene":
        unknown = removed - set(self.ids)
        if unknown:
            raise KeyError(f"unknown instance ids: {sorted(unknown)}")
        kept = tuple(r for r in self.instances if r.id not in removed)
        return replace(self, instances=kept)


def composite(scene: Scene) -> np.ndarray:
    """Painter's algorithm: background first, then instances back-to-front."""
    out = np.array(scene.background, dtype=np.uint8, copy=True)
    for rec in sorted(scene.instances, key=lambda r: -r.z):
        out[rec.amodal_mask] = rec.appearance[rec.amodal_mask]
    out.flags.writeable = False
    return out


def visible_masks(scene: Scene) -> dict[int, np.ndarray]:
    """Per-instance unoccluded region: amodal mask minus everything nearer."""
    claimed = np.zeros((scene.height, scene.width), dtype=bool)
    out: dict[int, np.ndarray] = {}
    for rec in scene.instances:  # z ascending: frontmost claims first
        vis = rec.amodal_mask & ~claimed
        vis.flags.writeable = False
        out[rec.id] = vis
        claimed |= rec.amodal_mask
    return out


def with_recomputed_visibility(scene: Scene) -> Scene:
    """Rebuild every instance's visible mask from the current z-order."""
    vis = visible_masks(scene)
    updated = tuple(replace(r, visible_mask=vis[r.id]) for r in scene.instances)
    return replace(scene, instances=updated)


@dataclass(frozen=True)
class TraceStep:
    """One peeling step: what was selected, the hole it left, and the image
    after completion."""

    step_index: int
    selected: tuple[tuple[int, Detection], ...]
    hole_mask: np.ndarray
    completed_image: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "hole_mask", as_mask(self.hole_mask))
        object.__setattr__(self, "completed_image", as_image(self.completed_image))
        object.__setattr__(self, "selected", tuple(self.selected))

    @property
    def selected_ids(self) -> tuple[int, ...]:
        return tuple(i for i, _ in self.selected)


@dataclass(frozen=True)
class DecompositionTrace:
    """Ordered record of a full decomposition run."""

    input_image: np.ndarray
    steps: tuple[TraceStep, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        object.__setattr__(self, "input_image", as_image(self.input_image))
        object.__setattr__(self, "steps", tuple(self.steps))
        indices = [s.step_index for s in self.steps]
        if any(b <= a for a, b in zip(indices, indices[1:])):
            raise ValueError("step indices must be strictly increasing")
        seen: set[int] = set()
        for s in self.steps:
            for iid in s.selected_ids:
                if iid in seen:
                    raise ValueError(f"instance id {iid} selected in more than one step")
                seen.add(iid)

    @property
    def instance_ids(self) -> tuple[int, ...]:
        return tuple(i for s in self.steps for i in s.selected_ids)

    @property
    def final_image(self) -> np.ndarray:
        """Image left after the last step (the completed background when
        everything was peeled)."""
        if not self.steps:
            return self.input_image
        return self.steps[-1].completed_image

    def step_input(self, step_index: int) -> np.ndarray:
        """The image the segmenter saw at the given step."""
        for pos, s in enumerate(self.steps):
            if s.step_index == step_index:
                return self.input_image if pos == 0 else self.steps[pos - 1].completed_image
        raise KeyError(f"no step with index {step_index}")
