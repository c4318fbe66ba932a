"""Scene editing: delete, move (drag), and depth reorder, plus replayable
edit sessions over a base scene.

Edits operate on full (amodal) instance content, so moving or deleting an
object reveals whatever the decomposition recovered behind it. Visible
masks are recomputed from the edited z-order; the pairwise matrix served
to clients is always derived from the current scene.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Literal, Sequence

import numpy as np

from .engine import DecompositionResult
from .raster import mask_area, shift_image, shift_mask
from .scene import (
    DecompositionTrace,
    InstanceRecord,
    Scene,
    composite,
    with_recomputed_visibility,
)

EditKind = Literal["delete", "move", "reorder"]


class EditError(ValueError):
    """An edit cannot be applied to the current scene."""


@dataclass(frozen=True)
class Edit:
    kind: EditKind
    target: int
    dx: int = 0
    dy: int = 0
    new_z: int | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("delete", "move", "reorder"):
            raise EditError(f"unknown edit kind {self.kind!r}")
        if self.kind == "reorder" and self.new_z is None:
            raise EditError("reorder requires new_z")

    def as_dict(self) -> dict:
        out: dict = {"kind": self.kind, "target": self.target}
        if self.kind == "move":
            out.update(dx=self.dx, dy=self.dy)
        if self.kind == "reorder":
            out["new_z"] = self.new_z
        return out

    @classmethod
    def from_dict(cls, payload: dict) -> "Edit":
        try:
            return cls(
                kind=payload["kind"],
                target=int(payload["target"]),
                dx=int(payload.get("dx", 0)),
                dy=int(payload.get("dy", 0)),
                new_z=int(payload["new_z"]) if payload.get("new_z") is not None else None,
            )
        except (KeyError, TypeError) as exc:
            raise EditError(f"malformed edit: {exc}") from exc


def apply_edit(scene: Scene, edit: Edit) -> Scene:
    """New scene with the edit applied and visibility recomputed."""
    ids = set(scene.ids)
    if edit.target not in ids:
        raise EditError(f"unknown instance id {edit.target}")
    if edit.kind == "delete":
        out = scene.without({edit.target})
    elif edit.kind == "move":
        out = _move(scene, edit)
    else:
        out = _reorder(scene, edit)
    return with_recomputed_visibility(out)


def _move(scene: Scene, edit: Edit) -> Scene:
    rec = scene.instance(edit.target)
    moved_mask = shift_mask(rec.amodal_mask, edit.dx, edit.dy)
    lost = mask_area(rec.amodal_mask) - mask_area(moved_mask)
    if mask_area(moved_mask) == 0:
        raise EditError(f"move by ({edit.dx}, {edit.dy}) pushes instance {edit.target} fully off canvas")
    if lost:
        warnings.warn(
            f"move clipped {lost} px of instance {edit.target} at the canvas edge",
            stacklevel=2,
        )
    moved = replace(
        rec,
        amodal_mask=moved_mask,
        visible_mask=moved_mask,  # recomputed by the caller
        appearance=shift_image(rec.appearance, edit.dx, edit.dy),
    )
    others = tuple(r for r in scene.instances if r.id != edit.target)
    return replace(scene, instances=others + (moved,))


def _reorder(scene: Scene, edit: Edit) -> Scene:
    ordered = sorted(scene.instances, key=lambda r: r.z)
    target = next(r for r in ordered if r.id == edit.target)
    ordered.remove(target)
    slot = min(max(int(edit.new_z or 0), 0), len(ordered))
    ordered.insert(slot, target)
    renumbered = tuple(replace(r, z=k) for k, r in enumerate(ordered))
    return replace(scene, instances=renumbered)


def recomposite(scene: Scene) -> np.ndarray:
    return composite(scene)


def replay(base: Scene, edits: Sequence[Edit]) -> Scene:
    current = base
    for e in edits:
        current = apply_edit(current, e)
    return current


@dataclass
class Session:
    """A base scene plus an edit log; the current scene is always the
    replay of the log over the base."""

    session_id: str
    base: Scene
    provenance: dict[int, str] = field(default_factory=dict)
    edits: list[Edit] = field(default_factory=list)
    current: Scene = None  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if self.current is None:
            self.current = replay(self.base, self.edits)

    def apply(self, edit: Edit) -> None:
        self.current = apply_edit(self.current, edit)
        self.edits.append(edit)

    def undo(self) -> None:
        if not self.edits:
            raise EditError("edit log is empty; nothing to undo")
        self.edits.pop()
        self.current = replay(self.base, self.edits)


def scene_from_decomposition(
    result: DecompositionResult,
    inpainted_completer: bool = False,
) -> tuple[Scene, dict[int, str]]:
    """Assemble an editable scene from recovered instances.

    Depth follows removal order (first selected = frontmost), each
    instance's appearance is lifted from the image it was segmented on,
    and the final completed image becomes the background. Provenance is
    "inpainted" for instances whose region includes pixels an inpainting
    completer synthesized earlier, "oracle" otherwise.
    """
    trace: DecompositionTrace = result.trace
    h, w = trace.input_image.shape[:2]
    records: list[InstanceRecord] = []
    provenance: dict[int, str] = {}
    carved_so_far = np.zeros((h, w), dtype=bool)
    z = 0
    for step in trace.steps:
        source = trace.step_input(step.step_index)
        for iid, det in step.selected:
            appearance = np.zeros((h, w, 3), dtype=np.uint8)
            appearance[det.mask] = source[det.mask]
            records.append(
                InstanceRecord(
                    id=iid,
                    category=det.category,
                    z=z,
                    amodal_mask=det.mask,
                    visible_mask=det.mask,
                    appearance=appearance,
                )
            )
            touched_fill = bool(np.any(det.mask & carved_so_far))
            provenance[iid] = "inpainted" if (inpainted_completer and touched_fill) else "oracle"
            z += 1
        carved_so_far |= step.hole_mask
    scene = Scene(width=w, height=h, background=trace.final_image, instances=tuple(records))
    return with_recomputed_visibility(scene), provenance
