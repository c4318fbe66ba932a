"""The layer-by-layer decomposition loop.

Each step: segment the current image, keep the best-scoring detections,
select the ones judged fully visible (or the single best candidate so
every step selects something), carve their union out of the image, have
the completer fill the hole, and continue on the completed image. The
pairwise occlusion matrix then follows from the removal schedule alone.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence, runtime_checkable

import numpy as np

from .order import OcclusionMatrix, pairwise_from_trace
from .raster import (
    BBox,
    as_image,
    image_from_png,
    image_to_png,
    mask_iou,
    mask_to_rle,
    rle_to_mask,
)
from .scene import DecompositionTrace, Detection, TraceStep

HOLE_SENTINEL = (128, 128, 128)  # mid-gray fill for carved pixels


class EngineContractError(RuntimeError):
    """A pluggable component broke its contract; names the step."""

    def __init__(self, step_index: int, message: str):
        self.step_index = step_index
        super().__init__(f"step {step_index}: {message}")


@runtime_checkable
class Segmenter(Protocol):
    def segment(self, image: np.ndarray) -> list[Detection]: ...


@runtime_checkable
class Completer(Protocol):
    def complete(self, image: np.ndarray, hole: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class EngineConfig:
    class_score_threshold: float = 0.5
    nonocc_threshold: float = 0.5
    max_steps: int = 10
    max_detections: int = 100
    overlap_threshold: int = 1
    dedup_iou: float = 0.9

    def __post_init__(self) -> None:
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        for name in ("class_score_threshold", "nonocc_threshold"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")


def _centroid_y(mask: np.ndarray) -> float:
    ys = np.nonzero(mask)[0]
    return float(ys.mean())


def _selection_key(det: Detection, position: int) -> tuple:
    return (-det.nonocc_score, -det.class_score, _centroid_y(det.mask), position)


def select_fully_visible(dets: Sequence[Detection], cfg: EngineConfig) -> list[Detection]:
    """Detections that clear both score thresholds, ordered best first.

    When nothing clears the non-occlusion threshold the single best
    candidate is returned (highest non-occlusion score, ties broken by
    class score, then topmost mask centroid, then input position), so a
    step never comes back empty.
    """
    if not dets:
        raise ValueError("no detections to select from")
    ranked = sorted(range(len(dets)), key=lambda k: _selection_key(dets[k], k))
    passing = [
        k
        for k in ranked
        if dets[k].class_score >= cfg.class_score_threshold
        and dets[k].nonocc_score >= cfg.nonocc_threshold
    ]
    if passing:
        return [dets[k] for k in passing]
    return [dets[ranked[0]]]


def carve_holes(image: np.ndarray, selected_masks: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Union the masks into a hole and blank it with the sentinel fill."""
    hole = np.zeros(image.shape[:2], dtype=bool)
    for m in selected_masks:
        if m.shape != image.shape[:2]:
            raise ValueError("selected mask does not match image dimensions")
        hole |= m
    masked = np.array(image, dtype=np.uint8, copy=True)
    masked[hole] = HOLE_SENTINEL
    return masked, hole


def dedup_detections(dets: Sequence[Detection], iou_threshold: float) -> list[Detection]:
    """Drop near-duplicate masks, keeping the higher class score."""
    order = sorted(range(len(dets)), key=lambda k: (-dets[k].class_score, k))
    kept: list[int] = []
    for k in order:
        if all(mask_iou(dets[k].mask, dets[m].mask) <= iou_threshold for m in kept):
            kept.append(k)
    kept.sort()
    return [dets[k] for k in kept]


@dataclass
class DecompositionResult:
    trace: DecompositionTrace
    matrix: OcclusionMatrix
    step_of: dict[int, int] = field(default_factory=dict)
    substep_of: dict[int, int] = field(default_factory=dict)

    @property
    def masks(self) -> dict[int, np.ndarray]:
        return {iid: det.mask for step in self.trace.steps for iid, det in step.selected}

    @property
    def detections(self) -> dict[int, Detection]:
        return {iid: det for step in self.trace.steps for iid, det in step.selected}


def decompose(
    image: np.ndarray,
    segmenter: Segmenter,
    completer: Completer,
    cfg: EngineConfig = EngineConfig(),
) -> DecompositionResult:
    """Run the peel-and-complete loop until nothing is detected or the
    step budget runs out; returns the trace and the inferred pairwise
    occlusion matrix over the recovered masks."""
    current = as_image(image)
    steps: list[TraceStep] = []
    step_of: dict[int, int] = {}
    substep_of: dict[int, int] = {}
    used_ids: set[int] = set()
    next_engine_id = 0

    for step_index in range(cfg.max_steps):
        dets = segmenter.segment(current)
        for d in dets:
            if d.mask.shape != current.shape[:2]:
                raise EngineContractError(step_index, "segmenter returned an off-canvas mask")
        if not dets:
            break
        dets = sorted(dets, key=lambda d: -d.class_score)[: cfg.max_detections]
        dets = [d for d in dets if d.class_score >= cfg.class_score_threshold]
        if not dets:
            break
        dets = dedup_detections(dets, cfg.dedup_iou)
        selected = select_fully_visible(dets, cfg)

        pairs: list[tuple[int, Detection]] = []
        for rank, det in enumerate(selected):
            if det.ref_id is not None:
                iid = det.ref_id
                if iid in used_ids:
                    raise EngineContractError(step_index, f"instance id {iid} selected twice")
            else:
                while next_engine_id in used_ids:
                    next_engine_id += 1
                iid = next_engine_id
            used_ids.add(iid)
            step_of[iid] = step_index
            substep_of[iid] = rank
            pairs.append((iid, det))

        masked, hole = carve_holes(current, [det.mask for _, det in pairs])
        _notify(segmenter, step_index, pairs)
        _notify(completer, step_index, pairs)
        completed = completer.complete(masked, hole)
        completed = np.asarray(completed, dtype=np.uint8)
        if completed.shape != current.shape:
            raise EngineContractError(step_index, "completer changed the image dimensions")
        outside = ~hole
        if not np.array_equal(completed[outside], masked[outside]):
            raise EngineContractError(step_index, "completer modified pixels outside the hole")

        steps.append(
            TraceStep(step_index=step_index, selected=tuple(pairs), hole_mask=hole, completed_image=completed)
        )
        current = completed

    trace = DecompositionTrace(input_image=image, steps=tuple(steps))
    masks = {iid: det.mask for step in steps for iid, det in step.selected}
    matrix = pairwise_from_trace(masks, step_of, cfg.overlap_threshold, substep_of)
    return DecompositionResult(trace=trace, matrix=matrix, step_of=step_of, substep_of=substep_of)


def _notify(component: object, step_index: int, selected: list[tuple[int, Detection]]) -> None:
    hook = getattr(component, "observe_step", None)
    if hook is not None:
        hook(step_index, selected)


# --- trace directory round trip --------------------------------------------

@dataclass(frozen=True)
class PredInstance:
    """One recovered instance as stored in a trace directory."""

    id: int
    category: str
    class_score: float
    nonocc_score: float
    mask: np.ndarray
    bbox: BBox
    step_index: int
    substep: int


@dataclass
class TraceBundle:
    instances: list[PredInstance]
    matrix: OcclusionMatrix
    input_image: np.ndarray
    final_image: np.ndarray
    hole_masks: dict[int, np.ndarray]
    step_images: dict[int, np.ndarray]
    completer: str | None = None
    scene_id: int | None = None

    @property
    def masks(self) -> dict[int, np.ndarray]:
        return {p.id: p.mask for p in self.instances}

    @property
    def has_step_images(self) -> bool:
        return len(self.step_images) == len(self.hole_masks)

    def to_result(self) -> DecompositionResult:
        """Rebuild the in-memory decomposition; needs dumped step images."""
        if not self.has_step_images:
            raise ValueError("trace was written without per-step images (re-run with dump_steps)")
        by_step: dict[int, list[PredInstance]] = {}
        for p in self.instances:
            by_step.setdefault(p.step_index, []).append(p)
        steps = []
        for step_index in sorted(by_step):
            preds = sorted(by_step[step_index], key=lambda p: p.substep)
            pairs = tuple(
                (
                    p.id,
                    Detection(
                        bbox=p.bbox,
                        category=p.category,
                        class_score=p.class_score,
                        mask=p.mask,
                        nonocc_score=p.nonocc_score,
                    ),
                )
                for p in preds
            )
            steps.append(
                TraceStep(
                    step_index=step_index,
                    selected=pairs,
                    hole_mask=self.hole_masks[step_index],
                    completed_image=self.step_images[step_index],
                )
            )
        trace = DecompositionTrace(input_image=self.input_image, steps=tuple(steps))
        return DecompositionResult(
            trace=trace,
            matrix=self.matrix,
            step_of={p.id: p.step_index for p in self.instances},
            substep_of={p.id: p.substep for p in self.instances},
        )


def write_trace(
    result: DecompositionResult,
    root: str | Path,
    dump_steps: bool = False,
    completer: str | None = None,
) -> Path:
    """Persist a decomposition under ``root``: trace.json plus input/final
    PNGs, and per-step completed images when ``dump_steps`` is set."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    (root / "input.png").write_bytes(image_to_png(result.trace.input_image))
    (root / "final.png").write_bytes(image_to_png(result.trace.final_image))
    steps_payload = []
    for step in result.trace.steps:
        entry = {
            "step_index": step.step_index,
            "hole": mask_to_rle(step.hole_mask),
            "selected": [
                {
                    "id": iid,
                    "category": det.category,
                    "class_score": det.class_score,
                    "nonocc_score": det.nonocc_score,
                    "bbox": det.bbox.as_xywh(),
                    "mask": mask_to_rle(det.mask),
                    "substep": result.substep_of[iid],
                }
                for iid, det in step.selected
            ],
        }
        if dump_steps:
            name = f"step_{step.step_index:03d}.png"
            (root / name).write_bytes(image_to_png(step.completed_image))
            entry["completed_image"] = name
        steps_payload.append(entry)
    payload = {
        "completer": completer,
        "steps": steps_payload,
        "matrix": {"ids": list(result.matrix.ids), "entries": result.matrix.entries.tolist()},
    }
    out = root / "trace.json"
    out.write_text(json.dumps(payload, indent=1))
    return out


def read_trace(root: str | Path) -> TraceBundle:
    root = Path(root)
    payload = json.loads((root / "trace.json").read_text())
    instances = []
    hole_masks: dict[int, np.ndarray] = {}
    step_images: dict[int, np.ndarray] = {}
    for step in payload["steps"]:
        hole_masks[step["step_index"]] = rle_to_mask(step["hole"])
        if "completed_image" in step:
            step_images[step["step_index"]] = image_from_png((root / step["completed_image"]).read_bytes())
        for sel in step["selected"]:
            instances.append(
                PredInstance(
                    id=sel["id"],
                    category=sel["category"],
                    class_score=sel["class_score"],
                    nonocc_score=sel["nonocc_score"],
                    mask=rle_to_mask(sel["mask"]),
                    bbox=BBox(*sel["bbox"]),
                    step_index=step["step_index"],
                    substep=sel["substep"],
                )
            )
    n = len(payload["matrix"]["ids"])
    matrix = OcclusionMatrix(
        tuple(payload["matrix"]["ids"]),
        np.asarray(payload["matrix"]["entries"], dtype=np.int8).reshape(n, n),
    )
    return TraceBundle(
        instances=instances,
        matrix=matrix,
        input_image=image_from_png((root / "input.png").read_bytes()),
        final_image=image_from_png((root / "final.png").read_bytes()),
        hole_masks=hole_masks,
        step_images=step_images,
        completer=payload.get("completer"),
    )
