"""Dataset serialization: COCO-style annotations.json plus PNG images.

Directory layout::

    <root>/
      annotations.json
      images/scene_00000.png ...

``annotations.json`` carries ``categories``, ``images`` and
``annotations`` arrays. Each annotation holds the amodal box (``bbox``),
the visible box (``bbox_visible``, null when fully hidden), both masks as
uncompressed column-major run-length counts starting with the zero run,
the absolute ``layer_order`` and a ``pairwise_order`` row with entries in
{-1, 0, 1}. Pairwise rows are aligned with the order in which the image's
annotations appear in the file (instances sorted by id).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import jsonschema
import numpy as np

from .order import OcclusionMatrix, absolute_order, validate
from .raster import (
    BBox,
    bbox_from_mask,
    image_from_png,
    image_to_png,
    mask_area,
    mask_to_rle,
    rle_to_mask,
)
from .scene import Scene
from .synth import BACKGROUND_CATEGORY, SPRITE_CATEGORIES

CATEGORY_TABLE: dict[str, int] = {BACKGROUND_CATEGORY: 0}
CATEGORY_TABLE.update({name: i + 1 for i, name in enumerate(SPRITE_CATEGORIES)})
_CATEGORY_BY_ID = {v: k for k, v in CATEGORY_TABLE.items()}

_RLE_SCHEMA = {
    "type": "object",
    "required": ["size", "counts"],
    "properties": {
        "size": {
            "type": "array",
            "items": {"type": "integer", "minimum": 1},
            "minItems": 2,
            "maxItems": 2,
        },
        "counts": {"type": "array", "items": {"type": "integer", "minimum": 0}},
    },
}

ANNOTATIONS_SCHEMA = {
    "type": "object",
    "required": ["categories", "images", "annotations"],
    "properties": {
        "categories": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "name"],
                "properties": {"id": {"type": "integer"}, "name": {"type": "string"}},
            },
        },
        "images": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "width", "height", "file_name"],
                "properties": {
                    "id": {"type": "integer"},
                    "width": {"type": "integer", "minimum": 1},
                    "height": {"type": "integer", "minimum": 1},
                    "file_name": {"type": "string"},
                },
            },
        },
        "annotations": {
            "type": "array",
            "items": {
                "type": "object",
                "required": [
                    "id",
                    "image_id",
                    "instance_id",
                    "category_id",
                    "bbox",
                    "segmentation_visible",
                    "segmentation_amodal",
                    "layer_order",
                    "pairwise_order",
                ],
                "properties": {
                    "id": {"type": "integer"},
                    "image_id": {"type": "integer"},
                    "instance_id": {"type": "integer"},
                    "category_id": {"type": "integer"},
                    "bbox": {
                        "type": "array",
                        "items": {"type": "integer"},
                        "minItems": 4,
                        "maxItems": 4,
                    },
                    "bbox_visible": {
                        "oneOf": [
                            {"type": "null"},
                            {
                                "type": "array",
                                "items": {"type": "integer"},
                                "minItems": 4,
                                "maxItems": 4,
                            },
                        ]
                    },
                    "segmentation_visible": _RLE_SCHEMA,
                    "segmentation_amodal": _RLE_SCHEMA,
                    "layer_order": {"type": "integer", "minimum": 0},
                    "pairwise_order": {
                        "type": "array",
                        "items": {"type": "integer", "enum": [-1, 0, 1]},
                    },
                },
            },
        },
    },
}


class DatasetFormatError(ValueError):
    """A dataset file is malformed; the message names the location."""


@dataclass(frozen=True, eq=False)
class InstanceAnnotation:
    instance_id: int
    category: str
    amodal_bbox: BBox
    visible_bbox: BBox | None
    amodal_mask: np.ndarray
    visible_mask: np.ndarray
    layer_order: int
    pairwise_row: tuple[int, ...]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, InstanceAnnotation):
            return NotImplemented
        return (
            self.instance_id == other.instance_id
            and self.category == other.category
            and self.amodal_bbox == other.amodal_bbox
            and self.visible_bbox == other.visible_bbox
            and np.array_equal(self.amodal_mask, other.amodal_mask)
            and np.array_equal(self.visible_mask, other.visible_mask)
            and self.layer_order == other.layer_order
            and self.pairwise_row == other.pairwise_row
        )


@dataclass(frozen=True, eq=False)
class DatasetRecord:
    scene_id: int
    width: int
    height: int
    file_name: str
    composite: np.ndarray
    instances: tuple[InstanceAnnotation, ...]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DatasetRecord):
            return NotImplemented
        return (
            self.scene_id == other.scene_id
            and self.width == other.width
            and self.height == other.height
            and self.file_name == other.file_name
            and np.array_equal(self.composite, other.composite)
            and self.instances == other.instances
        )

    def matrix(self) -> OcclusionMatrix:
        ids = tuple(a.instance_id for a in self.instances)
        entries = np.asarray([a.pairwise_row for a in self.instances], dtype=np.int8)
        if entries.size == 0:
            entries = entries.reshape(0, 0)
        return OcclusionMatrix(ids, entries)

    def gt_masks(self) -> dict[int, np.ndarray]:
        return {a.instance_id: a.amodal_mask for a in self.instances}

    def gt_visible_masks(self) -> dict[int, np.ndarray]:
        return {a.instance_id: a.visible_mask for a in self.instances}


def record_from_scene(
    scene: Scene,
    scene_id: int,
    matrix: OcclusionMatrix,
    composite_image: np.ndarray,
    file_name: str | None = None,
) -> DatasetRecord:
    """Annotation record for one scene; pairwise rows follow id order."""
    ordered = sorted(scene.instances, key=lambda r: r.id)
    ids = [r.id for r in ordered]
    aligned = matrix.reordered(ids) if ids else matrix
    orders = absolute_order(aligned)
    rows = aligned.to_rows()
    annos = []
    for rec in ordered:
        vis_bbox = bbox_from_mask(rec.visible_mask) if mask_area(rec.visible_mask) else None
        annos.append(
            InstanceAnnotation(
                instance_id=rec.id,
                category=rec.category,
                amodal_bbox=bbox_from_mask(rec.amodal_mask),
                visible_bbox=vis_bbox,
                amodal_mask=rec.amodal_mask,
                visible_mask=rec.visible_mask,
                layer_order=orders[rec.id],
                pairwise_row=tuple(rows[rec.id]),
            )
        )
    return DatasetRecord(
        scene_id=scene_id,
        width=scene.width,
        height=scene.height,
        file_name=file_name or f"images/scene_{scene_id:05d}.png",
        composite=composite_image,
        instances=tuple(annos),
    )


def write_dataset(records: Sequence[DatasetRecord], root: str | Path) -> Path:
    """Write annotations.json and the referenced PNGs under ``root``."""
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    categories = [{"id": cid, "name": name} for name, cid in sorted(CATEGORY_TABLE.items(), key=lambda kv: kv[1])]
    images = []
    annotations = []
    next_ann_id = 1
    for rec in records:
        images.append(
            {"id": rec.scene_id, "width": rec.width, "height": rec.height, "file_name": rec.file_name}
        )
        png_path = root / rec.file_name
        png_path.parent.mkdir(parents=True, exist_ok=True)
        png_path.write_bytes(image_to_png(rec.composite))
        for anno in rec.instances:
            annotations.append(
                {
                    "id": next_ann_id,
                    "image_id": rec.scene_id,
                    "instance_id": anno.instance_id,
                    "category_id": CATEGORY_TABLE[anno.category],
                    "bbox": anno.amodal_bbox.as_xywh(),
                    "bbox_visible": anno.visible_bbox.as_xywh() if anno.visible_bbox else None,
                    "segmentation_visible": mask_to_rle(anno.visible_mask),
                    "segmentation_amodal": mask_to_rle(anno.amodal_mask),
                    "layer_order": anno.layer_order,
                    "pairwise_order": list(anno.pairwise_row),
                }
            )
            next_ann_id += 1
    payload = {"categories": categories, "images": images, "annotations": annotations}
    out = root / "annotations.json"
    out.write_text(json.dumps(payload, indent=1))
    return out


def validate_annotations(payload: dict) -> None:
    """Schema check; raises DatasetFormatError naming the offending path."""
    try:
        jsonschema.validate(payload, ANNOTATIONS_SCHEMA)
    except jsonschema.ValidationError as exc:
        loc = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise DatasetFormatError(f"annotations.json invalid at {loc}: {exc.message}") from exc


def read_dataset(root: str | Path) -> list[DatasetRecord]:
    """Load a dataset directory back into records, enforcing invariants.

    Rejects files that fail the schema, masks whose run lengths do not
    tile the canvas, visible masks that escape their amodal masks, and
    layer orders inconsistent with the pairwise rows.
    """
    root = Path(root)
    ann_path = root / "annotations.json"
    try:
        payload = json.loads(ann_path.read_text())
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"{ann_path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    validate_annotations(payload)

    by_image: dict[int, list[dict]] = {}
    for ann in payload["annotations"]:
        by_image.setdefault(ann["image_id"], []).append(ann)
    cat_names = {c["id"]: c["name"] for c in payload["categories"]}

    records = []
    for img in payload["images"]:
        image_id = img["id"]
        h, w = img["height"], img["width"]
        anns = by_image.get(image_id, [])
        annos = []
        for ann in anns:
            where = f"annotation id {ann['id']} (image {image_id})"
            try:
                amodal = rle_to_mask(ann["segmentation_amodal"])
                visible = rle_to_mask(ann["segmentation_visible"])
            except ValueError as exc:
                raise DatasetFormatError(f"{where}: {exc}") from exc
            if amodal.shape != (h, w) or visible.shape != (h, w):
                raise DatasetFormatError(f"{where}: mask size does not match image size")
            if np.any(visible & ~amodal):
                raise DatasetFormatError(f"{where}: visible mask is not contained in the amodal mask")
            if ann["category_id"] not in cat_names:
                raise DatasetFormatError(f"{where}: unknown category id {ann['category_id']}")
            if len(ann["pairwise_order"]) != len(anns):
                raise DatasetFormatError(f"{where}: pairwise row length {len(ann['pairwise_order'])} != {len(anns)}")
            annos.append(
                InstanceAnnotation(
                    instance_id=ann["instance_id"],
                    category=cat_names[ann["category_id"]],
                    amodal_bbox=BBox(*ann["bbox"]),
                    visible_bbox=BBox(*ann["bbox_visible"]) if ann["bbox_visible"] else None,
                    amodal_mask=amodal,
                    visible_mask=visible,
                    layer_order=ann["layer_order"],
                    pairwise_row=tuple(ann["pairwise_order"]),
                )
            )
        png_path = root / img["file_name"]
        if not png_path.exists():
            raise DatasetFormatError(f"image {image_id}: missing file {img['file_name']}")
        record = DatasetRecord(
            scene_id=image_id,
            width=w,
            height=h,
            file_name=img["file_name"],
            composite=image_from_png(png_path.read_bytes()),
            instances=tuple(annos),
        )
        matrix = record.matrix()
        report = validate(matrix)
        if not report.ok:
            raise DatasetFormatError(f"image {image_id}: pairwise rows are inconsistent: {report}")
        orders = absolute_order(matrix)
        for anno in record.instances:
            if orders[anno.instance_id] != anno.layer_order:
                raise DatasetFormatError(
                    f"image {image_id}, instance {anno.instance_id}: layer_order "
                    f"{anno.layer_order} != {orders[anno.instance_id]} implied by pairwise rows"
                )
        records.append(record)
    return records
