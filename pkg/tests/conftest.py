import numpy as np
import pytest

from scenepeel.scene import InstanceRecord, Scene, with_recomputed_visibility
from scenepeel.synth import SynthConfig, generate_scene


def mask_from_rows(rows: list[str]) -> np.ndarray:
    """Tiny mask literal: '1'/'x' pixels are set, anything else clear."""
    return np.array([[c in "1x" for c in row] for row in rows], dtype=bool)


def build_scene(
    shapes: list[tuple[int, int, np.ndarray, tuple[int, int, int]]],
    width: int,
    height: int,
    background: int = 240,
) -> Scene:
    """Scene from (id, z, mask, color) tuples with flat appearances."""
    records = []
    for iid, z, mask, color in shapes:
        appearance = np.zeros((height, width, 3), dtype=np.uint8)
        appearance[mask] = color
        records.append(
            InstanceRecord(
                id=iid,
                category="box",
                z=z,
                amodal_mask=mask,
                visible_mask=mask,
                appearance=appearance,
            )
        )
    bg = np.full((height, width, 3), background, dtype=np.uint8)
    scene = Scene(width=width, height=height, background=bg, instances=tuple(records))
    return with_recomputed_visibility(scene)


def rect_mask(width: int, height: int, x: int, y: int, w: int, h: int) -> np.ndarray:
    m = np.zeros((height, width), dtype=bool)
    m[y : y + h, x : x + w] = True
    return m


@pytest.fixture
def small_cfg() -> SynthConfig:
    return SynthConfig(width=96, height=96, min_objects=4, max_objects=7, size_min=16, size_max=40, seed=11)


@pytest.fixture
def small_scene(small_cfg):
    return generate_scene(small_cfg)
