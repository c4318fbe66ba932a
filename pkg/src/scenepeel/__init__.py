"""scenepeel: layer-by-layer completed scene decomposition on sprite scenes.

Synthesize scenes with exact occlusion ground truth, peel them apart with
pluggable segmenter/completer components, score the results (mask AP,
ordering accuracy, completion quality), and recompose edited scenes.
"""

from ._kernels import BACKEND as KERNEL_BACKEND
from .edit import Edit, EditError, Session, apply_edit, recomposite, scene_from_decomposition
from .engine import (
    DecompositionResult,
    EngineConfig,
    EngineContractError,
    carve_holes,
    decompose,
    read_trace,
    select_fully_visible,
    write_trace,
)
from .components import (
    CorruptedSegmenter,
    CorruptionConfig,
    HeuristicSegmenter,
    InpaintCompleter,
    OracleCompleter,
    OracleSegmenter,
    build_completer,
    build_segmenter,
)
from .dataset import DatasetRecord, read_dataset, record_from_scene, write_dataset
from .metrics import (
    APReport,
    CompletionMetrics,
    OAPReport,
    ScoredMask,
    ap_report,
    average_precision,
    completion_metrics,
    match_instances,
    oap_report,
    order_by_area,
    order_by_iou_area,
    order_by_yaxis,
)
from .order import (
    CyclicOrderError,
    OcclusionMatrix,
    absolute_order,
    binary_labels,
    pairwise_from_trace,
    peel,
    peel_rounds,
    validate,
)
from .raster import BBox, bbox_from_mask, mask_iou, mask_to_rle, overlap_area, rle_to_mask
from .scene import (
    DecompositionTrace,
    Detection,
    InstanceRecord,
    Scene,
    TraceStep,
    composite,
    visible_masks,
)
from .synth import SynthConfig, generate_scene, ground_truth_matrix, layered_images, peel_plan

__version__ = "0.1.0"
