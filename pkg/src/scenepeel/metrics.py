"""Evaluation: mask AP over IoU thresholds, ordering accuracy over matched
occluded pairs (OAP), completion quality (RMSE / SSIM / PSNR on [0, 1]
images), and the classical depth-ordering baselines.

Buckets follow the usual area convention on ground-truth full masks:
small < 32^2, medium in [32^2, 96^2), large >= 96^2. Metrics with no
eligible ground truth report None rather than 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .order import OcclusionMatrix
from .raster import DimensionMismatchError, mask_area, mask_iou, overlap_area

IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * k, 2) for k in range(10))

_SMALL_MAX = 32 * 32
_MEDIUM_MAX = 96 * 96

SIZE_BUCKETS = ("S", "M", "L")


def _bucket_of(area: int) -> str:
    if area < _SMALL_MAX:
        return "S"
    if area < _MEDIUM_MAX:
        return "M"
    return "L"


@dataclass(frozen=True)
class ScoredMask:
    """A predicted instance reduced to what matching needs."""

    id: int
    mask: np.ndarray
    score: float = 1.0


def match_instances(
    preds: Sequence[ScoredMask], gts: Mapping[int, np.ndarray], iou_t: float
) -> dict[int, int]:
    """Greedy score-descending matching; each ground truth is used once.

    A prediction takes the still-unmatched ground truth with the highest
    IoU, provided it reaches ``iou_t``.
    """
    mapping: dict[int, int] = {}
    taken: set[int] = set()
    for pred in sorted(preds, key=lambda p: (-p.score, p.id)):
        cands = [
            (mask_iou(pred.mask, gmask), -gid, gid)
            for gid, gmask in gts.items()
            if gid not in taken
        ]
        cands = [c for c in cands if c[0] >= iou_t]
        if cands:
            gid = max(cands)[2]
            mapping[pred.id] = gid
            taken.add(gid)
    return mapping


def average_precision(
    preds: Sequence[ScoredMask],
    gts: Mapping[int, np.ndarray],
    iou_t: float,
    size_bucket: str | None = None,
) -> float | None:
    """Area under the all-point interpolated precision-recall curve.

    With a size bucket, out-of-bucket ground truths are ignore regions: a
    prediction matching one is dropped from the ranking instead of
    counting as a false positive. Returns None when the bucket holds no
    ground truth.
    """
    if size_bucket is not None and size_bucket not in SIZE_BUCKETS:
        raise ValueError(f"unknown size bucket {size_bucket!r}")
    in_bucket = {
        gid: (size_bucket is None or _bucket_of(mask_area(gmask)) == size_bucket)
        for gid, gmask in gts.items()
    }
    n_pos = sum(in_bucket.values())
    if n_pos == 0:
        return None

    taken: set[int] = set()
    flags: list[bool] = []  # True = TP, False = FP; ignored preds skipped
    for pred in sorted(preds, key=lambda p: (-p.score, p.id)):
        cands = [
            (gid, mask_iou(pred.mask, gts[gid]))
            for gid in gts
            if gid not in taken
        ]
        cands = [(gid, iou) for gid, iou in cands if iou >= iou_t]
        bucketed = [c for c in cands if in_bucket[c[0]]]
        pool = bucketed or cands
        if pool:
            gid = max(pool, key=lambda c: (c[1], -c[0]))[0]
            taken.add(gid)
            if in_bucket[gid]:
                flags.append(True)
            # matched an ignore region: skip silently
        else:
            flags.append(False)

    if not flags:
        return 0.0
    tp = np.cumsum(flags, dtype=np.float64)
    fp = np.cumsum([not f for f in flags], dtype=np.float64)
    recall = tp / n_pos
    precision = tp / (tp + fp)
    for i in range(len(precision) - 2, -1, -1):
        precision[i] = max(precision[i], precision[i + 1])
    ap = 0.0
    prev_r = 0.0
    for r, p in zip(recall, precision):
        if r > prev_r:
            ap += (r - prev_r) * p
            prev_r = r
    return float(ap)


@dataclass(frozen=True)
class APReport:
    ap: float | None
    ap50: float | None
    ap75: float | None
    ap_s: float | None
    ap_m: float | None
    ap_l: float | None

    def as_dict(self) -> dict[str, float | None]:
        return {
            "AP": self.ap,
            "AP50": self.ap50,
            "AP75": self.ap75,
            "AP_S": self.ap_s,
            "AP_M": self.ap_m,
            "AP_L": self.ap_l,
        }


def _mean_defined(values: list[float | None]) -> float | None:
    defined = [v for v in values if v is not None]
    return float(np.mean(defined)) if defined else None


def ap_report(preds: Sequence[ScoredMask], gts: Mapping[int, np.ndarray]) -> APReport:
    per_t = [average_precision(preds, gts, t) for t in IOU_THRESHOLDS]
    buckets = {
        b: _mean_defined([average_precision(preds, gts, t, b) for t in IOU_THRESHOLDS])
        for b in SIZE_BUCKETS
    }
    return APReport(
        ap=_mean_defined(per_t),
        ap50=average_precision(preds, gts, 0.5),
        ap75=average_precision(preds, gts, 0.75),
        ap_s=buckets["S"],
        ap_m=buckets["M"],
        ap_l=buckets["L"],
    )


# --- occlusion-order accuracy ----------------------------------------------

def _oap_at(
    preds: Sequence[ScoredMask],
    pred_matrix: OcclusionMatrix,
    gts: Mapping[int, np.ndarray],
    gt_matrix: OcclusionMatrix,
    iou_t: float,
) -> tuple[dict[str, int], dict[str, int], int, int]:
    """Correct/total ordered-pair counts per bucket at one threshold, plus
    counts for relations the ground truth calls unrelated."""
    mapping = match_instances(preds, gts, iou_t)
    matched = sorted(mapping)
    correct: dict[str, int] = {b: 0 for b in SIZE_BUCKETS}
    total: dict[str, int] = {b: 0 for b in SIZE_BUCKETS}
    false_rel = 0
    zero_pairs = 0
    for a in range(len(matched)):
        for b in range(a + 1, len(matched)):
            pa, pb = matched[a], matched[b]
            ga, gb = mapping[pa], mapping[pb]
            gt_rel = gt_matrix.get(ga, gb)
            pred_rel = pred_matrix.get(pa, pb)
            if gt_rel == 0:
                zero_pairs += 1
                if pred_rel != 0:
                    false_rel += 1
                continue
            back = gb if gt_rel == 1 else ga
            bucket = _bucket_of(mask_area(gts[back]))
            total[bucket] += 1
            if pred_rel == gt_rel:
                correct[bucket] += 1
    return correct, total, false_rel, zero_pairs


def _ratio(correct: dict[str, int], total: dict[str, int], buckets: Sequence[str]) -> float | None:
    t = sum(total[b] for b in buckets)
    if t == 0:
        return None
    return sum(correct[b] for b in buckets) / t


@dataclass(frozen=True)
class OAPReport:
    oap: float | None
    oap50: float | None
    oap75: float | None
    oap85: float | None
    oap_s: float | None
    oap_m: float | None
    oap_l: float | None
    pairs: int
    pairs_s: int
    pairs_m: int
    pairs_l: int
    false_relation_rate: float | None

    def as_dict(self) -> dict[str, float | int | None]:
        return {
            "OAP": self.oap,
            "OAP50": self.oap50,
            "OAP75": self.oap75,
            "OAP85": self.oap85,
            "OAP_S": self.oap_s,
            "OAP_M": self.oap_m,
            "OAP_L": self.oap_l,
            "pairs": self.pairs,
            "pairs_S": self.pairs_s,
            "pairs_M": self.pairs_m,
            "pairs_L": self.pairs_l,
            "false_relation_rate": self.false_relation_rate,
        }


def oap_report(
    preds: Sequence[ScoredMask],
    pred_matrix: OcclusionMatrix,
    gts: Mapping[int, np.ndarray],
    gt_matrix: OcclusionMatrix,
) -> OAPReport:
    """Ordering accuracy over matched, ground-truth-occluded pairs.

    The headline OAP averages the per-threshold accuracies over the usual
    0.50:0.05:0.95 grid (matching is re-run per threshold); OAP50/75/85
    are the fixed-threshold variants. Pairs whose ground-truth relation
    is 0 never enter the denominators; predictions that order such pairs
    anyway are summarized separately as the false-relation rate at 0.5.
    """
    per_t: list[float | None] = []
    per_bucket: dict[str, list[float | None]] = {b: [] for b in SIZE_BUCKETS}
    fixed: dict[float, float | None] = {}
    pairs_at_50 = {b: 0 for b in SIZE_BUCKETS}
    false_rate = None
    for t in IOU_THRESHOLDS:
        correct, total, false_rel, zero_pairs = _oap_at(preds, pred_matrix, gts, gt_matrix, t)
        per_t.append(_ratio(correct, total, SIZE_BUCKETS))
        for b in SIZE_BUCKETS:
            per_bucket[b].append(_ratio(correct, total, (b,)))
        if t in (0.5, 0.75, 0.85):
            fixed[t] = _ratio(correct, total, SIZE_BUCKETS)
        if t == 0.5:
            pairs_at_50 = dict(total)
            false_rate = false_rel / zero_pairs if zero_pairs else None
    return OAPReport(
        oap=_mean_defined(per_t),
        oap50=fixed.get(0.5),
        oap75=fixed.get(0.75),
        oap85=fixed.get(0.85),
        oap_s=_mean_defined(per_bucket["S"]),
        oap_m=_mean_defined(per_bucket["M"]),
        oap_l=_mean_defined(per_bucket["L"]),
        pairs=sum(pairs_at_50.values()),
        pairs_s=pairs_at_50["S"],
        pairs_m=pairs_at_50["M"],
        pairs_l=pairs_at_50["L"],
        false_relation_rate=false_rate,
    )


# --- completion quality -----------------------------------------------------

_SSIM_C1 = 0.01**2
_SSIM_C2 = 0.03**2
_SSIM_WINDOW = 8


@dataclass(frozen=True)
class CompletionMetrics:
    rmse: float
    ssim: float
    psnr: float

    def as_dict(self) -> dict[str, float]:
        return {"RMSE": self.rmse, "SSIM": self.ssim, "PSNR": self.psnr}


def completion_metrics(pred: np.ndarray, gt: np.ndarray) -> CompletionMetrics:
    """RMSE, mean local SSIM (8x8 windows, stride 1, per channel), and
    PSNR, all on intensities in [0, 1]. PSNR is pinned to 100 dB once the
    RMSE drops below 1e-5."""
    if pred.shape != gt.shape:
        raise DimensionMismatchError(f"image shapes differ: {pred.shape} vs {gt.shape}")
    if pred.shape[0] < _SSIM_WINDOW or pred.shape[1] < _SSIM_WINDOW:
        raise ValueError(f"images must be at least {_SSIM_WINDOW}px on each side")
    x = np.asarray(pred, dtype=np.float64) / 255.0
    y = np.asarray(gt, dtype=np.float64) / 255.0
    rmse = float(np.sqrt(np.mean((x - y) ** 2)))
    psnr = 100.0 if rmse < 1e-5 else float(20.0 * math.log10(1.0 / rmse))
    ssim_vals = [_ssim_channel(x[..., c], y[..., c]) for c in range(x.shape[2])]
    return CompletionMetrics(rmse=rmse, ssim=float(np.mean(ssim_vals)), psnr=psnr)


def _ssim_channel(x: np.ndarray, y: np.ndarray) -> float:
    win = (_SSIM_WINDOW, _SSIM_WINDOW)
    xw = sliding_window_view(x, win)
    yw = sliding_window_view(y, win)
    mu_x = xw.mean(axis=(-2, -1))
    mu_y = yw.mean(axis=(-2, -1))
    var_x = (xw**2).mean(axis=(-2, -1)) - mu_x**2
    var_y = (yw**2).mean(axis=(-2, -1)) - mu_y**2
    cov = (xw * yw).mean(axis=(-2, -1)) - mu_x * mu_y
    num = (2 * mu_x * mu_y + _SSIM_C1) * (2 * cov + _SSIM_C2)
    den = (mu_x**2 + mu_y**2 + _SSIM_C1) * (var_x + var_y + _SSIM_C2)
    return float((num / den).mean())


# --- ordering baselines ------------------------------------------------------

AREA_CONVENTIONS = ("larger_front", "larger_behind")


def _pairwise_by_rank(
    amodal: Mapping[int, np.ndarray],
    rank: Mapping[int, float],
    overlap_threshold: int,
    higher_is_front: bool,
) -> OcclusionMatrix:
    ids = sorted(amodal)
    entries = np.zeros((len(ids), len(ids)), dtype=np.int8)
    for a in range(len(ids)):
        for b in range(a + 1, len(ids)):
            ia, ib = ids[a], ids[b]
            if overlap_area(amodal[ia], amodal[ib]) < overlap_threshold:
                continue
            ra, rb = rank[ia], rank[ib]
            if ra == rb:
                continue  # tie: leave the pair unordered
            front_a = (ra > rb) == higher_is_front
            entries[a, b] = 1 if front_a else -1
            entries[b, a] = -entries[a, b]
    return OcclusionMatrix(tuple(ids), entries)


def order_by_area(
    amodal: Mapping[int, np.ndarray],
    convention: str = "larger_behind",
    overlap_threshold: int = 1,
) -> OcclusionMatrix:
    """Order overlapping pairs by full-mask area; which end is "front"
    depends on the dataset convention."""
    if convention not in AREA_CONVENTIONS:
        raise ValueError(f"unknown convention {convention!r}; valid: {AREA_CONVENTIONS}")
    rank = {iid: float(mask_area(m)) for iid, m in amodal.items()}
    return _pairwise_by_rank(amodal, rank, overlap_threshold, higher_is_front=(convention == "larger_front"))


def order_by_yaxis(amodal: Mapping[int, np.ndarray], overlap_threshold: int = 1) -> OcclusionMatrix:
    """Masks reaching closest to the image bottom are taken as in front."""
    rank = {iid: float(np.nonzero(m)[0].max()) for iid, m in amodal.items()}
    return _pairwise_by_rank(amodal, rank, overlap_threshold, higher_is_front=True)


def order_by_iou_area(
    visible: Mapping[int, np.ndarray],
    amodal: Mapping[int, np.ndarray],
    overlap_threshold: int = 1,
) -> OcclusionMatrix:
    """The instance whose visible mask covers more of its full mask (higher
    visible/full IoU) is taken as in front of each overlapping pair."""
    missing = set(amodal) ^ set(visible)
    if missing:
        raise KeyError(f"visible/amodal id sets differ on {sorted(missing)}")
    rank = {iid: mask_iou(visible[iid], amodal[iid]) for iid in amodal}
    return _pairwise_by_rank(amodal, rank, overlap_threshold, higher_is_front=True)
