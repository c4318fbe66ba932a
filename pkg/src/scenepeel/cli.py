"""Command-line entry point: synth, decompose, eval, recompose, serve.

Every command writes a manifest.json next to its outputs capturing the
resolved configuration, seed, version, inputs/outputs and wall time, so
runs are reproducible from the manifest alone. A TOML config file can
supply defaults for any flag (flat keys named like the flags); explicit
flags win.

Exit codes: 0 success, 1 internal error, 2 invalid input or flags.
"""

from __future__ import annotations

import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import click
import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .components import (
    COMPLETER_NAMES,
    SEGMENTER_NAMES,
    CorruptionConfig,
    build_completer,
    build_segmenter,
)
from .dataset import DatasetRecord, read_dataset, record_from_scene, write_dataset
from .edit import Edit, EditError, apply_edit, recomposite
from .engine import EngineConfig, TraceBundle, decompose, read_trace, write_trace
from .metrics import (
    ScoredMask,
    ap_report,
    completion_metrics,
    oap_report,
    order_by_area,
    order_by_iou_area,
    order_by_yaxis,
)
from .order import OcclusionMatrix
from .raster import image_from_png, image_to_png
from .scene import Scene, composite
from .synth import SynthConfig, ground_truth_matrix, scene_for_index


class InputError(click.ClickException):
    exit_code = 2


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise InputError(f"cannot read config {path}: {exc}") from exc


def _resolved(ctx: click.Context, config: dict) -> dict:
    """Current command's parameters with config-file fallbacks applied."""
    out = {}
    for name, value in ctx.params.items():
        if name == "config":
            continue
        src = ctx.get_parameter_source(name)
        if src == click.core.ParameterSource.DEFAULT and name in config:
            value = config[name]
        out[name] = value
    return out


def _write_manifest(out_dir: Path, command: str, params: dict, inputs: list[str], started: float) -> None:
    manifest = {
        "command": command,
        "version": __version__,
        "seed": params.get("seed"),
        "config": {k: v for k, v in sorted(params.items())},
        "inputs": inputs,
        "output": str(out_dir),
        "wall_time_s": round(time.monotonic() - started, 3),
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=1))


def _synth_config(p: dict) -> SynthConfig:
    try:
        return SynthConfig(
            width=p["width"],
            height=p["height"],
            min_objects=p["min_objects"],
            max_objects=p["max_objects"],
            background_style=p["background"],
            noise=p["noise"],
            overlap_threshold=p["overlap_threshold"],
            seed=p["seed"],
        )
    except ValueError as exc:
        raise InputError(str(exc)) from exc


@click.group()
def main() -> None:
    """Layer-by-layer scene decomposition toolkit."""


def _common_synth_options(fn):
    for deco in reversed(
        [
            click.option("--seed", type=int, default=0, show_default=True),
            click.option("--width", type=int, default=256, show_default=True),
            click.option("--height", type=int, default=256, show_default=True),
            click.option("--min-objects", type=int, default=5, show_default=True),
            click.option("--max-objects", type=int, default=12, show_default=True),
            click.option("--background", type=click.Choice(["flat", "gradient"]), default="flat"),
            click.option("--noise", type=int, default=0, show_default=True),
            click.option("--overlap-threshold", type=int, default=1, show_default=True),
        ]
    ):
        fn = deco(fn)
    return fn


def _synth_one(args: tuple) -> DatasetRecord:
    cfg, index = args
    scene = scene_for_index(cfg, index)
    matrix = ground_truth_matrix(scene, cfg.overlap_threshold)
    return record_from_scene(scene, index, matrix, composite(scene))


@main.command("synth")
@click.option("--config", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--count", type=int, default=20, show_default=True)
@click.option("--jobs", type=int, default=1, show_default=True)
@click.option("--out", type=click.Path(file_okay=False), required=True)
@_common_synth_options
@click.pass_context
def cmd_synth(ctx: click.Context, **_kw) -> None:
    """Generate a dataset of sprite scenes with full annotations."""
    started = time.monotonic()
    p = _resolved(ctx, _load_config(ctx.params.get("config")))
    cfg = _synth_config(p)
    count, jobs = p["count"], p["jobs"]
    if count < 0:
        raise InputError("--count must be >= 0")
    work = [(cfg, i) for i in range(count)]
    if jobs > 1 and count > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(_synth_one, work))
    else:
        records = [_synth_one(w) for w in work]
    out_dir = Path(p["out"])
    write_dataset(records, out_dir)
    _write_manifest(out_dir, "synth", p, [], started)
    click.echo(f"wrote {count} scenes to {out_dir}")


def _dataset_synth_config(dataset_dir: Path) -> SynthConfig | None:
    manifest_path = dataset_dir / "manifest.json"
    if not manifest_path.exists():
        return None
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("command") != "synth":
        return None
    return _synth_config(manifest["config"])


def _decompose_one(args: tuple) -> int:
    (scene_cfg, index, image_path, seg_name, comp_name, engine_cfg, corruption, out_root, dump_steps) = args
    scene: Scene | None = None
    if scene_cfg is not None:
        scene = scene_for_index(scene_cfg, index)
    if scene is not None:
        image = composite(scene)
    else:
        image = image_from_png(Path(image_path).read_bytes())
    segmenter = build_segmenter(seg_name, scene, corruption, engine_cfg.overlap_threshold)
    completer = build_completer(comp_name, scene)
    result = decompose(image, segmenter, completer, engine_cfg)
    write_trace(result, Path(out_root) / f"scene_{index:05d}", dump_steps=dump_steps, completer=comp_name)
    return index


@main.command("decompose")
@click.option("--config", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--dataset", type=click.Path(exists=True, file_okay=False), default=None,
              help="Dataset directory produced by `synth`.")
@click.option("--image", "image_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Single PNG to decompose (heuristic components only).")
@click.option("--segmenter", type=str, default="oracle", show_default=True)
@click.option("--completer", type=str, default="oracle", show_default=True)
@click.option("--class-threshold", type=float, default=0.5, show_default=True)
@click.option("--nonocc-threshold", type=float, default=0.5, show_default=True)
@click.option("--max-steps", type=int, default=10, show_default=True)
@click.option("--max-detections", type=int, default=100, show_default=True)
@click.option("--overlap-threshold", type=int, default=1, show_default=True)
@click.option("--erode", type=int, default=0, show_default=True, help="Corruption: mask erosion radius.")
@click.option("--dilate", type=int, default=0, show_default=True, help="Corruption: mask dilation radius.")
@click.option("--flip-prob", type=float, default=0.0, show_default=True)
@click.option("--drop-prob", type=float, default=0.0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True, help="Corruption stream seed.")
@click.option("--dump-steps", is_flag=True, default=False)
@click.option("--jobs", type=int, default=1, show_default=True)
@click.option("--out", type=click.Path(file_okay=False), required=True)
@click.pass_context
def cmd_decompose(ctx: click.Context, **_kw) -> None:
    """Decompose scenes layer by layer and write per-scene traces."""
    started = time.monotonic()
    p = _resolved(ctx, _load_config(ctx.params.get("config")))
    if p["segmenter"] not in SEGMENTER_NAMES:
        raise InputError(f"unknown segmenter {p['segmenter']!r}; valid names: {', '.join(SEGMENTER_NAMES)}")
    if p["completer"] not in COMPLETER_NAMES:
        raise InputError(f"unknown completer {p['completer']!r}; valid names: {', '.join(COMPLETER_NAMES)}")
    engine_cfg = EngineConfig(
        class_score_threshold=p["class_threshold"],
        nonocc_threshold=p["nonocc_threshold"],
        max_steps=p["max_steps"],
        max_detections=p["max_detections"],
        overlap_threshold=p["overlap_threshold"],
    )
    corruption = CorruptionConfig(
        mask_erode_px=p["erode"],
        mask_dilate_px=p["dilate"],
        label_flip_prob=p["flip_prob"],
        drop_prob=p["drop_prob"],
        seed=p["seed"],
    )
    needs_scene = p["segmenter"] in ("oracle", "corrupted") or p["completer"] == "oracle"
    out_root = Path(p["out"])
    inputs: list[str] = []
    work = []
    if p["dataset"]:
        dataset_dir = Path(p["dataset"])
        inputs.append(str(dataset_dir))
        scene_cfg = _dataset_synth_config(dataset_dir)
        if needs_scene and scene_cfg is None:
            raise InputError(
                "oracle components need the dataset's synth manifest to regenerate scenes; "
                f"{dataset_dir}/manifest.json is missing or not from `synth`"
            )
        records = read_dataset(dataset_dir)
        for rec in records:
            work.append(
                (
                    scene_cfg,
                    rec.scene_id,
                    str(dataset_dir / rec.file_name),
                    p["segmenter"],
                    p["completer"],
                    engine_cfg,
                    corruption,
                    str(out_root),
                    p["dump_steps"],
                )
            )
    elif p["image_path"]:
        if needs_scene:
            raise InputError("a bare --image has no ground truth; use --segmenter heuristic --completer inpaint")
        inputs.append(p["image_path"])
        work.append(
            (None, 0, p["image_path"], p["segmenter"], p["completer"], engine_cfg, corruption,
             str(out_root), p["dump_steps"])
        )
    else:
        raise InputError("one of --dataset or --image is required")

    jobs = p["jobs"]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            list(pool.map(_decompose_one, work))
    else:
        for w in work:
            _decompose_one(w)
    _write_manifest(out_root, "decompose", p, inputs, started)
    click.echo(f"wrote {len(work)} traces to {out_root}")


def _namespaced(scene_index: int, iid: int) -> int:
    return scene_index * 1_000_000 + iid


def _format_table(headers: list[str], rows: list[list[str]]) -> str:
    widths = [max(len(h), *(len(r[k]) for r in rows)) if rows else len(h) for k, h in enumerate(headers)]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    lines = [fmt.format(*headers), fmt.format(*("-" * w for w in widths))]
    lines += [fmt.format(*row) for row in rows]
    return "\n".join(lines)


def _fmt(v: float | int | None) -> str:
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


@main.command("eval")
@click.option("--config", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--pred", type=click.Path(exists=True, file_okay=False), required=True,
              help="Trace root produced by `decompose`.")
@click.option("--gt", type=click.Path(exists=True, file_okay=False), required=True,
              help="Dataset directory produced by `synth`.")
@click.option("--baselines", is_flag=True, default=False)
@click.option("--overlap-threshold", type=int, default=1, show_default=True)
@click.option("--out", type=click.Path(file_okay=False), required=True)
@click.pass_context
def cmd_eval(ctx: click.Context, **_kw) -> None:
    """Score predicted traces against dataset ground truth."""
    started = time.monotonic()
    p = _resolved(ctx, _load_config(ctx.params.get("config")))
    pred_root, gt_root = Path(p["pred"]), Path(p["gt"])
    records = read_dataset(gt_root)
    missing = [rec.scene_id for rec in records if not (pred_root / f"scene_{rec.scene_id:05d}" / "trace.json").exists()]
    if missing:
        raise InputError(f"no trace for scene ids {missing} under {pred_root}")

    bundles: dict[int, TraceBundle] = {
        rec.scene_id: read_trace(pred_root / f"scene_{rec.scene_id:05d}") for rec in records
    }
    scene_cfg = _dataset_synth_config(gt_root)

    pooled_preds: list[ScoredMask] = []
    pooled_gts: dict[int, np.ndarray] = {}
    per_scene_oap: list[float] = []
    completion_rows = []
    all_pred_rows: list[tuple[DatasetRecord, TraceBundle]] = []
    for k, rec in enumerate(records):
        bundle = bundles[rec.scene_id]
        all_pred_rows.append((rec, bundle))
        gts = rec.gt_masks()
        for pred in bundle.instances:
            pooled_preds.append(ScoredMask(_namespaced(k, pred.id), pred.mask, pred.class_score))
        for gid, gmask in gts.items():
            pooled_gts[_namespaced(k, gid)] = gmask
        scene_report = oap_report(
            [ScoredMask(q.id, q.mask, q.class_score) for q in bundle.instances],
            bundle.matrix, gts, rec.matrix(),
        )
        if scene_report.oap is not None:
            per_scene_oap.append(scene_report.oap)
        if scene_cfg is not None:
            gt_scene = scene_for_index(scene_cfg, rec.scene_id)
            completion_rows.append(completion_metrics(bundle.final_image, gt_scene.background).as_dict())

    ap = ap_report(pooled_preds, pooled_gts)
    pooled = _pooled_oap(all_pred_rows)
    report: dict = {
        "scenes": len(records),
        "ap": ap.as_dict(),
        "oap": pooled.as_dict(),
        "oap_mean_over_scenes": float(np.mean(per_scene_oap)) if per_scene_oap else None,
        "completion": (
            {k: float(np.mean([row[k] for row in completion_rows])) for k in ("RMSE", "SSIM", "PSNR")}
            if completion_rows
            else None
        ),
    }

    tables = []
    tables.append(_format_table(list(ap.as_dict()), [[_fmt(v) for v in ap.as_dict().values()]]))
    oap_headers = ["Ordering Algorithm", "OAP", "OAP50", "OAP75", "OAP85", "OAP_S", "OAP_M", "OAP_L"]
    oap_rows = [["layer order"] + [_fmt(pooled.as_dict()[h]) for h in oap_headers[1:]]]
    if p["baselines"]:
        base_reports = _baseline_reports(all_pred_rows, p["overlap_threshold"])
        report["baselines"] = {name: rep.as_dict() for name, rep in base_reports.items()}
        for name, rep in base_reports.items():
            if name == "layer order":
                continue
            oap_rows.insert(0, [name] + [_fmt(rep.as_dict()[h]) for h in oap_headers[1:]])
    tables.append(_format_table(oap_headers, oap_rows))

    out_dir = Path(p["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(json.dumps(report, indent=1))
    (out_dir / "tables.txt").write_text("\n\n".join(tables) + "\n")
    _write_manifest(out_dir, "eval", p, [str(pred_root), str(gt_root)], started)
    click.echo("\n\n".join(tables))


def _pooled_oap(rows: list[tuple[DatasetRecord, TraceBundle]]):
    """OAP over per-scene pairs pooled into one denominators set, realized
    by evaluating a single block-diagonal problem with namespaced ids."""
    preds: list[ScoredMask] = []
    gts: dict[int, np.ndarray] = {}
    pred_ids: list[int] = []
    gt_ids: list[int] = []
    pred_blocks = []
    gt_blocks = []
    for k, (rec, bundle) in enumerate(rows):
        for q in bundle.instances:
            preds.append(ScoredMask(_namespaced(k, q.id), q.mask, q.class_score))
        for gid, gmask in rec.gt_masks().items():
            gts[_namespaced(k, gid)] = gmask
        pred_ids += [_namespaced(k, i) for i in bundle.matrix.ids]
        gt_ids += [_namespaced(k, i) for i in rec.matrix().ids]
        pred_blocks.append(bundle.matrix.entries)
        gt_blocks.append(rec.matrix().entries)
    pred_matrix = OcclusionMatrix(tuple(pred_ids), _block_diag(pred_blocks))
    gt_matrix = OcclusionMatrix(tuple(gt_ids), _block_diag(gt_blocks))
    return oap_report(preds, pred_matrix, gts, gt_matrix)


def _block_diag(blocks: list[np.ndarray]) -> np.ndarray:
    n = sum(b.shape[0] for b in blocks)
    out = np.zeros((n, n), dtype=np.int8)
    at = 0
    for b in blocks:
        out[at : at + b.shape[0], at : at + b.shape[0]] = b
        at += b.shape[0]
    return out


def _baseline_reports(rows: list[tuple[DatasetRecord, TraceBundle]], overlap_threshold: int):
    """Ordering baselines over the predicted masks, scored like the trace
    ordering itself. IoU-area uses the matched ground truth visible mask
    for each prediction, mirroring how the ratio is defined."""
    from .metrics import match_instances

    out = {}
    for name in ("Area", "Y-axis", "IoU Area", "layer order"):
        preds: list[ScoredMask] = []
        gts: dict[int, np.ndarray] = {}
        pred_ids: list[int] = []
        gt_ids: list[int] = []
        pred_blocks = []
        gt_blocks = []
        for k, (rec, bundle) in enumerate(rows):
            amodal = {_namespaced(k, q.id): q.mask for q in bundle.instances}
            scored = [ScoredMask(_namespaced(k, q.id), q.mask, q.class_score) for q in bundle.instances]
            gt_masks = {_namespaced(k, gid): m for gid, m in rec.gt_masks().items()}
            gt_vis = {_namespaced(k, gid): m for gid, m in rec.gt_visible_masks().items()}
            if name == "Area":
                m = order_by_area(amodal, "larger_behind", overlap_threshold)
            elif name == "Y-axis":
                m = order_by_yaxis(amodal, overlap_threshold)
            elif name == "IoU Area":
                matched = match_instances(scored, gt_masks, 0.5)
                visible = {
                    pid: (gt_vis[matched[pid]] if pid in matched else amodal[pid])
                    for pid in amodal
                }
                m = order_by_iou_area(visible, amodal, overlap_threshold)
            else:
                m = OcclusionMatrix(
                    tuple(_namespaced(k, i) for i in bundle.matrix.ids), bundle.matrix.entries
                )
            m = m.reordered(sorted(m.ids))
            preds += scored
            gts.update(gt_masks)
            pred_ids += list(m.ids)
            gt_ids += [_namespaced(k, i) for i in rec.matrix().ids]
            pred_blocks.append(m.entries)
            gt_blocks.append(rec.matrix().entries)
        pred_matrix = OcclusionMatrix(tuple(pred_ids), _block_diag(pred_blocks))
        gt_matrix = OcclusionMatrix(tuple(gt_ids), _block_diag(gt_blocks))
        out[name] = oap_report(preds, pred_matrix, gts, gt_matrix)
    return out


@main.command("recompose")
@click.option("--config", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--trace", type=click.Path(exists=True, file_okay=False), default=None,
              help="Trace directory written with --dump-steps.")
@click.option("--dataset", type=click.Path(exists=True, file_okay=False), default=None)
@click.option("--scene-id", type=int, default=0, show_default=True)
@click.option("--edits", "edits_path", type=click.Path(exists=True, dir_okay=False), required=True,
              help="JSON file with a list of edits.")
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@click.pass_context
def cmd_recompose(ctx: click.Context, **_kw) -> None:
    """Apply an edit script to a scene and write the recomposited PNG."""
    started = time.monotonic()
    p = _resolved(ctx, _load_config(ctx.params.get("config")))
    if bool(p["trace"]) == bool(p["dataset"]):
        raise InputError("exactly one of --trace or --dataset is required")
    if p["trace"]:
        from .edit import scene_from_decomposition

        bundle = read_trace(Path(p["trace"]))
        try:
            result = bundle.to_result()
        except ValueError as exc:
            raise InputError(str(exc)) from exc
        scene, _prov = scene_from_decomposition(result, bundle.completer == "inpaint")
        inputs = [p["trace"]]
    else:
        scene_cfg = _dataset_synth_config(Path(p["dataset"]))
        if scene_cfg is None:
            raise InputError(f"{p['dataset']}/manifest.json is missing or not from `synth`")
        scene = scene_for_index(scene_cfg, p["scene_id"])
        inputs = [p["dataset"]]

    try:
        raw = json.loads(Path(p["edits_path"]).read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"{p['edits_path']}: {exc}") from exc
    if not isinstance(raw, list):
        raise InputError("edit script must be a JSON list of edits")
    for k, entry in enumerate(raw):
        try:
            scene = apply_edit(scene, Edit.from_dict(entry))
        except EditError as exc:
            raise InputError(f"edit {k}: {exc}") from exc
    out_path = Path(p["out"])
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_bytes(image_to_png(recomposite(scene)))
    _write_manifest(out_path.parent, "recompose", p, inputs, started)
    click.echo(f"wrote {out_path}")


@main.command("serve")
@click.option("--config", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--host", type=str, default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8008, show_default=True)
@click.option("--data-dir", type=click.Path(file_okay=False), default=None,
              help="Persist sessions under this directory.")
@click.option("--cors-origin", "cors_origins", multiple=True, default=("*",), show_default=True)
@click.pass_context
def cmd_serve(ctx: click.Context, **_kw) -> None:
    """Run the recomposition HTTP service."""
    p = _resolved(ctx, _load_config(ctx.params.get("config")))
    from .service import serve

    serve(host=p["host"], port=p["port"], data_dir=p["data_dir"], cors_origins=tuple(p["cors_origins"]))


def entry() -> None:
    try:
        main(standalone_mode=False)
    except click.ClickException as exc:
        exc.show()
        sys.exit(exc.exit_code)
    except click.exceptions.Abort:
        sys.exit(1)
    except Exception as exc:  # noqa: BLE001
        click.echo(f"internal error: {exc}", err=True)
        sys.exit(1)


if __name__ == "__main__":
    entry()
