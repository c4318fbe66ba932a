"""HTTP service exposing synthesis, decomposition traces, editing, and
recomposition to the browser editor.

JSON in/out except the image endpoints, which return PNG bodies. Errors
are JSON objects of the form {"code": <int>, "message": <str>}.
"""

from __future__ import annotations

import base64
import io
import json
import threading
import uuid
from dataclasses import dataclass, field
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, Response
from PIL import Image

from .edit import Edit, EditError, Session, recomposite, scene_from_decomposition
from .engine import read_trace
from .order import absolute_order
from .raster import bbox_from_mask, image_from_png, image_to_png, mask_to_rle, rgba_png, rle_to_mask
from .scene import InstanceRecord, Scene, with_recomputed_visibility
from .synth import SynthConfig, generate_scene, ground_truth_matrix

import numpy as np


class ServiceError(Exception):
    def __init__(self, status: int, message: str):
        self.status = status
        self.message = message
        super().__init__(message)


@dataclass
class SessionStore:
    """In-memory sessions with optional directory persistence."""

    data_dir: Path | None = None
    _sessions: dict[str, Session] = field(default_factory=dict)
    _locks: dict[str, threading.Lock] = field(default_factory=dict)
    _registry_lock: threading.Lock = field(default_factory=threading.Lock)

    def __post_init__(self) -> None:
        if self.data_dir is not None:
            self.data_dir = Path(self.data_dir)
            self.data_dir.mkdir(parents=True, exist_ok=True)
            for session_dir in sorted(self.data_dir.glob("*/session.json")):
                session = _load_session(session_dir.parent)
                self._sessions[session.session_id] = session
                self._locks[session.session_id] = threading.Lock()

    def create(self, base: Scene, provenance: dict[int, str]) -> Session:
        sid = uuid.uuid4().hex[:12]
        session = Session(session_id=sid, base=base, provenance=provenance)
        with self._registry_lock:
            self._sessions[sid] = session
            self._locks[sid] = threading.Lock()
        self._persist(session)
        return session

    def get(self, sid: str) -> Session:
        try:
            return self._sessions[sid]
        except KeyError:
            raise ServiceError(404, f"unknown session {sid!r}") from None

    def lock(self, sid: str) -> threading.Lock:
        self.get(sid)
        return self._locks[sid]

    def _persist(self, session: Session) -> None:
        if self.data_dir is not None:
            _save_session(self.data_dir / session.session_id, session)

    def after_mutation(self, session: Session) -> None:
        self._persist(session)


def _save_session(root: Path, session: Session) -> None:
    root.mkdir(parents=True, exist_ok=True)
    scene = session.base
    (root / "background.png").write_bytes(image_to_png(scene.background))
    instances = []
    for rec in scene.instances:
        name = f"instance_{rec.id}.png"
        (root / name).write_bytes(image_to_png(rec.appearance))
        instances.append(
            {
                "id": rec.id,
                "category": rec.category,
                "z": rec.z,
                "mask": mask_to_rle(rec.amodal_mask),
                "appearance": name,
                "provenance": session.provenance.get(rec.id, "oracle"),
            }
        )
    payload = {
        "session_id": session.session_id,
        "width": scene.width,
        "height": scene.height,
        "instances": instances,
        "edits": [e.as_dict() for e in session.edits],
    }
    (root / "session.json").write_text(json.dumps(payload, indent=1))


def _load_session(root: Path) -> Session:
    payload = json.loads((root / "session.json").read_text())
    background = image_from_png((root / "background.png").read_bytes())
    records = []
    provenance = {}
    for inst in payload["instances"]:
        mask = rle_to_mask(inst["mask"])
        records.append(
            InstanceRecord(
                id=inst["id"],
                category=inst["category"],
                z=inst["z"],
                amodal_mask=mask,
                visible_mask=mask,
                appearance=image_from_png((root / inst["appearance"]).read_bytes()),
            )
        )
        provenance[inst["id"]] = inst.get("provenance", "oracle")
    base = with_recomputed_visibility(
        Scene(width=payload["width"], height=payload["height"], background=background, instances=tuple(records))
    )
    edits = [Edit.from_dict(e) for e in payload["edits"]]
    return Session(session_id=payload["session_id"], base=base, provenance=provenance, edits=edits)


def _thumbnail_data_uri(rec: InstanceRecord, max_px: int = 48) -> str:
    data = rgba_png(rec.appearance, rec.amodal_mask)
    with Image.open(io.BytesIO(data)) as im:
        box = rec.amodal_mask
        ys, xs = np.nonzero(box)
        im = im.crop((int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1))
        im.thumbnail((max_px, max_px))
        buf = io.BytesIO()
        im.save(buf, format="PNG")
    return "data:image/png;base64," + base64.b64encode(buf.getvalue()).decode("ascii")


def _instance_listing(session: Session) -> dict:
    scene = session.current
    instances = []
    for rec in sorted(scene.instances, key=lambda r: r.z):
        instances.append(
            {
                "id": rec.id,
                "category": rec.category,
                "z": rec.z,
                "bbox": bbox_from_mask(rec.amodal_mask).as_xywh(),
                "provenance": session.provenance.get(rec.id, "oracle"),
                "thumbnail": _thumbnail_data_uri(rec),
            }
        )
    return {
        "session_id": session.session_id,
        "width": scene.width,
        "height": scene.height,
        "edit_count": len(session.edits),
        "instances": instances,
    }


def session_from_trace_dir(path: Path) -> tuple[Scene, dict[int, str]]:
    bundle = read_trace(path)
    try:
        result = bundle.to_result()
    except ValueError as exc:
        raise ServiceError(422, str(exc)) from exc
    return scene_from_decomposition(result, inpainted_completer=bundle.completer == "inpaint")


def create_app(store: SessionStore | None = None, cors_origins: tuple[str, ...] = ("*",)) -> FastAPI:
    store = store or SessionStore()
    app = FastAPI(title="scenepeel recompose service")
    app.state.store = store
    app.add_middleware(
        CORSMiddleware,
        allow_origins=list(cors_origins),
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.exception_handler(ServiceError)
    async def _service_error(_request: Request, exc: ServiceError):
        return JSONResponse(status_code=exc.status, content={"code": exc.status, "message": exc.message})

    @app.exception_handler(EditError)
    async def _edit_error(_request: Request, exc: EditError):
        return JSONResponse(status_code=422, content={"code": 422, "message": str(exc)})

    @app.post("/scenes")
    def create_scene(body: dict):
        if "synth" in body:
            opts = dict(body["synth"] or {})
            try:
                cfg = SynthConfig(**opts)
            except (TypeError, ValueError) as exc:
                raise ServiceError(422, f"bad synth config: {exc}") from exc
            scene = generate_scene(cfg)
            provenance = {i: "oracle" for i in scene.ids}
        elif "trace_path" in body:
            path = Path(body["trace_path"])
            if not (path / "trace.json").exists():
                raise ServiceError(422, f"no trace.json under {path}")
            scene, provenance = session_from_trace_dir(path)
        else:
            raise ServiceError(422, "body must carry 'synth' or 'trace_path'")
        session = store.create(scene, provenance)
        return {"session_id": session.session_id}

    @app.get("/scenes/{sid}")
    def get_scene(sid: str):
        return _instance_listing(store.get(sid))

    @app.get("/scenes/{sid}/graph")
    def get_graph(sid: str):
        session = store.get(sid)
        matrix = ground_truth_matrix(session.current)
        orders = absolute_order(matrix)
        return {
            "ids": list(matrix.ids),
            "matrix": matrix.entries.tolist(),
            "orders": {str(k): v for k, v in orders.items()},
        }

    @app.post("/scenes/{sid}/edits")
    def post_edit(sid: str, body: dict):
        session = store.get(sid)
        edit = Edit.from_dict(body)
        with store.lock(sid):
            session.apply(edit)
            store.after_mutation(session)
        return _instance_listing(session)

    @app.post("/scenes/{sid}/undo")
    def post_undo(sid: str):
        session = store.get(sid)
        with store.lock(sid):
            session.undo()
            store.after_mutation(session)
        return _instance_listing(session)

    @app.get("/scenes/{sid}/image")
    def get_image(sid: str):
        session = store.get(sid)
        with store.lock(sid):
            png = image_to_png(recomposite(session.current))
        return Response(content=png, media_type="image/png")

    @app.get("/scenes/{sid}/instance/{iid}/image")
    def get_instance_image(sid: str, iid: int):
        session = store.get(sid)
        try:
            rec = session.current.instance(iid)
        except KeyError:
            raise ServiceError(404, f"unknown instance {iid}") from None
        return Response(content=rgba_png(rec.appearance, rec.amodal_mask), media_type="image/png")

    return app


def serve(host: str = "127.0.0.1", port: int = 8008, data_dir: str | None = None,
          cors_origins: tuple[str, ...] = ("*",)) -> None:
    """Run the service until interrupted."""
    import uvicorn

    store = SessionStore(data_dir=Path(data_dir) if data_dir else None)
    uvicorn.run(create_app(store, cors_origins), host=host, port=port, log_level="warning")


__all__ = ["SessionStore", "ServiceError", "create_app", "serve", "session_from_trace_dir"]
