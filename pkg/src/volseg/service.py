"""HTTP/JSON session service: volume upload, slice rendering, interactive
prompting, propagation, editing, and mask alternatives.

Sessions live in memory with a single-writer contract per session: mutations
take the session lock (busy -> 503) and honor If-Match revision checks
(stale -> 409). GET /mask snapshots masks together with the revision they
belong to, so a response never mixes two revisions.
"""

from __future__ import annotations

import io
import threading
import uuid
from dataclasses import dataclass, field

import numpy as np
from fastapi import FastAPI, Request, Response
from fastapi.responses import JSONResponse
from PIL import Image

from . import API_VERSION, __version__
from .evalbench import dice3d
from .maskops import Box, rle_decode, rle_encode
from .propagate import Boundaries, Session, SliceSegmenter
from .prompts import NEGATIVE, POSITIVE, PointPrompt, PromptSet
from .volume import (
    DEFAULT_WINDOW,
    LabelVolume,
    NiftiError,
    Volume,
    WindowSpec,
    parse_labels_nifti,
    parse_nifti,
    window_normalize,
)

MAX_UPLOAD_BYTES = 256 * 1024 * 1024


@dataclass
class ServiceConfig:
    max_upload_bytes: int = MAX_UPLOAD_BYTES
    cors_origin: str | None = None


@dataclass
class SessionState:
    session: Session
    volume_id: str
    gt: np.ndarray | None  # (Z,Y,X) bool when labels are attached
    lock: threading.Lock = field(default_factory=threading.Lock)


@dataclass
class AppState:
    make_segmenter: "SegmenterProvider"
    config: ServiceConfig = field(default_factory=ServiceConfig)
    volumes: dict[str, Volume] = field(default_factory=dict)
    labels: dict[str, LabelVolume] = field(default_factory=dict)
    sessions: dict[str, SessionState] = field(default_factory=dict)
    counter: int = 0

    def new_id(self, prefix: str) -> str:
        self.counter += 1
        return f"{prefix}-{self.counter:04d}-{uuid.uuid4().hex[:8]}"


# (volume, labels-or-None, class-or-None) -> segmenter for one session
SegmenterProvider = "typing.Callable"


def _error(status: int, detail: str) -> JSONResponse:
    return JSONResponse({"detail": detail, "api_version": API_VERSION}, status_code=status)


def _parse_point(data: dict) -> PointPrompt:
    label_raw = data.get("label", "positive")
    if label_raw in ("positive", 1, True):
        label = POSITIVE
    elif label_raw in ("negative", 0, False):
        label = NEGATIVE
    else:
        raise ValueError(f"point label must be positive or negative, got {label_raw!r}")
    return PointPrompt(int(data["row"]), int(data["col"]), label)


def _parse_prompt(data: dict, lowres: int) -> PromptSet:
    box = None
    if data.get("box") is not None:
        r0, c0, r1, c1 = (int(v) for v in data["box"])
        box = Box(r0, c0, r1, c1)
    points = tuple(_parse_point(p) for p in data.get("points", []))
    mask = None
    if data.get("mask") is not None:
        m = data["mask"]
        shape = tuple(int(v) for v in m["shape"])
        if shape != (lowres, lowres):
            raise ValueError(f"mask prompt shape {shape} != low-res grid ({lowres}, {lowres})")
        mask = rle_decode(m["runs"], shape)
        if not mask.any():
            raise ValueError("mask prompt is empty")
    return PromptSet(box=box, points=points, mask=mask)


def _mask_payload(state: SessionState) -> dict:
    masks = state.session.masks
    return {
        "revision": state.session.revision,
        "shape": list(masks.shape),
        "rle": [rle_encode(masks[z]) for z in range(masks.shape[0])],
        "api_version": API_VERSION,
    }


def _summary(state: SessionState) -> dict:
    masks = state.session.masks
    out = {
        "foreground_voxels": int(masks.sum()),
        "nonempty_slices": int(masks.any(axis=(1, 2)).sum()),
    }
    if state.gt is not None:
        out["dice3d"] = dice3d(masks, state.gt)
        bounds = state.session.boundaries
        out["slice_dice"] = {
            str(z): dice3d(masks[z][None], state.gt[z][None])
            for z in range(bounds.bottom, bounds.top + 1)
        }
    return out


def create_app(make_segmenter, config: ServiceConfig | None = None) -> FastAPI:
    """Build the service; make_segmenter(volume, labels, class_id) -> SliceSegmenter."""
    state = AppState(make_segmenter, config or ServiceConfig())
    app = FastAPI(title="volseg", version=__version__)
    app.state.volseg = state

    if state.config.cors_origin:
        from fastapi.middleware.cors import CORSMiddleware

        app.add_middleware(
            CORSMiddleware,
            allow_origins=[state.config.cors_origin],
            allow_methods=["*"],
            allow_headers=["*"],
        )

    @app.get("/health")
    def health():
        return {"status": "ok", "version": __version__, "api_version": API_VERSION}

    @app.post("/volumes", status_code=201)
    async def upload_volume(request: Request):
        body = await request.body()
        if len(body) > state.config.max_upload_bytes:
            return _error(413, f"upload exceeds {state.config.max_upload_bytes} bytes")
        try:
            volume, _ = parse_nifti(body)
        except NiftiError as exc:
            return _error(400, f"NIfTI parse failed: {exc}")
        vid = state.new_id("vol")
        state.volumes[vid] = volume
        return {
            "volume_id": vid,
            "dims": list(volume.dims),
            "spacing": list(volume.spacing),
            "api_version": API_VERSION,
        }

    @app.post("/volumes/{vid}/labels")
    async def upload_labels(vid: str, request: Request):
        if vid not in state.volumes:
            return _error(404, f"unknown volume {vid}")
        body = await request.body()
        if len(body) > state.config.max_upload_bytes:
            return _error(413, f"upload exceeds {state.config.max_upload_bytes} bytes")
        try:
            labels, _ = parse_labels_nifti(body)
        except NiftiError as exc:
            return _error(400, f"NIfTI parse failed: {exc}")
        if labels.dims != state.volumes[vid].dims:
            return _error(400, f"label dims {labels.dims} != volume dims {state.volumes[vid].dims}")
        state.labels[vid] = labels
        return {"volume_id": vid, "class_ids": labels.class_ids(), "api_version": API_VERSION}

    @app.get("/volumes/{vid}/slices/{k}")
    def get_slice(vid: str, k: int, window: str | None = None):
        if vid not in state.volumes:
            return _error(404, f"unknown volume {vid}")
        volume = state.volumes[vid]
        if not 0 <= k < volume.dims[0]:
            return _error(416, f"slice {k} out of range [0, {volume.dims[0]})")
        spec = DEFAULT_WINDOW
        if window is not None:
            try:
                lo, hi = (float(v) for v in window.split(","))
                spec = WindowSpec(lo, hi)
            except ValueError as exc:
                return _error(400, f"bad window parameter: {exc}")
        normalized = window_normalize(volume.voxels[k], spec)
        pixels = np.rint(normalized * 255.0).astype(np.uint8)
        buf = io.BytesIO()
        Image.fromarray(pixels, mode="L").save(buf, format="PNG")
        return Response(buf.getvalue(), media_type="image/png")

    @app.post("/sessions", status_code=201)
    def create_session(body: dict):
        vid = body.get("volume_id")
        if vid not in state.volumes:
            return _error(404, f"unknown volume {vid}")
        try:
            bounds = Boundaries(int(body["boundaries"][0]), int(body["boundaries"][1]))
            mode = body.get("mode", "mask")
            if mode not in ("mask", "bbox"):
                raise ValueError(f"mode must be mask or bbox, got {mode!r}")
            volume = state.volumes[vid]
            bounds.check_within(volume.dims[0])
        except (KeyError, ValueError, TypeError) as exc:
            return _error(422, f"bad session request: {exc}")
        labels = state.labels.get(vid)
        label_class = body.get("label_class")
        gt = None
        if labels is not None and label_class is not None:
            gt = labels.class_mask(int(label_class))
        segmenter: SliceSegmenter = state.make_segmenter(
            volume, labels, int(label_class) if label_class is not None else None
        )
        session = Session(volume, bounds, mode, segmenter)
        sid = state.new_id("sess")
        state.sessions[sid] = SessionState(session, vid, gt)
        return {
            "session_id": sid,
            "volume_id": vid,
            "revision": session.revision,
            "api_version": API_VERSION,
        }

    def _locked_session(sid: str, request: Request):
        st = state.sessions.get(sid)
        if st is None:
            return None, _error(404, f"unknown session {sid}")
        if_match = request.headers.get("If-Match")
        if if_match is not None and if_match != str(st.session.revision):
            return None, _error(
                409, f"stale revision {if_match}, current is {st.session.revision}"
            )
        if not st.lock.acquire(blocking=False):
            return None, JSONResponse(
                {"detail": "session busy", "api_version": API_VERSION},
                status_code=503,
                headers={"Retry-After": "1"},
            )
        return st, None

    @app.post("/sessions/{sid}/prompt")
    def post_prompt(sid: str, body: dict, request: Request):
        st, err = _locked_session(sid, request)
        if err:
            return err
        try:
            k = int(body["slice"])
            if not st.session.boundaries.contains(k):
                return _error(422, f"slice {k} outside boundaries {st.session.boundaries}")
            try:
                prompt = _parse_prompt(body.get("prompt", {}), st.session.model.lowres_size)
            except (KeyError, ValueError, TypeError) as exc:
                return _error(422, f"bad prompt: {exc}")
            st.session.prompt(k, prompt)
            return {
                "revision": st.session.revision,
                "summary": _summary(st),
                "api_version": API_VERSION,
            }
        finally:
            st.lock.release()

    @app.post("/sessions/{sid}/edit")
    def post_edit(sid: str, body: dict, request: Request):
        st, err = _locked_session(sid, request)
        if err:
            return err
        try:
            k = int(body["slice"])
            if not st.session.boundaries.contains(k):
                return _error(422, f"slice {k} outside boundaries {st.session.boundaries}")
            if st.session.initial is None:
                return _error(422, "session has no prediction to edit yet")
            try:
                point = _parse_point(body["point"])
            except (KeyError, ValueError, TypeError) as exc:
                return _error(422, f"bad edit point: {exc}")
            st.session.apply_edit(k, point)
            return {
                "revision": st.session.revision,
                "summary": _summary(st),
                "api_version": API_VERSION,
            }
        finally:
            st.lock.release()

    @app.get("/sessions/{sid}/mask")
    def get_mask(sid: str):
        st = state.sessions.get(sid)
        if st is None:
            return _error(404, f"unknown session {sid}")
        with st.lock:  # snapshot under the lock: one revision per response
            return _mask_payload(st)

    @app.get("/sessions/{sid}/alternatives")
    def get_alternatives(sid: str, slice: int):
        st = state.sessions.get(sid)
        if st is None:
            return _error(404, f"unknown session {sid}")
        with st.lock:
            session = st.session
            if not session.boundaries.contains(slice):
                return _error(422, f"slice {slice} outside boundaries {session.boundaries}")
            if slice not in session.secondaries:
                return _error(422, f"slice {slice} has no alternatives yet")
            alts = session.secondaries[slice]
            return {
                "revision": session.revision,
                "slice": slice,
                "shape": list(alts[0].shape),
                "alternatives": [rle_encode(alts[i]) for i in range(3)],
                "api_version": API_VERSION,
            }

    @app.post("/sessions/{sid}/select")
    def post_select(sid: str, body: dict, request: Request):
        st, err = _locked_session(sid, request)
        if err:
            return err
        try:
            k = int(body["slice"])
            idx = int(body["mask_index"])
            try:
                st.session.select_alternative(k, idx)
            except ValueError as exc:
                return _error(422, str(exc))
            return {
                "revision": st.session.revision,
                "summary": _summary(st),
                "api_version": API_VERSION,
            }
        finally:
            st.lock.release()

    return app
