"""HTTP edit service: thin JSON/base64 wrappers around the edit pipeline.

Model parameters are immutable after load. Optimization runs are capped by a
bounded worker pool; optimized perturbations can be cached under a client
session id so alpha re-sweeps skip re-optimization.
"""

import base64
import binascii
import re
import threading
import time
from pathlib import Path
from typing import List, Optional

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, Response
from pydantic import BaseModel, Field

from .grounding import EditInstruction
from .sampleopt import OptConfig, optimize_perturbations
from .synthdata import load_split
from .util import load_png, model_hash, png_bytes
from .pipeline import EditPipeline

MAX_IMAGE_BYTES = 1_000_000
OPT_STEP_CAP = 500
OPT_WALL_CAP_S = 60.0
SESSION_TTL_S = 600.0
CORPUS_ID = re.compile(r"^(train|val|test)-\d{5}$")


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str, field: Optional[str] = None):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message
        self.field = field

    def body(self) -> dict:
        out = {"code": self.code, "message": self.message}
        if self.field:
            out["field"] = self.field
        return out


class EditRequest(BaseModel):
    image: str = Field(description="base64 PNG, or a corpus image id like val-00003")
    kind: str = Field(pattern="^(change|remove|relative)$")
    source_phrase: str
    target_phrase: str = ""
    sign: int = 1
    alpha: float = Field(ge=0)
    use_opt: bool = False
    opt_steps: Optional[int] = Field(default=None, ge=0, le=OPT_STEP_CAP)
    session_id: Optional[str] = None
    seed: int = 0


class SweepRequest(EditRequest):
    grid: List[float] = Field(min_length=1)


def _b64_image(data: str):
    try:
        raw = base64.b64decode(data, validate=True)
    except (binascii.Error, ValueError):
        raise ApiError(400, "bad_image", "image is neither a corpus id nor valid base64", field="image")
    if len(raw) > MAX_IMAGE_BYTES:
        raise ApiError(413, "image_too_large", f"image exceeds {MAX_IMAGE_BYTES} bytes")
    try:
        return load_png(raw)
    except Exception:
        raise ApiError(400, "bad_image", "image bytes do not decode as PNG", field="image")


def _encode_png(image) -> str:
    return base64.b64encode(png_bytes(image)).decode("ascii")


class SessionCache:
    """Perturbation sets keyed by session id with a TTL; thread-safe."""

    def __init__(self, ttl: float = SESSION_TTL_S):
        self.ttl = ttl
        self._lock = threading.Lock()
        self._entries = {}

    def get(self, session_id: str, fingerprint: tuple):
        with self._lock:
            entry = self._entries.get(session_id)
            if entry is None:
                return None
            expires, fp, tensors = entry
            if time.monotonic() > expires or fp != fingerprint:
                self._entries.pop(session_id, None)
                return None
            return tensors

    def put(self, session_id: str, fingerprint: tuple, tensors) -> None:
        with self._lock:
            self._entries[session_id] = (time.monotonic() + self.ttl, fingerprint, tensors)


def create_app(vse_path, decoder_path, corpus_root=None, serve_ui: bool = False, opt_workers: int = 2) -> FastAPI:
    app = FastAPI(title="openedit service")
    state = {"pipeline": None, "corpus_root": corpus_root}
    if Path(vse_path).exists() and Path(decoder_path).exists():
        state["pipeline"] = EditPipeline.from_checkpoints(vse_path, decoder_path)
    sessions = SessionCache()
    opt_pool = threading.BoundedSemaphore(opt_workers)

    @app.exception_handler(ApiError)
    async def _api_error(_req: Request, exc: ApiError):
        return JSONResponse(status_code=exc.status, content=exc.body())

    @app.exception_handler(RequestValidationError)
    async def _validation_error(_req: Request, exc: RequestValidationError):
        first = exc.errors()[0] if exc.errors() else {}
        field = ".".join(str(p) for p in first.get("loc", []) if p != "body") or None
        return JSONResponse(
            status_code=400,
            content={"code": "schema_violation", "message": first.get("msg", "invalid request"), "field": field},
        )

    def pipeline() -> EditPipeline:
        if state["pipeline"] is None:
            raise ApiError(503, "model_not_loaded", "service started without trained checkpoints")
        return state["pipeline"]

    def resolve_image(request: EditRequest):
        if CORPUS_ID.match(request.image):
            split, idx = request.image.split("-")
            path = Path(state["corpus_root"] or "") / split / "images" / f"{request.image}.png"
            if not state["corpus_root"] or not path.exists():
                raise ApiError(404, "unknown_image", f"corpus image not found: {request.image}", field="image")
            return load_png(path)
        return _b64_image(request.image)

    def instruction(request: EditRequest, alpha=None) -> EditInstruction:
        instr = EditInstruction(
            kind=request.kind,
            source_phrase=request.source_phrase,
            target_phrase=request.target_phrase,
            sign=request.sign,
            alpha=request.alpha if alpha is None else alpha,
        )
        try:
            instr.validate()
        except ValueError as e:
            raise ApiError(400, "schema_violation", str(e))
        pipe = pipeline()
        for fname, phrase in (("source_phrase", instr.source_phrase), ("target_phrase", instr.target_phrase)):
            if phrase and pipe.vse.vocab.all_oov(phrase.split()):
                raise ApiError(422, "phrase_not_encodable", f"all tokens out of vocabulary: {phrase!r}", field=fname)
        return instr

    def run_optimization(image, instr, request: EditRequest):
        """Returns (perturbation tensors, trace, opt_ms); honors the session cache."""
        pipe = pipeline()
        fingerprint = (instr.kind, instr.source_phrase, instr.target_phrase, instr.sign, request.seed)
        if request.session_id:
            cached = sessions.get(request.session_id, fingerprint)
            if cached is not None:
                return cached, None, 0.0
        if not opt_pool.acquire(blocking=False):
            raise ApiError(429, "busy", "optimization worker pool is full, retry later")
        try:
            t0 = time.monotonic()
            steps = request.opt_steps if request.opt_steps is not None else 100
            config = OptConfig(steps=steps, max_seconds=OPT_WALL_CAP_S)
            opt = optimize_perturbations(image, instr, pipe.vse, pipe.generator, config, edges=pipe.edges_for(image))
            opt_ms = (time.monotonic() - t0) * 1000.0
        finally:
            opt_pool.release()
        tensors = opt.perturbations.tensors
        if request.session_id:
            sessions.put(request.session_id, fingerprint, tensors)
        return tensors, opt.trace, opt_ms

    @app.post("/v1/edit")
    def edit(request: EditRequest):
        t0 = time.monotonic()
        pipe = pipeline()
        image = resolve_image(request)
        instr = instruction(request)
        perturbations = None
        trace = None
        if request.use_opt:
            perturbations, trace, _ = run_optimization(image, instr, request)
        result = pipe.edit(image, instr, seed=request.seed, perturbations=perturbations)
        return {
            "image_out": _encode_png(result.image_out),
            "reconstruction": _encode_png(result.reconstruction),
            "grounding": result.grounding.tolist(),
            "loss_trace": trace if trace is not None else result.loss_trace,
            "warnings": result.warnings,
            "timing_ms": (time.monotonic() - t0) * 1000.0,
        }

    @app.post("/v1/sweep")
    def sweep(request: SweepRequest):
        t0 = time.monotonic()
        pipe = pipeline()
        if any(a < 0 for a in request.grid):
            raise ApiError(400, "schema_violation", "alpha grid values must be >= 0", field="grid")
        image = resolve_image(request)
        grid = sorted(request.grid)
        opt_ms = 0.0
        perturbations = None
        trace = None
        warnings = []
        if request.use_opt:
            strongest = instruction(request, alpha=grid[-1])
            perturbations, trace, opt_ms = run_optimization(image, strongest, request)

        instr = instruction(request, alpha=grid[0])
        from .util import seed_all

        seed_all(request.seed)
        V = pipe.vse.encode_image(image)
        edges = pipe.edges_for(image)
        from .decoder.generator import decode
        from .grounding import apply_instruction

        frames = []
        for alpha in grid:
            step = EditInstruction(instr.kind, instr.source_phrase, instr.target_phrase, instr.sign, alpha)
            edited, _ = apply_instruction(V, step, pipe.vse.encode_text)
            frames.append({"alpha": alpha, "image": _encode_png(decode(pipe.generator, edited, edges, perturbations))})
        return {
            "frames": frames,
            "loss_trace": trace,
            "warnings": warnings,
            "timing_ms": (time.monotonic() - t0) * 1000.0,
            "opt_ms": opt_ms,
        }

    @app.get("/v1/health")
    def health():
        pipe = pipeline()
        return {
            "status": "ok",
            "checkpoints": {"vse": model_hash(pipe.vse), "decoder": model_hash(pipe.generator)},
            "config": {
                "dim": pipe.vse.dim,
                "grid": pipe.vse.grid,
                "use_edges": pipe.use_edges,
                "canvas_size": pipe.generator.out_size,
            },
        }

    @app.get("/v1/corpus/{split}")
    def corpus_list(split: str, limit: int = 32):
        if not state["corpus_root"]:
            raise ApiError(404, "no_corpus", "service started without a corpus root")
        try:
            scenes = load_split(state["corpus_root"], split)
        except FileNotFoundError:
            raise ApiError(404, "unknown_split", f"no such corpus split: {split}")
        return {"ids": [s.id for s in scenes[:limit]], "total": len(scenes)}

    @app.get("/v1/corpus/{split}/{image_id}")
    def corpus_image(split: str, image_id: str):
        if not state["corpus_root"]:
            raise ApiError(404, "no_corpus", "service started without a corpus root")
        path = Path(state["corpus_root"]) / split / "images" / f"{image_id}.png"
        if not CORPUS_ID.match(image_id) or not path.exists():
            raise ApiError(404, "unknown_image", f"no such corpus image: {split}/{image_id}")
        return Response(content=path.read_bytes(), media_type="image/png")

    if serve_ui:
        from fastapi.staticfiles import StaticFiles
        import os

        ui_dir = os.environ.get("OPEN_EDIT_UI_DIR") or Path(__file__).resolve().parents[2] / "frontend" / "dist"
        if not Path(ui_dir).exists():
            raise FileNotFoundError(f"web UI assets not found at {ui_dir}; build the frontend first")
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
