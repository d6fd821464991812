"""Local inference service: per-frame diagnosis over HTTP and WebSocket.

The model is a shared immutable resource; request handlers never write to
it.  Session logs are line-delimited JSON, one file per session, appended
through a single serialized writer with fsync, so a crashed write can only
ever lose its own tail line.  The stream endpoint keeps a one-slot frame
buffer: when frames arrive faster than inference, the newest frame replaces
the queued one and the drop count is reported to the client.
"""

from __future__ import annotations

import asyncio
import base64
import io
import json
import os
import re
import threading
import time
import uuid
from dataclasses import asdict, dataclass

import numpy as np
from fastapi import FastAPI, HTTPException, Query, Request, WebSocket
from fastapi.concurrency import run_in_threadpool
from PIL import Image, UnidentifiedImageError
from starlette.websockets import WebSocketDisconnect

from . import __version__
from .data import default_catalog, preprocess, sharpness
from .errors import ConfigError, DataError
from .gradcam import grad_cam, overlay
from .model import ModelConfig, build_best_earnet
from .ops import softmax
from .tensor import Tensor
from .weights import load_weights

_SESSION_RE = re.compile(r"^[A-Za-z0-9_-]{1,64}$")


@dataclass
class FramePrediction:
    """One frame's diagnosis; blurry frames carry an advisory instead of a log entry."""

    probabilities: list[float]
    top1_class: str
    top1_probability: float
    latency_ms: float
    sharpness: float
    blurry: bool
    timestamp: float
    session: str
    heatmap_png: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def decode_rgb_bytes(data: bytes) -> np.ndarray:
    """Decode PNG/JPEG bytes to uint8 RGB."""
    try:
        with Image.open(io.BytesIO(data)) as im:
            if im.mode != "RGB":
                im = im.convert("RGB")
            return np.asarray(im, dtype=np.uint8)
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise DataError(f"cannot decode image bytes ({exc})") from exc


class InferenceEngine:
    """Wraps an eval-mode model with decoding, gating, and heatmap rendering."""

    def __init__(self, model, config: ModelConfig, catalog=None,
                 sharpness_gate: float = 0.0, name: str = "best-earnet"):
        model.eval()
        self.model = model
        self.config = config
        self.catalog = catalog or default_catalog()
        if len(self.catalog) != config.num_classes:
            raise ConfigError(
                f"catalog has {len(self.catalog)} classes, model expects "
                f"{config.num_classes}"
            )
        self.sharpness_gate = sharpness_gate
        self.name = name

    @property
    def classes(self) -> list[str]:
        return list(self.catalog.names)

    def param_count(self) -> int:
        return self.model.parameter_count()

    def infer(self, image_bytes: bytes, heatmap: bool = False,
              session: str | None = None, alpha: float = 0.5) -> FramePrediction:
        start = time.perf_counter()
        pixels = decode_rgb_bytes(image_bytes)
        score = sharpness(pixels)
        size = self.config.input_size
        if pixels.shape[:2] != (size, size):
            pixels = np.asarray(
                Image.fromarray(pixels).resize((size, size), Image.BILINEAR)
            )
        x = preprocess(pixels, size=size)
        out = self.model(Tensor(x[None]))
        probabilities = softmax(out.logits3.data)[0]
        top1 = int(np.argmax(probabilities))

        heatmap_png = None
        if heatmap:
            hm = grad_cam(self.model, x, target_class=top1)
            blended = overlay(hm, pixels, alpha=alpha)
            buf = io.BytesIO()
            Image.fromarray(blended).save(buf, format="PNG")
            heatmap_png = base64.b64encode(buf.getvalue()).decode("ascii")

        return FramePrediction(
            probabilities=[float(p) for p in probabilities],
            top1_class=self.catalog.name_for(top1),
            top1_probability=float(probabilities[top1]),
            latency_ms=(time.perf_counter() - start) * 1e3,
            sharpness=score,
            blurry=score < self.sharpness_gate,
            timestamp=time.time(),
            session=session or str(uuid.uuid4()),
            heatmap_png=heatmap_png,
        )


class SessionLog:
    """Append-only JSONL store, one file per session, single serialized writer."""

    def __init__(self, log_dir):
        self.log_dir = os.fspath(log_dir)
        os.makedirs(self.log_dir, exist_ok=True)
        self._lock = threading.Lock()
        self._last_ts: dict[str, float] = {}

    def _path(self, session: str) -> str:
        if not _SESSION_RE.match(session):
            raise DataError(f"invalid session id {session!r}")
        return os.path.join(self.log_dir, f"{session}.jsonl")

    def append(self, prediction: FramePrediction) -> None:
        record = prediction.to_dict()
        record.pop("heatmap_png", None)  # logs stay small; images are transient
        path = self._path(prediction.session)
        with self._lock:
            last = self._last_ts.get(prediction.session, float("-inf"))
            if record["timestamp"] <= last:
                record["timestamp"] = last + 1e-6
            self._last_ts[prediction.session] = record["timestamp"]
            with open(path, "a") as f:
                f.write(json.dumps(record, sort_keys=True) + "\n")
                f.flush()
                os.fsync(f.fileno())

    def read(self, session: str) -> list[dict]:
        path = self._path(session)
        if not os.path.exists(path):
            raise DataError(f"no log for session {session!r}")
        with open(path) as f:
            return [json.loads(line) for line in f if line.strip()]

    def sessions(self) -> list[str]:
        return sorted(
            os.path.splitext(f)[0]
            for f in os.listdir(self.log_dir)
            if f.endswith(".jsonl")
        )


@dataclass
class ServeConfig:
    """Service settings; every field can be overridden by EARNET_* env vars."""

    host: str = "127.0.0.1"
    port: int = 8000
    weights: str | None = None
    model_config_json: str | None = None
    log_dir: str = "sessions"
    heatmap_default: bool = False
    sharpness_gate: float = 0.0
    seed: int = 0

    @classmethod
    def from_env(cls, env=None, **overrides) -> "ServeConfig":
        env = os.environ if env is None else env
        values = {}
        casts = {
            "host": str, "port": int, "weights": str, "model_config_json": str,
            "log_dir": str, "heatmap_default": lambda v: v not in ("0", "false", ""),
            "sharpness_gate": float, "seed": int,
        }
        for name, cast in casts.items():
            raw = env.get(f"EARNET_{name.upper()}")
            if raw is not None:
                values[name] = cast(raw)
        values.update(overrides)
        return cls(**values)


def build_engine(cfg: ServeConfig) -> InferenceEngine:
    """Construct the engine; invalid weights refuse to start with diagnostics."""
    if cfg.model_config_json:
        with open(cfg.model_config_json) as f:
            payload = json.load(f)
        model_cfg = ModelConfig(**payload.get("model", payload))
    else:
        model_cfg = ModelConfig()
    model = build_best_earnet(model_cfg, seed=cfg.seed)
    if cfg.weights:
        load_weights(model, cfg.weights)
    return InferenceEngine(model, model_cfg, sharpness_gate=cfg.sharpness_gate)


def create_app(engine: InferenceEngine | None, log: SessionLog,
               heatmap_default: bool = False):
    """Wire the HTTP/WebSocket endpoints around an engine and a session log."""
    app = FastAPI(title="earnet-service", version=__version__)

    def require_engine() -> InferenceEngine:
        if engine is None:
            raise HTTPException(status_code=503, detail="model not loaded")
        return engine

    @app.get("/health")
    def health():
        e = require_engine()
        return {
            "model": e.name,
            "classes": e.classes,
            "params": e.param_count(),
            "version": __version__,
        }

    @app.post("/infer")
    async def infer(
        request: Request,
        heatmap: int = Query(default=1 if heatmap_default else 0),
        session: str | None = Query(default=None),
    ):
        e = require_engine()
        body = await request.body()
        if request.headers.get("content-type", "").startswith("application/json"):
            try:
                payload = json.loads(body)
                body = base64.b64decode(payload["image_b64"])
            except (ValueError, KeyError) as exc:
                raise HTTPException(status_code=400, detail=f"bad JSON body: {exc}")
        try:
            prediction = await run_in_threadpool(
                e.infer, body, bool(heatmap), session
            )
        except DataError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        if not prediction.blurry:
            log.append(prediction)
        return prediction.to_dict()

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str):
        try:
            records = log.read(session_id)
        except DataError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        return {"session": session_id, "records": records}

    @app.websocket("/stream")
    async def stream(
        ws: WebSocket,
        heatmap: int = Query(default=1 if heatmap_default else 0),
        session: str | None = Query(default=None),
    ):
        await ws.accept()
        if engine is None:
            await ws.send_json({"error": "model not loaded"})
            await ws.close(code=1011)
            return
        session = session or str(uuid.uuid4())
        latest: asyncio.Queue = asyncio.Queue(maxsize=1)
        dropped = 0

        async def receive_frames():
            nonlocal dropped
            try:
                while True:
                    frame = await ws.receive_bytes()
                    if latest.full():
                        latest.get_nowait()  # newest frame wins
                        dropped += 1
                    latest.put_nowait(frame)
            except WebSocketDisconnect:
                pass
            finally:
                if latest.full():
                    latest.get_nowait()
                latest.put_nowait(None)

        receiver = asyncio.create_task(receive_frames())
        try:
            while True:
                frame = await latest.get()
                if frame is None:
                    break
                drops_to_report = dropped
                dropped = 0
                try:
                    prediction = await run_in_threadpool(
                        engine.infer, frame, bool(heatmap), session
                    )
                except DataError as exc:
                    await ws.send_json({"error": str(exc)})
                    continue
                if not prediction.blurry:
                    log.append(prediction)
                await ws.send_json(prediction.to_dict())
                if drops_to_report:
                    await ws.send_json({"dropped": drops_to_report})
        finally:
            receiver.cancel()

    return app


def serve(cfg: ServeConfig) -> None:
    """Run the service until interrupted; flushes logs per append."""
    import uvicorn

    engine = build_engine(cfg)
    log = SessionLog(cfg.log_dir)
    app = create_app(engine, log, heatmap_default=cfg.heatmap_default)
    uvicorn.run(app, host=cfg.host, port=cfg.port, log_level="info")
