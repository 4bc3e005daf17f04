"""HTTP surface: POST /label, POST /action, GET /health.

Wire schema (JSON):
  /label  request  {"image_b64": str, "frame_key": str?}
          response {"room_type": str, "objects": [str], "room_confidence": float,
                    "backend_id": str}
  /action request  {"image_a_b64": str, "image_b_b64": str, "key_a": str?, "key_b": str?}
          response {"action": "forward"|"turn_left"|"turn_right", "confidence": float}
  /health response {"status": str, "backend_id": str, "lexicon_version": str}

Undecodable or missing images yield 400; a backend that has not finished
loading yields 503.
"""

from __future__ import annotations

import base64
import hashlib
import io
from typing import Optional

from fastapi import FastAPI
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .backends import Backend


class LabelRequest(BaseModel):
    image_b64: Optional[str] = None
    frame_key: Optional[str] = None


class ActionRequest(BaseModel):
    image_a_b64: Optional[str] = None
    image_b_b64: Optional[str] = None
    key_a: Optional[str] = None
    key_b: Optional[str] = None


def _decode_image(payload: Optional[str]) -> Optional[bytes]:
    """Base64-decode and verify the payload is a readable image; raises
    ValueError otherwise."""
    if payload is None:
        return None
    from PIL import Image, UnidentifiedImageError

    try:
        raw = base64.b64decode(payload, validate=True)
        with Image.open(io.BytesIO(raw)) as img:
            img.verify()
    except (ValueError, OSError, UnidentifiedImageError) as exc:
        raise ValueError(f"undecodable image payload: {exc}") from exc
    return raw


def _key_for(explicit: Optional[str], image: Optional[bytes]) -> str:
    if explicit:
        return explicit
    assert image is not None
    return "sha256:" + hashlib.sha256(image).hexdigest()[:16]


def _bad_request(message: str) -> JSONResponse:
    return JSONResponse(status_code=400, content={"error": message})


def _not_ready() -> JSONResponse:
    return JSONResponse(status_code=503, content={"error": "model not loaded"})


def create_app(backend: Backend, lexicon_version: str) -> FastAPI:
    app = FastAPI(title="adapter-service")

    @app.post("/label")
    def label(request: LabelRequest):
        if not backend.ready:
            return _not_ready()
        try:
            image = _decode_image(request.image_b64)
        except ValueError as exc:
            return _bad_request(str(exc))
        if image is None and not request.frame_key:
            return _bad_request("request needs image_b64 or frame_key")
        try:
            room, objects, confidence = backend.label(
                _key_for(request.frame_key, image), image
            )
        except RuntimeError:
            return _not_ready()
        return {
            "room_type": room,
            "objects": list(objects),
            "room_confidence": confidence,
            "backend_id": backend.backend_id,
        }

    @app.post("/action")
    def action(request: ActionRequest):
        if not backend.ready:
            return _not_ready()
        try:
            image_a = _decode_image(request.image_a_b64)
            image_b = _decode_image(request.image_b_b64)
        except ValueError as exc:
            return _bad_request(str(exc))
        if (image_a is None and not request.key_a) or (image_b is None and not request.key_b):
            return _bad_request("request needs two images (or explicit keys)")
        try:
            name, confidence = backend.action(
                _key_for(request.key_a, image_a),
                _key_for(request.key_b, image_b),
                (image_a, image_b),
            )
        except RuntimeError:
            return _not_ready()
        return {"action": name, "confidence": confidence}

    @app.get("/health")
    def health():
        body = {
            "status": "ok" if backend.ready else "warming",
            "backend_id": backend.backend_id,
            "lexicon_version": lexicon_version,
        }
        if not backend.ready:
            return JSONResponse(status_code=503, content=body)
        return body

    return app
