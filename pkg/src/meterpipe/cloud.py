"""Thin HTTP adapters for the two cloud text-detection providers.

Each adapter is a small request builder plus a pure response parser; the
parsers take decoded JSON so they can be exercised without a network. Live
calls need the credential environment variable named in the backend config.
"""

from __future__ import annotations

import base64
import os
import threading
import time

import httpx

from .imaging import RasterImage, encode_png
from .ocr import (
    AuthFailure,
    BackendConfig,
    BBox,
    ProviderError,
    TextDetection,
    TransportFailure,
    normalize_detections,
)

REQUEST_TIMEOUT = 30.0
RETRY_BASE_DELAY = 0.5


class _CloudBackend:
    """Shared transport: bounded concurrency, one retry on transport errors."""

    def __init__(self, config: BackendConfig, transport: httpx.BaseTransport | None = None):
        self.config = config
        self._slots = threading.Semaphore(config.max_inflight)
        self._transport = transport

    def _credential(self) -> str:
        name = self.config.credential_env or ""
        value = os.environ.get(name, "")
        if not value:
            raise AuthFailure(f"credential environment variable {name!r} is not set")
        return value

    def _post(self, payload: dict, headers: dict) -> dict:
        last_error: Exception | None = None
        for attempt in range(2):
            try:
                with self._slots:
                    with httpx.Client(transport=self._transport, timeout=REQUEST_TIMEOUT) as client:
                        resp = client.post(self.config.endpoint, json=payload, headers=headers)
            except httpx.TransportError as exc:
                last_error = exc
                if attempt == 0:
                    time.sleep(RETRY_BASE_DELAY * (2**attempt))
                continue
            if resp.status_code in (401, 403):
                raise AuthFailure(f"provider rejected credentials ({resp.status_code})")
            if resp.status_code // 100 != 2:
                raise ProviderError(resp.status_code, resp.text)
            return resp.json()
        raise TransportFailure(str(last_error))


class CloudABackend(_CloudBackend):
    """Rekognition-style DetectText API."""

    def detect(self, image: RasterImage, source_digest: str | None = None) -> list[TextDetection]:
        key = self._credential()
        payload = {"Image": {"Bytes": base64.b64encode(encode_png(image)).decode("ascii")}}
        headers = {
            "Authorization": key,
            "X-Amz-Target": "RekognitionService.DetectText",
        }
        return parse_clouda_response(self._post(payload, headers), image.width, image.height)


class CloudBBackend(_CloudBackend):
    """Google-Vision-style images:annotate API."""

    def detect(self, image: RasterImage, source_digest: str | None = None) -> list[TextDetection]:
        key = self._credential()
        payload = {
            "requests": [
                {
                    "image": {"content": base64.b64encode(encode_png(image)).decode("ascii")},
                    "features": [{"type": "TEXT_DETECTION"}],
                }
            ]
        }
        headers = {"Authorization": f"Bearer {key}"}
        return parse_cloudb_response(self._post(payload, headers), image.width, image.height)


def parse_clouda_response(payload: dict, width: int, height: int) -> list[TextDetection]:
    """Adapt a Rekognition-style response to normalized word detections.

    WORD entries are preferred; a response carrying only LINE entries is
    word-split with each line box subdivided proportionally.
    """
    items = payload.get("TextDetections", [])
    words = [i for i in items if i.get("Type") == "WORD"]
    chosen = words if words else items
    detections = []
    for item in chosen:
        text = str(item.get("DetectedText", ""))
        if not text.strip():
            continue
        conf = item.get("Confidence")
        confidence = 1.0 if conf is None else min(1.0, max(0.0, float(conf) / 100.0))
        bb = item.get("Geometry", {}).get("BoundingBox")
        if bb:
            x = round(float(bb.get("Left", 0.0)) * width)
            y = round(float(bb.get("Top", 0.0)) * height)
            w = max(1, round(float(bb.get("Width", 1.0)) * width))
            h = max(1, round(float(bb.get("Height", 1.0)) * height))
        else:
            x, y, w, h = 0, 0, width, height
        detections.append(TextDetection(text, confidence, BBox(x, y, w, h)))
    return normalize_detections(detections, width, height)


def parse_cloudb_response(payload: dict, width: int, height: int) -> list[TextDetection]:
    """Adapt a Vision-style response; the leading full-text block is dropped."""
    responses = payload.get("responses", [])
    if not responses:
        return []
    body = responses[0]
    if "error" in body:
        err = body["error"]
        raise ProviderError(int(err.get("code", 502)), str(err.get("message", "")))
    annotations = body.get("textAnnotations", [])
    if len(annotations) > 1:
        annotations = annotations[1:]
    detections = []
    for ann in annotations:
        text = str(ann.get("description", ""))
        if not text.strip():
            continue
        confidence = min(1.0, max(0.0, float(ann.get("confidence", 1.0))))
        vertices = ann.get("boundingPoly", {}).get("vertices", [])
        xs = [int(v.get("x", 0)) for v in vertices] or [0]
        ys = [int(v.get("y", 0)) for v in vertices] or [0]
        x, y = min(xs), min(ys)
        w = max(1, max(xs) - x)
        h = max(1, max(ys) - y)
        detections.append(TextDetection(text, confidence, BBox(x, y, w, h)))
    return normalize_detections(detections, width, height)
