"""Uniform text-detection interface over pluggable OCR backends.

Every backend produces the same normalized shape: word-level `TextDetection`
items ordered top-to-bottom then left-to-right, confidences in [0, 1].
Downstream consumers (bench, refinement, service) never branch on the
backend kind.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .imaging import RasterImage, decode_image, encode_png
from .sevenseg import DEFAULT_LAYOUT, SevenSegLayout, match_cells

BACKEND_KINDS = ("clouda", "cloudb", "replay", "sevenseg")


class OcrError(Exception):
    """Base for backend failures."""


class AuthFailure(OcrError):
    """Credential missing or rejected by the provider."""


class TransportFailure(OcrError):
    """Network-level failure after retries."""


class ProviderError(OcrError):
    """Provider answered non-2xx; carries status and body."""

    def __init__(self, status: int, body: str):
        super().__init__(f"provider returned {status}: {body[:200]}")
        self.status = status
        self.body = body


class FixtureMiss(OcrError):
    """Replay fixture has no entry for the image digest."""


@dataclass(frozen=True)
class BBox:
    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise ValueError("bbox width and height must be > 0")


@dataclass(frozen=True)
class TextDetection:
    """One OCR token: text, confidence in [0, 1], pixel bounding box."""

    text: str
    confidence: float
    bbox: BBox

    def __post_init__(self):
        if not self.text:
            raise ValueError("detection text must be non-empty")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError("confidence must lie in [0, 1]")


@dataclass(frozen=True)
class BackendConfig:
    """Which backend to run and how to reach it.

    Cloud kinds need ``endpoint`` and ``credential_env`` (the name of the
    environment variable holding the secret; secrets never live in config
    files). Replay needs ``fixture_path``.
    """

    kind: str
    endpoint: str | None = None
    credential_env: str | None = None
    fixture_path: str | None = None
    threshold: float = 0.6
    max_inflight: int = 4

    def __post_init__(self):
        if self.kind not in BACKEND_KINDS:
            raise ValueError(f"unknown backend kind {self.kind!r}")
        if self.kind in ("clouda", "cloudb") and not (self.endpoint and self.credential_env):
            raise ValueError(f"{self.kind} requires endpoint and credential_env")
        if self.kind == "replay" and not self.fixture_path:
            raise ValueError("replay requires fixture_path")


def image_digest(data: bytes) -> str:
    """SHA-256 of the encoded bytes, lowercase hex."""
    return hashlib.sha256(data).hexdigest()


# ---------------------------------------------------------------------------
# normalization


def _split_words(det: TextDetection) -> list[TextDetection]:
    """Split a line-level token on whitespace, subdividing its box by length."""
    words = det.text.split()
    if len(words) <= 1:
        return [det] if det.text.strip() else []
    total = sum(len(w) for w in words)
    out = []
    x = det.bbox.x
    remaining = det.bbox.w
    for i, word in enumerate(words):
        if i == len(words) - 1:
            w = remaining
        else:
            w = max(1, round(det.bbox.w * len(word) / total))
            w = min(w, remaining - (len(words) - 1 - i))
        out.append(
            TextDetection(word, det.confidence, BBox(x, det.bbox.y, max(1, w), det.bbox.h))
        )
        x += w
        remaining -= w
    return out


def normalize_detections(
    detections: list[TextDetection], width: int | None = None, height: int | None = None
) -> list[TextDetection]:
    """Word-split, clamp boxes into image bounds, order top-down left-right."""
    words: list[TextDetection] = []
    for det in detections:
        if not det.text.strip():
            continue
        words.extend(_split_words(det))
    if width is not None and height is not None:
        clamped = []
        for det in words:
            x = min(max(det.bbox.x, 0), max(0, width - 1))
            y = min(max(det.bbox.y, 0), max(0, height - 1))
            w = max(1, min(det.bbox.w, width - x))
            h = max(1, min(det.bbox.h, height - y))
            clamped.append(TextDetection(det.text, det.confidence, BBox(x, y, w, h)))
        words = clamped
    return sorted(words, key=lambda d: (d.bbox.y, d.bbox.x))


def _parse_fixture_entry(entry: dict) -> TextDetection:
    text = str(entry["text"])
    confidence = float(entry.get("confidence", 1.0))
    confidence = min(1.0, max(0.0, confidence))
    raw_box = entry.get("bbox", [0, 0, 1, 1])
    if isinstance(raw_box, dict):
        box = BBox(int(raw_box["x"]), int(raw_box["y"]), int(raw_box["w"]), int(raw_box["h"]))
    else:
        box = BBox(int(raw_box[0]), int(raw_box[1]), int(raw_box[2]), int(raw_box[3]))
    return TextDetection(text, confidence, box)


# ---------------------------------------------------------------------------
# backends


class ReplayBackend:
    """Deterministic backend replaying recorded detections keyed by digest."""

    def __init__(self, fixture_path: str | Path):
        raw = json.loads(Path(fixture_path).read_text(encoding="utf-8"))
        self._fixtures: dict[str, list[TextDetection]] = {
            digest: [_parse_fixture_entry(e) for e in entries]
            for digest, entries in raw.items()
        }

    def detect(self, image: RasterImage, source_digest: str | None = None) -> list[TextDetection]:
        key = source_digest or image_digest(encode_png(image))
        if key not in self._fixtures:
            raise FixtureMiss(key)
        return normalize_detections(self._fixtures[key], image.width, image.height)


class SevenSegBackend:
    """Offline matcher over the generator's glyph templates."""

    def __init__(self, layout: SevenSegLayout = DEFAULT_LAYOUT, threshold: float = 0.6):
        self.layout = layout
        self.threshold = threshold

    def detect(self, image: RasterImage, source_digest: str | None = None) -> list[TextDetection]:
        return sevenseg_match(image, self.layout, self.threshold)


def sevenseg_match(
    image: RasterImage,
    layout: SevenSegLayout = DEFAULT_LAYOUT,
    threshold: float = 0.6,
) -> list[TextDetection]:
    """Template-match fixed-pitch digit cells into word-level detections.

    Cells whose best correlation falls below ``threshold`` are treated as
    unreadable; maximal runs of readable adjacent cells merge into one token
    whose confidence is the weakest cell in the run.
    """
    readable = [c for c in match_cells(image, layout) if c.score >= threshold]
    detections: list[TextDetection] = []
    run: list = []

    def flush(cells):
        if not cells:
            return
        text = "".join(c.digit for c in cells)
        confidence = min(1.0, max(0.0, min(c.score for c in cells)))
        x0 = min(c.x for c in cells)
        y0 = min(c.y for c in cells)
        x1 = max(c.x + c.w for c in cells)
        y1 = max(c.y + c.h for c in cells)
        detections.append(TextDetection(text, confidence, BBox(x0, y0, x1 - x0, y1 - y0)))

    for cell in readable:
        if run and cell.index != run[-1].index + 1:
            flush(run)
            run = []
        run.append(cell)
    flush(run)
    return normalize_detections(detections, image.width, image.height)


def build_backend(config: BackendConfig):
    """Instantiate the backend named by ``config``; cloud kinds import lazily."""
    if config.kind == "replay":
        return ReplayBackend(config.fixture_path)
    if config.kind == "sevenseg":
        return SevenSegBackend(threshold=config.threshold)
    from . import cloud

    if config.kind == "clouda":
        return cloud.CloudABackend(config)
    return cloud.CloudBBackend(config)


def detect_text(
    config: BackendConfig,
    image: RasterImage | bytes,
    source_digest: str | None = None,
) -> list[TextDetection]:
    """Run one detection through the configured backend.

    ``image`` may be a decoded RasterImage or encoded bytes; with bytes the
    replay key defaults to the digest of those bytes.
    """
    if isinstance(image, (bytes, bytearray)):
        if source_digest is None:
            source_digest = image_digest(bytes(image))
        image = decode_image(bytes(image))
    return build_backend(config).detect(image, source_digest)
