"""Reduce raw OCR detections to a single meter reading.

The pipeline keeps only register-length digit tokens whose value lies in the
plausibility window [last, last + max_delta], then picks the smallest advance
over the last confirmed reading. When nothing survives it falls back to the
last reading itself, so callers always get a well-formed result.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .ocr import BBox, TextDetection

DEFAULT_MAX_DELTA = 10000

_DECIMAL_SEPARATORS = (".", ",")


@dataclass(frozen=True)
class MeterContext:
    """Last confirmed (or initial) reading plus the plausibility window."""

    last_reading: str
    max_delta: int = DEFAULT_MAX_DELTA

    def __post_init__(self):
        if not self.last_reading.isdigit():
            raise ValueError("last_reading must contain only digits")
        if not 1 <= len(self.last_reading) <= 12:
            raise ValueError("register length must lie in [1, 12]")
        if self.max_delta < 0:
            raise ValueError("max_delta must be non-negative")

    @property
    def register_length(self) -> int:
        return len(self.last_reading)


@dataclass(frozen=True)
class Candidate:
    """One register-length token inspected by refine, for audit display."""

    token: str
    delta: int
    confidence: float


@dataclass(frozen=True)
class RefinementResult:
    reading: str
    fallback: bool
    candidates: tuple[Candidate, ...] = field(default_factory=tuple)


def normalize_tokens(detections: list[TextDetection]) -> list[tuple[str, float, BBox]]:
    """Extract the digit content of each token, preserving confidence and box.

    A decimal separator cuts off the fractional part first (billing reads use
    the integer register); remaining non-digits are stripped. Tokens with no
    digits left are dropped.
    """
    out: list[tuple[str, float, BBox]] = []
    for det in detections:
        text = det.text
        cut = [text.find(sep) for sep in _DECIMAL_SEPARATORS if sep in text]
        if cut:
            text = text[: min(cut)]
        digits = "".join(ch for ch in text if ch.isdigit())
        if digits:
            out.append((digits, det.confidence, det.bbox))
    return out


def refine(detections: list[TextDetection], ctx: MeterContext) -> RefinementResult:
    """Pick the most plausible register-length token, or fall back.

    Survivors are ranked by smallest advance over the last reading, then by
    higher confidence, then by topmost-then-leftmost box, which makes the
    result independent of detection order.
    """
    last = int(ctx.last_reading)
    candidates: list[Candidate] = []
    survivors: list[tuple[int, float, int, int, str]] = []
    for digits, confidence, box in normalize_tokens(detections):
        if len(digits) != ctx.register_length:
            continue
        delta = int(digits) - last
        candidates.append(Candidate(digits, delta, confidence))
        if 0 <= delta <= ctx.max_delta:
            survivors.append((delta, -confidence, box.y, box.x, digits))
    if not survivors:
        return RefinementResult(ctx.last_reading, True, tuple(candidates))
    survivors.sort()
    return RefinementResult(survivors[0][4], False, tuple(candidates))
