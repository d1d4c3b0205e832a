"""Raster image I/O plus the four controlled degradation effects.

All effects are pure functions of their inputs (the noise effect takes an
explicit seed), so repeated calls with identical arguments return identical
pixel buffers. Intensity math rounds half away from zero everywhere.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"

KINDS = ("scale", "blur", "gamma", "sp")


class UnsupportedFormat(Exception):
    """File or buffer is not an 8-bit PNG / binary PGM / binary PPM."""


class CorruptImage(Exception):
    """File recognized but truncated or otherwise undecodable."""


class RasterImage:
    """Decoded pixel buffer: uint8 array of shape (height, width, channels).

    ``channels`` is 1 (gray) or 3 (RGB); pixels are row-major and
    channel-interleaved when flattened.
    """

    __slots__ = ("pixels",)

    def __init__(self, pixels: np.ndarray):
        arr = np.asarray(pixels)
        if arr.ndim == 2:
            arr = arr[:, :, np.newaxis]
        if arr.ndim != 3 or arr.shape[2] not in (1, 3):
            raise ValueError(f"expected (h, w, 1|3) pixel array, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("image dimensions must be >= 1")
        if arr.dtype != np.uint8:
            if arr.size and (arr.min() < 0 or arr.max() > 255):
                raise ValueError("intensities must lie in [0, 255]")
            arr = arr.astype(np.uint8)
        self.pixels = np.ascontiguousarray(arr)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    @classmethod
    def from_flat(cls, width: int, height: int, channels: int, data: bytes) -> "RasterImage":
        if len(data) != width * height * channels:
            raise ValueError("pixel buffer length does not match dimensions")
        arr = np.frombuffer(data, dtype=np.uint8).reshape(height, width, channels)
        return cls(arr.copy())

    def tobytes(self) -> bytes:
        return self.pixels.tobytes()

    def copy(self) -> "RasterImage":
        return RasterImage(self.pixels.copy())

    def to_gray(self) -> "RasterImage":
        """Collapse RGB to a single channel (rounded channel mean)."""
        if self.channels == 1:
            return self.copy()
        s = self.pixels.sum(axis=2, dtype=np.int64)
        gray = (2 * s + self.channels) // (2 * self.channels)
        return RasterImage(gray.astype(np.uint8)[:, :, np.newaxis])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RasterImage):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and np.array_equal(
            self.pixels, other.pixels
        )

    def __repr__(self) -> str:
        return f"RasterImage({self.width}x{self.height}x{self.channels})"


@dataclass(frozen=True)
class DegradationSpec:
    """One degradation to apply: kind, its level, and a seed (noise only).

    Level ranges: scale factor in (0, 1]; blur kernel size k >= 1 (integer);
    gamma > 0; sp density in [0, 1]. Identity levels (1.0, 1, 1.0, 0.0) are
    valid and leave the image bit-identical.
    """

    kind: str
    level: float
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown degradation kind {self.kind!r}")
        level = float(self.level)
        if self.kind == "scale" and not 0.0 < level <= 1.0:
            raise ValueError("scale factor must be in (0, 1]")
        if self.kind == "blur" and (level < 1 or not level.is_integer()):
            raise ValueError("blur kernel size must be an integer >= 1")
        if self.kind == "gamma" and level <= 0.0:
            raise ValueError("gamma must be > 0")
        if self.kind == "sp" and not 0.0 <= level <= 1.0:
            raise ValueError("salt-pepper density must be in [0, 1]")

    def label(self) -> str:
        if self.kind == "blur":
            return f"blur:{int(self.level)}"
        return f"{self.kind}:{self.level:g}"


def _round_half_up(values: np.ndarray) -> np.ndarray:
    # Half away from zero; intensities are non-negative so this is floor(x + 0.5).
    return np.floor(values + 0.5)


def _to_uint8(values: np.ndarray) -> np.ndarray:
    return np.clip(values, 0, 255).astype(np.uint8)


# ---------------------------------------------------------------------------
# decoding / encoding


def decode_image(data: bytes) -> RasterImage:
    """Decode PNG or binary PGM/PPM bytes. 16-bit sources are rejected."""
    if data[:2] in (b"P5", b"P6"):
        return _decode_pnm(data)
    if data[:8] == PNG_MAGIC:
        return _decode_png(data)
    raise UnsupportedFormat("not a PNG or binary PGM/PPM buffer")


def load_image(path: str | Path) -> RasterImage:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(str(path))
    return decode_image(path.read_bytes())


def encode_png(img: RasterImage) -> bytes:
    mode = "L" if img.channels == 1 else "RGB"
    arr = img.pixels[:, :, 0] if img.channels == 1 else img.pixels
    buf = io.BytesIO()
    Image.fromarray(arr, mode=mode).save(buf, format="PNG")
    return buf.getvalue()


def encode_pnm(img: RasterImage) -> bytes:
    magic = b"P5" if img.channels == 1 else b"P6"
    header = magic + b"\n%d %d\n255\n" % (img.width, img.height)
    return header + img.tobytes()


def save_image(img: RasterImage, path: str | Path) -> None:
    """Write by extension: .png (either channel count), .pgm (gray), .ppm (RGB)."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".png":
        data = encode_png(img)
    elif suffix == ".pgm":
        if img.channels != 1:
            raise UnsupportedFormat("PGM holds single-channel images only")
        data = encode_pnm(img)
    elif suffix == ".ppm":
        if img.channels != 3:
            raise UnsupportedFormat("PPM holds 3-channel images only")
        data = encode_pnm(img)
    else:
        raise UnsupportedFormat(f"cannot infer format from {path.name!r}")
    path.write_bytes(data)


def _decode_png(data: bytes) -> RasterImage:
    try:
        im = Image.open(io.BytesIO(data))
        im.load()
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise CorruptImage(f"undecodable PNG: {exc}") from exc
    if im.mode in ("I", "I;16", "I;16B", "I;16L"):
        raise UnsupportedFormat("16-bit PNG is rejected, not truncated")
    if im.mode == "P":
        im = im.convert("RGB")
    if im.mode not in ("L", "RGB"):
        raise UnsupportedFormat(f"unsupported PNG mode {im.mode!r}")
    return RasterImage(np.asarray(im))


def _decode_pnm(data: bytes) -> RasterImage:
    channels = 1 if data[:2] == b"P5" else 3
    pos = 2
    fields: list[int] = []

    def skip_filler(p: int) -> int:
        while p < len(data):
            if data[p : p + 1].isspace():
                p += 1
            elif data[p : p + 1] == b"#":
                while p < len(data) and data[p] not in (0x0A, 0x0D):
                    p += 1
            else:
                break
        return p

    while len(fields) < 3:
        pos = skip_filler(pos)
        start = pos
        while pos < len(data) and data[pos : pos + 1].isdigit():
            pos += 1
        if pos == start:
            raise CorruptImage("malformed PNM header")
        fields.append(int(data[start:pos]))
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise CorruptImage("PNM header not terminated")
    pos += 1

    width, height, maxval = fields
    if width < 1 or height < 1:
        raise CorruptImage("PNM dimensions must be >= 1")
    if maxval > 255:
        raise UnsupportedFormat("16-bit PNM is rejected, not truncated")
    if maxval < 1:
        raise CorruptImage("PNM maxval must be >= 1")
    expected = width * height * channels
    raster = data[pos : pos + expected]
    if len(raster) != expected:
        raise CorruptImage("PNM raster truncated")
    return RasterImage.from_flat(width, height, channels, raster)


# ---------------------------------------------------------------------------
# degradations


def _resize_bilinear(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resample with pixel-center alignment; uint8 in, uint8 out."""
    in_h, in_w = arr.shape[:2]
    ys = np.clip((np.arange(out_h) + 0.5) * (in_h / out_h) - 0.5, 0, in_h - 1)
    xs = np.clip((np.arange(out_w) + 0.5) * (in_w / out_w) - 0.5, 0, in_w - 1)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    fy = (ys - y0)[:, None, None]
    fx = (xs - x0)[None, :, None]

    src = arr.astype(np.float64)
    top = src[np.ix_(y0, x0)] * (1 - fx) + src[np.ix_(y0, x1)] * fx
    bot = src[np.ix_(y1, x0)] * (1 - fx) + src[np.ix_(y1, x1)] * fx
    return _to_uint8(_round_half_up(top * (1 - fy) + bot * fy))


def resize(img: RasterImage, out_h: int, out_w: int) -> RasterImage:
    """Bilinear resize to explicit dimensions (up or down)."""
    if out_h < 1 or out_w < 1:
        raise ValueError("target dimensions must be >= 1")
    if (out_h, out_w) == (img.height, img.width):
        return img.copy()
    return RasterImage(_resize_bilinear(img.pixels, out_h, out_w))


def scale(img: RasterImage, factor: float) -> RasterImage:
    """Shrink by ``factor``; output dims are max(1, floor(dim * factor))."""
    if not 0.0 < factor <= 1.0:
        raise ValueError("scale factor must be in (0, 1]")
    if factor == 1.0:
        return img.copy()
    out_w = max(1, math.floor(img.width * factor))
    out_h = max(1, math.floor(img.height * factor))
    return RasterImage(_resize_bilinear(img.pixels, out_h, out_w))


def box_blur(img: RasterImage, k: int) -> RasterImage:
    """Normalized k x k box filter, replicate borders, anchor at floor(k/2)."""
    if not float(k).is_integer() or k < 1:
        raise ValueError("blur kernel size must be an integer >= 1")
    k = int(k)
    if k == 1:
        return img.copy()
    a = k // 2
    padded = np.pad(
        img.pixels.astype(np.int64), ((a, k - 1 - a), (a, k - 1 - a), (0, 0)), mode="edge"
    )
    sat = np.zeros(
        (padded.shape[0] + 1, padded.shape[1] + 1, padded.shape[2]), dtype=np.int64
    )
    sat[1:, 1:] = padded.cumsum(axis=0).cumsum(axis=1)
    window = sat[k:, k:] - sat[:-k, k:] - sat[k:, :-k] + sat[:-k, :-k]
    # integer round-half-up of window / k^2
    out = (2 * window + k * k) // (2 * k * k)
    return RasterImage(out.astype(np.uint8))


def gamma_lut(gamma: float) -> np.ndarray:
    """256-entry lookup table O(i) = round(255 * (i/255) ** gamma)."""
    if gamma <= 0.0:
        raise ValueError("gamma must be > 0")
    table = [
        min(255, math.floor(255.0 * (i / 255.0) ** gamma + 0.5)) for i in range(256)
    ]
    return np.array(table, dtype=np.uint8)


def gamma_correct(img: RasterImage, gamma: float) -> RasterImage:
    """Power-law intensity remap via lookup table; gamma > 1 darkens."""
    return RasterImage(gamma_lut(gamma)[img.pixels])


def salt_pepper(img: RasterImage, density: float, seed: int = 0) -> RasterImage:
    """Corrupt each pixel position with probability ``density`` to 0 or 255.

    A corrupted position flips all channels together; black and white are
    equally likely. Output is a pure function of (img, density, seed).
    """
    if not 0.0 <= density <= 1.0:
        raise ValueError("salt-pepper density must be in [0, 1]")
    rng = np.random.default_rng(seed)
    h, w = img.height, img.width
    corrupt = rng.random((h, w)) < density
    white = rng.random((h, w)) < 0.5
    out = img.pixels.copy()
    values = np.where(white, 255, 0).astype(np.uint8)
    out[corrupt] = values[corrupt][:, None]
    return RasterImage(out)


def apply_spec(img: RasterImage, spec: DegradationSpec) -> RasterImage:
    if spec.kind == "scale":
        return scale(img, float(spec.level))
    if spec.kind == "blur":
        return box_blur(img, int(spec.level))
    if spec.kind == "gamma":
        return gamma_correct(img, float(spec.level))
    if spec.kind == "sp":
        return salt_pepper(img, float(spec.level), spec.seed)
    raise ValueError(f"unknown degradation kind {spec.kind!r}")
