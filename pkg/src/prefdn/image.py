"""Grayscale image values, file I/O, display windowing, and synthetic noise.

Images are 2D float64 arrays (rows x cols) holding linear intensities,
normalized to [0, 1] on load. All functions are pure; arrays are never
modified in place.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
from PIL import Image as PILImage

from .errors import FormatError, ShapeError

FORMATS = ("pgm8", "pgm16", "png-gray")

_FORMAT_MAXVAL = {"pgm8": 255, "pgm16": 65535, "png-gray": 255}


@dataclass(frozen=True)
class DisplayWindow:
    """Affine intensity remap for display: values in
    [center - width/2, center + width/2] are stretched to [0, 1]."""

    center: float
    width: float

    def __post_init__(self):
        if not self.width > 0:
            raise ValueError(f"window width must be > 0, got {self.width}")


def as_image(pixels, copy: bool = False) -> np.ndarray:
    """Coerce to a valid 2D float64 image array.

    Raises ShapeError for wrong dimensionality or empty/non-finite data.
    """
    arr = np.array(pixels, dtype=np.float64, copy=copy) if copy else np.asarray(
        pixels, dtype=np.float64
    )
    if arr.ndim != 2:
        raise ShapeError(f"image must be 2D, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ShapeError(f"image must be at least 1x1, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ShapeError("image contains non-finite pixel values")
    return arr


def _read_pgm_header(data: bytes):
    """Parse a P5 header, skipping comments; returns (width, height, maxval, offset)."""
    if len(data) < 2 or data[:2] != b"P5":
        raise FormatError("not a binary PGM (P5) stream")
    pos = 2
    tokens = []
    while len(tokens) < 3:
        # skip whitespace and '#' comments between tokens
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            nl = data.find(b"\n", pos)
            if nl < 0:
                raise FormatError("unterminated comment in PGM header")
            pos = nl + 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated PGM header")
        tokens.append(data[start:pos])
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise FormatError("missing whitespace after PGM maxval")
    pos += 1
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise FormatError(f"non-numeric PGM header field: {exc}") from exc
    if width < 1 or height < 1:
        raise FormatError(f"invalid PGM dimensions {width}x{height}")
    if not 0 < maxval < 65536:
        raise FormatError(f"invalid PGM maxval {maxval}")
    return width, height, maxval, pos


def _load_pgm(data: bytes) -> np.ndarray:
    width, height, maxval, offset = _read_pgm_header(data)
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
    need = width * height * dtype.itemsize
    raster = data[offset : offset + need]
    if len(raster) < need:
        raise FormatError(
            f"PGM raster truncated: expected {need} bytes, got {len(raster)}"
        )
    pixels = np.frombuffer(raster, dtype=dtype).reshape(height, width)
    return pixels.astype(np.float64) / maxval


def _load_png(data: bytes) -> np.ndarray:
    try:
        pil = PILImage.open(io.BytesIO(data))
        pil.load()
    except Exception as exc:
        raise FormatError(f"cannot decode PNG: {exc}") from exc
    if pil.format != "PNG":
        raise FormatError(f"expected PNG, got {pil.format}")
    if pil.mode == "L":
        maxval = 255
    elif pil.mode in ("I", "I;16"):
        maxval = 65535
    else:
        raise FormatError(f"unsupported PNG mode {pil.mode!r}: single-channel only")
    pixels = np.asarray(pil, dtype=np.float64)
    if pixels.ndim != 2:
        raise FormatError("multi-channel PNG is not supported")
    return pixels / maxval


def load_image(source, fmt: str) -> np.ndarray:
    """Decode a single-channel image of the declared format.

    `source` is a bytes object or a binary file-like. Intensities are
    mapped linearly to [0, 1] by the format's maximum value.
    """
    data = source if isinstance(source, (bytes, bytearray)) else source.read()
    data = bytes(data)
    if not data:
        raise FormatError("empty input stream")
    if fmt in ("pgm8", "pgm16"):
        img = _load_pgm(data)
    elif fmt == "png-gray":
        img = _load_png(data)
    else:
        raise FormatError(f"unknown format {fmt!r}; expected one of {FORMATS}")
    return as_image(img)


def save_image(img: np.ndarray, fmt: str) -> bytes:
    """Encode an image, clipping to [0, 1] and quantizing to the format's depth."""
    img = as_image(img)
    if fmt not in FORMATS:
        raise FormatError(f"unknown format {fmt!r}; expected one of {FORMATS}")
    maxval = _FORMAT_MAXVAL[fmt]
    quantized = np.rint(np.clip(img, 0.0, 1.0) * maxval).astype(np.uint32)
    if fmt == "pgm8" or fmt == "pgm16":
        height, width = img.shape
        header = f"P5\n{width} {height}\n{maxval}\n".encode("ascii")
        dtype = np.uint8 if maxval == 255 else np.dtype(">u2")
        return header + quantized.astype(dtype).tobytes()
    buf = io.BytesIO()
    PILImage.fromarray(quantized.astype(np.uint8), mode="L").save(buf, format="PNG")
    return buf.getvalue()


def sniff_format(data: bytes) -> str:
    """Guess the format of an encoded image from its magic bytes."""
    if data[:2] == b"P5":
        _, _, maxval, _ = _read_pgm_header(data)
        return "pgm16" if maxval > 255 else "pgm8"
    if data[:8] == b"\x89PNG\r\n\x1a\n":
        return "png-gray"
    raise FormatError("unrecognized image format (expected PGM P5 or PNG)")


def read_image(path) -> np.ndarray:
    """Load an image file, detecting PGM/PNG from its content."""
    with open(path, "rb") as fh:
        data = fh.read()
    return load_image(data, sniff_format(data))


def write_image(path, img: np.ndarray, fmt: str | None = None) -> None:
    """Write an image file; format inferred from the extension unless given."""
    if fmt is None:
        name = str(path).lower()
        fmt = "png-gray" if name.endswith(".png") else "pgm16"
    with open(path, "wb") as fh:
        fh.write(save_image(img, fmt))


def apply_window(img: np.ndarray, window: DisplayWindow) -> np.ndarray:
    """Remap intensities so the window spans [0, 1]; values outside clamp."""
    img = as_image(img)
    lo = window.center - window.width / 2.0
    return np.clip((img - lo) / window.width, 0.0, 1.0)


def add_noise(img: np.ndarray, kind: str, level: float, seed: int) -> np.ndarray:
    """Corrupt an image with a synthetic noise model, deterministically per seed.

    kind "gaussian": adds i.i.d. zero-mean noise with standard deviation
    `level`. kind "poisson": draws counts at rate pixel*level and rescales
    by 1/level, simulating photon-limited acquisition (higher level = less
    noise). Output values are finite but not clipped to [0, 1].
    """
    img = as_image(img)
    rng = np.random.default_rng(seed)
    if kind == "gaussian":
        if level < 0:
            raise ValueError(f"gaussian std must be >= 0, got {level}")
        if level == 0:
            return img.copy()
        return img + rng.normal(0.0, level, size=img.shape)
    if kind == "poisson":
        if not level > 0:
            raise ValueError(f"poisson scale must be > 0, got {level}")
        rate = np.clip(img, 0.0, None) * level
        return rng.poisson(rate).astype(np.float64) / level
    raise ValueError(f"unknown noise kind {kind!r}; expected 'gaussian' or 'poisson'")


def mean_squared_error(a: np.ndarray, b: np.ndarray) -> float:
    """Per-pixel mean of squared differences.

    The per-pixel normalization keeps error magnitudes independent of
    resolution, so losses behave the same at any image size.
    """
    a = as_image(a)
    b = as_image(b)
    if a.shape != b.shape:
        raise ShapeError(f"image shapes differ: {a.shape} vs {b.shape}")
    diff = a - b
    return float(np.mean(diff * diff))
