"""Binary PPM I/O, bilinear resizing, and augmentation transforms."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy import ndimage

from ..engine import Tensor
from .schema import DatasetError

AUGMENTATIONS = ("hflip", "vflip", "rotate", "translate")
MAX_ROTATION_DEG = 20.0
MAX_SHIFT_FRACTION = 0.10


def _read_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    n = len(buf)
    while pos < n:
        ch = buf[pos:pos + 1]
        if ch == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise DatasetError("malformed PPM header: unexpected end of header")
    return buf[start:pos], pos


def decode_ppm(buf: bytes) -> np.ndarray:
    """Decode a binary (P6) 8-bit pixmap to an H×W×3 uint8 array."""
    magic, pos = _read_token(buf, 0)
    if magic != b"P6":
        raise DatasetError(f"malformed PPM header: magic {magic!r} is not P6")
    try:
        width, pos = _read_token(buf, pos)
        height, pos = _read_token(buf, pos)
        maxval, pos = _read_token(buf, pos)
        w, h, mv = int(width), int(height), int(maxval)
    except ValueError:
        raise DatasetError("malformed PPM header: non-integer field") from None
    if w <= 0 or h <= 0 or mv != 255:
        raise DatasetError(f"malformed PPM header: {w}x{h} maxval {mv} (8-bit only)")
    pos += 1  # single whitespace byte before raster
    need = w * h * 3
    raster = buf[pos:pos + need]
    if len(raster) < need:
        raise DatasetError(f"truncated pixel data: expected {need} bytes, found {len(raster)}")
    return np.frombuffer(raster, dtype=np.uint8).reshape(h, w, 3).copy()


def encode_ppm(pixels: np.ndarray) -> bytes:
    pixels = np.asarray(pixels)
    if pixels.dtype != np.uint8:
        pixels = to_uint8(pixels)
    h, w, c = pixels.shape
    if c != 3:
        raise ValueError(f"PPM needs 3 channels, got {c}")
    return f"P6\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(pixels).tobytes()


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(image, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def write_ppm(path, pixels) -> Path:
    path = Path(path)
    path.write_bytes(encode_ppm(pixels))
    return path


def load_image(ref) -> Tensor:
    """Read a P6 file into an H×W×3 tensor scaled to [0, 1]."""
    return Tensor(decode_ppm(Path(ref).read_bytes()).astype(np.float32) / np.float32(255.0))


def _as_array(image) -> np.ndarray:
    return image.data if isinstance(image, Tensor) else np.asarray(image, dtype=np.float32)


def resize(image, size=(75, 100)) -> Tensor:
    """Bilinear resize with half-pixel centers and edge clamping."""
    src = _as_array(image)
    if src.ndim != 3 or src.shape[0] < 1 or src.shape[1] < 1:
        raise DatasetError(f"resize: empty or malformed source of shape {src.shape}")
    h, w = src.shape[:2]
    oh, ow = size
    if (h, w) == (oh, ow):
        return Tensor(src)

    def axis_weights(n_in, n_out):
        pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        pos = np.clip(pos, 0, n_in - 1)
        lo = np.floor(pos).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, (pos - lo)

    y0, y1, fy = axis_weights(h, oh)
    x0, x1, fx = axis_weights(w, ow)
    s = src.astype(np.float64)
    top = s[y0][:, x0] * (1 - fx)[None, :, None] + s[y0][:, x1] * fx[None, :, None]
    bot = s[y1][:, x0] * (1 - fx)[None, :, None] + s[y1][:, x1] * fx[None, :, None]
    out = top * (1 - fy)[:, None, None] + bot * fy[:, None, None]
    return Tensor(np.clip(out, 0.0, 1.0))


def draw_transform(rng: np.random.Generator, augmentations=AUGMENTATIONS) -> str:
    """Pick one augmentation and its parameters; returned as a compact descriptor."""
    op = augmentations[rng.integers(len(augmentations))]
    if op == "rotate":
        return f"rotate:{rng.uniform(-MAX_ROTATION_DEG, MAX_ROTATION_DEG):.4f}"
    if op == "translate":
        dy, dx = rng.uniform(-MAX_SHIFT_FRACTION, MAX_SHIFT_FRACTION, size=2)
        return f"translate:{dy:.4f}:{dx:.4f}"
    if op in ("hflip", "vflip"):
        return op
    raise DatasetError(f"unknown augmentation {op!r}")


def apply_transform(image, descriptor: str) -> np.ndarray:
    """Apply a descriptor produced by :func:`draw_transform` to an H×W×C float image."""
    img = _as_array(image)
    op, *args = descriptor.split(":")
    if op == "hflip":
        return img[:, ::-1].copy()
    if op == "vflip":
        return img[::-1].copy()
    if op == "rotate":
        out = ndimage.rotate(img, float(args[0]), axes=(1, 0), reshape=False, order=1, mode="nearest")
    elif op == "translate":
        h, w = img.shape[:2]
        out = ndimage.shift(img, (float(args[0]) * h, float(args[1]) * w, 0), order=1, mode="nearest")
    else:
        raise DatasetError(f"unknown transform {descriptor!r}")
    return np.clip(out, 0.0, 1.0).astype(np.float32)
