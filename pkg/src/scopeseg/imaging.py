"""Image containers and PGM (P2/P5) input/output.

Gray images are ``float64`` arrays of shape ``(H, W)`` with values in
``[0, 1]``; binary images are ``uint8`` arrays holding 0/1.
"""

from __future__ import annotations

import os

import numpy as np


class PGMError(ValueError):
    """Base class for PGM decoding failures."""


class PGMMagicError(PGMError):
    """The file does not start with a supported magic number."""


class PGMHeaderError(PGMError):
    """The header is malformed (bad token, bad dimensions, bad maxval)."""


class PGMTruncatedError(PGMError):
    """The pixel payload is shorter than the header promises."""


def as_gray(data, copy: bool = False) -> np.ndarray:
    img = np.array(data, dtype=np.float64, copy=copy)
    if img.ndim != 2:
        raise ValueError(f"gray image must be 2D, got shape {img.shape}")
    if not np.all(np.isfinite(img)) or img.size and (img.min() < 0.0 or img.max() > 1.0):
        raise ValueError("gray image values must be finite and in [0, 1]")
    return img


def as_binary(data) -> np.ndarray:
    mask = np.asarray(data)
    if mask.ndim != 2:
        raise ValueError(f"binary image must be 2D, got shape {mask.shape}")
    if mask.dtype == bool:
        return mask.astype(np.uint8)
    if mask.size and not np.all((mask == 0) | (mask == 1)):
        raise ValueError("binary image values must be 0 or 1")
    return mask.astype(np.uint8)


def _tokens(buf: bytes, count: int, pos: int = 0) -> tuple[list[bytes], int]:
    """Read ``count`` whitespace separated header tokens, skipping ``#`` comments."""
    out = []
    n = len(buf)
    while len(out) < count:
        while pos < n and buf[pos : pos + 1].isspace():
            pos += 1
        if pos < n and buf[pos : pos + 1] == b"#":
            while pos < n and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        if pos >= n:
            raise PGMHeaderError("unexpected end of header")
        start = pos
        while pos < n and not buf[pos : pos + 1].isspace() and buf[pos : pos + 1] != b"#":
            pos += 1
        out.append(buf[start:pos])
    return out, pos


def decode_pgm(buf: bytes) -> np.ndarray:
    magic = buf[:2]
    if magic not in (b"P2", b"P5"):
        raise PGMMagicError(f"unsupported magic {magic!r}")
    fields, pos = _tokens(buf, 3, 2)
    try:
        width, height, maxval = (int(f) for f in fields)
    except ValueError:
        raise PGMHeaderError(f"non-integer header field in {fields!r}") from None
    if width <= 0 or height <= 0:
        raise PGMHeaderError(f"bad dimensions {width}x{height}")
    if not 0 < maxval <= 65535:
        raise PGMHeaderError(f"maxval {maxval} out of range")
    count = width * height

    if magic == b"P5":
        # exactly one whitespace byte separates the header from the raster
        if pos >= len(buf) or not buf[pos : pos + 1].isspace():
            raise PGMHeaderError("missing whitespace after maxval")
        pos += 1
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        need = count * dtype.itemsize
        payload = buf[pos : pos + need]
        if len(payload) < need:
            raise PGMTruncatedError(f"expected {need} payload bytes, got {len(payload)}")
        raw = np.frombuffer(payload, dtype=dtype).astype(np.int64)
    else:
        words = buf[pos:].split()
        if len(words) < count:
            raise PGMTruncatedError(f"expected {count} samples, got {len(words)}")
        try:
            raw = np.array([int(w) for w in words[:count]], dtype=np.int64)
        except ValueError:
            raise PGMHeaderError("non-integer sample in ASCII raster") from None

    if raw.size and (raw.min() < 0 or raw.max() > maxval):
        raise PGMHeaderError("sample exceeds maxval")
    return raw.reshape(height, width).astype(np.float64) / maxval


def read_pgm(path: str | os.PathLike) -> np.ndarray:
    """Read a P2 or P5 file into a gray image scaled by ``1/maxval``."""
    with open(path, "rb") as fh:
        return decode_pgm(fh.read())


def quantize(img: np.ndarray, maxval: int) -> np.ndarray:
    # round half up; floor(x + 0.5) is exact for the non-negative range we allow
    return np.floor(np.asarray(img, dtype=np.float64) * maxval + 0.5).astype(np.int64)


def encode_pgm(img, maxval: int = 255) -> bytes:
    if maxval not in (255, 65535):
        raise ValueError("maxval must be 255 or 65535")
    img = as_gray(img)
    height, width = img.shape
    header = f"P5\n{width} {height}\n{maxval}\n".encode("ascii")
    dtype = ">u2" if maxval > 255 else "u1"
    return header + quantize(img, maxval).astype(dtype).tobytes()


def write_pgm(img, path: str | os.PathLike, maxval: int = 255) -> None:
    """Write canonical P5: ``P5\\n<W> <H>\\n<maxval>\\n`` followed by the raster."""
    data = encode_pgm(img, maxval)
    with open(path, "wb") as fh:
        fh.write(data)


def write_mask(mask, path: str | os.PathLike) -> None:
    write_pgm(as_binary(mask).astype(np.float64), path, 255)


def read_mask(path: str | os.PathLike, t: float = 0.5) -> np.ndarray:
    return threshold(read_pgm(path), t)


def threshold(img, t: float) -> np.ndarray:
    """Foreground where intensity is strictly greater than ``t``."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"threshold {t} outside [0, 1]")
    return (np.asarray(img, dtype=np.float64) > t).astype(np.uint8)


def downsample_nearest(img: np.ndarray, height: int, width: int) -> np.ndarray:
    """Nearest-neighbour resampling for external images of the wrong size."""
    img = np.asarray(img)
    rows = (np.arange(height) * img.shape[0]) // height
    cols = (np.arange(width) * img.shape[1]) // width
    return img[np.ix_(rows, cols)]
