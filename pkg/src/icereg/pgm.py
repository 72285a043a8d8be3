"""Binary PGM (P5) reading and writing.

Masks are 8-bit with pixel value = layer label; echogram images are written
16-bit and rescaled to [0,1] on load.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError


def read_pgm(path) -> tuple[np.ndarray, int]:
    """Read a binary PGM. Returns (H x W uint array, maxval)."""
    with open(path, "rb") as f:
        raw = f.read()

    # header: magic, width, height, maxval as whitespace-separated tokens,
    # '#' comments allowed through the end of line
    tokens = []
    pos = 0
    while len(tokens) < 4:
        if pos >= len(raw):
            raise ContractError(f"{path}: truncated PGM header")
        c = raw[pos:pos + 1]
        if c in b" \t\r\n":
            pos += 1
        elif c == b"#":
            nl = raw.find(b"\n", pos)
            pos = len(raw) if nl < 0 else nl + 1
        else:
            end = pos
            while end < len(raw) and raw[end:end + 1] not in b" \t\r\n":
                end += 1
            tokens.append(raw[pos:end])
            pos = end
    pos += 1  # single whitespace byte after maxval

    if tokens[0] != b"P5":
        raise ContractError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    try:
        width, height, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    except ValueError:
        raise ContractError(f"{path}: malformed PGM header")
    if width < 1 or height < 1 or not (0 < maxval < 65536):
        raise ContractError(f"{path}: invalid PGM dimensions/maxval")

    dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
    count = width * height
    body = raw[pos:pos + count * dtype.itemsize]
    if len(body) != count * dtype.itemsize:
        raise ContractError(f"{path}: PGM pixel data truncated")
    pixels = np.frombuffer(body, dtype=dtype).reshape(height, width)
    return pixels.astype(np.uint16 if maxval > 255 else np.uint8), maxval


def write_pgm(path, pixels: np.ndarray, maxval: int):
    if pixels.ndim != 2:
        raise ContractError(f"PGM pixels must be 2-d, got shape {pixels.shape}")
    if not (0 < maxval < 65536):
        raise ContractError(f"PGM maxval out of range: {maxval}")
    if pixels.min() < 0 or pixels.max() > maxval:
        raise ContractError("PGM pixel values out of [0, maxval]")
    h, w = pixels.shape
    header = f"P5\n{w} {h}\n{maxval}\n".encode("ascii")
    dtype = np.dtype(">u2") if maxval > 255 else np.uint8
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(pixels.astype(dtype)).tobytes())


def load_image(path) -> np.ndarray:
    """Grayscale PGM -> float32 H x W in [0,1]."""
    pixels, maxval = read_pgm(path)
    return (pixels.astype(np.float32) / maxval).astype(np.float32)


def save_image(path, image: np.ndarray):
    """float [0,1] H x W -> 16-bit PGM."""
    q = np.clip(np.rint(np.asarray(image, dtype=np.float64) * 65535), 0, 65535)
    write_pgm(path, q.astype(np.uint16), 65535)


def load_mask(path) -> np.ndarray:
    """Label PGM -> H x W int array."""
    pixels, _ = read_pgm(path)
    return pixels.astype(np.int64)


def save_mask(path, labels: np.ndarray):
    write_pgm(path, np.asarray(labels).astype(np.uint8), 255)
