"""PFM image file reading and writing.

PFM stores raw float32 samples: a text header (`PF` for 3-channel color,
`Pf` for grayscale; width height; scale whose sign encodes endianness)
followed by rows bottom-to-top. Files written here are always
little-endian (scale -1.0). In-memory images are float64; the float32
narrowing on disk is the only lossy step.
"""

from __future__ import annotations

import numpy as np

from .ioutil import atomic_write_bytes


def write_pfm(path, image: np.ndarray) -> None:
    """Write an H x W (grayscale) or H x W x 3 (color) array as PFM."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 2:
        magic = b"Pf"
    elif arr.ndim == 3 and arr.shape[2] == 3:
        magic = b"PF"
    else:
        raise ValueError(f"image must be HxW or HxWx3, got shape {arr.shape}")
    h, w = arr.shape[:2]
    header = b"%s\n%d %d\n-1.0\n" % (magic, w, h)
    payload = np.flipud(arr).astype("<f4").tobytes()
    atomic_write_bytes(path, header + payload)


def read_pfm(path) -> np.ndarray:
    """Read a PFM file into a float64 H x W or H x W x 3 array."""
    with open(path, "rb") as f:
        data = f.read()

    # header: three whitespace-separated token groups, then one whitespace
    # byte, then the raw samples
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError(f"{path}: truncated PFM header")
        tokens.append(data[start:pos])
    pos += 1  # single whitespace after the scale token

    magic = tokens[0]
    if magic == b"PF":
        channels = 3
    elif magic == b"Pf":
        channels = 1
    else:
        raise ValueError(f"{path}: not a PFM file (magic {magic!r})")
    try:
        w, h = int(tokens[1]), int(tokens[2])
        scale = float(tokens[3])
    except ValueError:
        raise ValueError(f"{path}: malformed PFM header") from None
    if w <= 0 or h <= 0 or scale == 0.0:
        raise ValueError(f"{path}: invalid PFM dimensions or scale")

    count = w * h * channels
    dtype = "<f4" if scale < 0 else ">f4"
    raw = data[pos:pos + count * 4]
    if len(raw) != count * 4:
        raise ValueError(f"{path}: PFM payload truncated")
    arr = np.frombuffer(raw, dtype=dtype).astype(np.float64)
    arr = arr.reshape((h, w) if channels == 1 else (h, w, channels))
    return np.flipud(arr).copy()
