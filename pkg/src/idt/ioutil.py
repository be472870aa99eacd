"""Atomic file writing helpers.

All persistent outputs go through a temp-file-plus-rename so a crashed or
failing command never leaves a partially written file behind.
"""

from __future__ import annotations

import os


def atomic_write_bytes(path, data: bytes) -> None:
    path = os.fspath(path)
    tmp = path + ".tmp"
    try:
        with open(tmp, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def parse_kv_lines(text: str, source: str = "<text>") -> dict:
    """Parse flat `key = value` lines; '#' starts a comment, blanks skipped."""
    out = {}
    for num, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{source}:{num}: expected 'key = value', got {line!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ValueError(f"{source}:{num}: empty key")
        out[key] = value.strip()
    return out
