"""Atomic file writes and small parsing helpers shared across the package.

Every output file in this project is written atomically: content goes to a
temporary file in the destination directory which is then renamed over the
target, so readers never observe a half-written artifact.
"""

from __future__ import annotations

import os
import tempfile
from pathlib import Path


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str | Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def float_field(value: float) -> str:
    """Shortest exact decimal representation; float() round-trips bit-exactly."""
    return repr(float(value))


def parse_kv_config(path: str | Path) -> dict[str, str]:
    """Parse a plain ``key = value`` text file.

    Blank lines and ``#`` comments are ignored. Keys may be dotted
    (``pretrain.epochs``) for per-stage overrides.
    """
    out: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out
