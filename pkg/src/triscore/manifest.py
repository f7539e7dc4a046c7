"""Run manifests: enough metadata next to every output to reproduce the run."""

from __future__ import annotations

import json
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .fileio import atomic_write_text


def utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def manifest_path_for(primary_output: str | Path) -> Path:
    primary = Path(primary_output)
    if primary.is_dir():
        return primary / "manifest.json"
    return Path(str(primary) + ".manifest.json")


def write_run_manifest(
    primary_output: str | Path,
    command: str,
    params: dict,
    inputs: list[str],
    outputs: list[str],
    seed: int | None,
    started: str,
) -> Path:
    """Atomically write the manifest next to the command's primary output."""
    path = manifest_path_for(primary_output)
    payload = {
        "tool": "triscore",
        "version": __version__,
        "command": command,
        "params": params,
        "inputs": sorted(inputs),
        "outputs": sorted(outputs),
        "seed": seed,
        "started_utc": started,
        "finished_utc": utc_now(),
    }
    atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path
