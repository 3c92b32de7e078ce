"""Self-describing checkpoint container shared by both training stages.

A checkpoint is a torch-serialised dict::

    {"format": FORMAT, "library_version": ..., "kind": ..., "config": {...},
     "state": {name: state_dict}, "meta": {...}}

Writes go to a temporary file that is renamed into place, so a reader never
sees a half-written checkpoint.
"""

from __future__ import annotations

import dataclasses
import io
from pathlib import Path
from typing import Any

import torch

from . import __version__
from .dataio.io import atomic_write_bytes

FORMAT = "sim2real_depth.checkpoint/1"


class CheckpointError(ValueError):
    pass


def to_plain(obj: Any) -> Any:
    """Dataclasses/tuples/paths -> JSON/TOML friendly builtins."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {str(k): to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_plain(v) for v in obj]
    if isinstance(obj, Path):
        return str(obj)
    if hasattr(obj, "value") and isinstance(getattr(obj, "value"), str):  # enums
        return obj.value
    return obj


def save_checkpoint(
    path: str | Path,
    kind: str,
    state: dict[str, dict[str, torch.Tensor]],
    config: Any = None,
    meta: dict | None = None,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format": FORMAT,
        "library_version": __version__,
        "kind": kind,
        "config": to_plain(config) if config is not None else {},
        "state": state,
        "meta": meta or {},
    }
    buf = io.BytesIO()
    torch.save(payload, buf)
    atomic_write_bytes(path, buf.getvalue())
    return path


def load_checkpoint(path: str | Path, kind: str | None = None) -> dict:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if not isinstance(payload, dict) or payload.get("format") != FORMAT:
        raise CheckpointError(f"{path}: not a {FORMAT} checkpoint")
    if kind is not None and payload["kind"] != kind:
        raise CheckpointError(f"{path}: expected a {kind!r} checkpoint, found {payload['kind']!r}")
    return payload
