"""Run manifests: every artifact directory records how it was produced."""

from __future__ import annotations

import hashlib
import json
import os
from datetime import datetime, timezone

from . import __version__
from .data import atomic_write_text

MANIFEST_NAME = "manifest.json"


def file_sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()


def write_manifest_dict(
    command: str, config: dict, input_paths: list[str], seed: int | None, extra: dict | None = None
) -> dict:
    manifest = {
        "command": command,
        "config": config,
        "config_hash": config_hash(config),
        "inputs": {os.path.basename(p): file_sha256(p) for p in input_paths},
        "seed": seed,
        "tool_version": __version__,
        "created_at": datetime.now(timezone.utc).isoformat(),
    }
    if extra:
        manifest.update(extra)
    return manifest


def write_manifest(
    out_dir: str,
    command: str,
    config: dict,
    input_paths: list[str],
    seed: int | None,
    extra: dict | None = None,
) -> dict:
    manifest = write_manifest_dict(command, config, input_paths, seed, extra)
    atomic_write_text(os.path.join(out_dir, MANIFEST_NAME), json.dumps(manifest, indent=2, sort_keys=True))
    return manifest
