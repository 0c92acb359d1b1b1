"""Run manifests: resolved config, seeds, artifact checksums, timing."""

from __future__ import annotations

import hashlib
import json
import platform
from datetime import datetime, timezone
from pathlib import Path


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(65536), b""):
            h.update(block)
    return h.hexdigest()


def build_manifest(command: str, config: dict, seeds: dict,
                   inputs: list, outputs: list, duration_s: float) -> dict:
    return {
        "command": command,
        "config": config,
        "seeds": seeds,
        "inputs": {str(p): sha256_file(p) for p in inputs},
        "outputs": {str(p): sha256_file(p) for p in outputs},
        "started_utc": datetime.now(timezone.utc).isoformat(),
        "duration_s": duration_s,
        "platform": platform.platform(),
        "python": platform.python_version(),
    }


def write_manifest(out_dir, manifest: dict) -> Path:
    path = Path(out_dir) / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1) + "\n", encoding="utf-8")
    return path
