"""Artifact manifest: every emitted file with a content hash."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


class Manifest:
    def __init__(self, out_dir):
        self.out_dir = Path(out_dir)
        self.entries: list[dict] = []

    def add(self, path, kind: str) -> None:
        path = Path(path)
        self.entries.append(
            {
                "path": str(path.relative_to(self.out_dir)) if path.is_relative_to(self.out_dir) else str(path),
                "kind": kind,
                "bytes": path.stat().st_size,
                "sha256": _sha256(path),
            }
        )

    def write(self, name: str = "manifest.json") -> Path:
        target = self.out_dir / name
        target.write_text(
            json.dumps({"artifacts": self.entries}, indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )
        return target
