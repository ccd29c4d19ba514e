"""Run manifests and output hashing.

A manifest records the exact argument vector, working directory, resolved
flags and a hash of every output.  JSON outputs are hashed in canonical form
with wall-clock fields removed, so a replay that reproduces every number
reproduces every hash.
"""

from __future__ import annotations

import hashlib
import json
import platform
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .errors import FormatError

VOLATILE_KEYS = ("wall_time",)


def _strip(obj):
    if isinstance(obj, dict):
        return {k: _strip(v) for k, v in obj.items() if not k.startswith(VOLATILE_KEYS)}
    if isinstance(obj, list):
        return [_strip(v) for v in obj]
    return obj


def _canonical(obj) -> bytes:
    return json.dumps(_strip(obj), sort_keys=True, separators=(",", ":")).encode()


def output_hash(path) -> str:
    path = Path(path)
    raw = path.read_bytes()
    if path.suffix == ".json":
        raw = _canonical(json.loads(raw))
    elif path.suffix == ".jsonl":
        raw = b"\n".join(_canonical(json.loads(line)) for line in raw.splitlines() if line.strip())
    return hashlib.sha256(raw).hexdigest()


@dataclass
class RunManifest:
    command: str
    argv: list[str]
    cwd: str
    flags: dict
    seeds: dict
    noise: dict | None = None
    outputs: dict[str, str] = field(default_factory=dict)
    wall_time: float = 0.0
    versions: dict = field(default_factory=lambda: {
        "cimnas": __version__, "numpy": np.__version__, "python": platform.python_version()})

    def record_outputs(self, paths) -> None:
        self.outputs = {str(p): output_hash(p) for p in paths}

    def to_dict(self) -> dict:
        return {"kind": "run_manifest", **asdict(self)}

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "RunManifest":
        try:
            d = json.loads(Path(path).read_text())
            if d.pop("kind", None) != "run_manifest":
                raise FormatError(f"{path}: not a run manifest")
            return cls(**d)
        except (json.JSONDecodeError, TypeError) as exc:
            raise FormatError(f"{path}: malformed run manifest ({exc})") from exc


class Timer:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start
