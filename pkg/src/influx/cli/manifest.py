"""Run manifests: what was run, on which inputs, producing which outputs."""

from __future__ import annotations

import hashlib
import json
import platform
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .. import __version__

__all__ = ["RunManifest", "file_digest", "load_manifest"]


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return "sha256:" + h.hexdigest()


@dataclass
class RunManifest:
    subcommand: str
    argv: list
    flags: dict
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    seeds: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    version: str = __version__
    cwd: str = ""
    notes: dict = field(default_factory=dict)
    environment: dict = field(default_factory=lambda: {
        "python": platform.python_version(), "numpy": np.__version__})

    def add_input(self, path):
        if path is not None:
            self.inputs[str(path)] = file_digest(path)

    def add_output(self, path):
        self.outputs[str(path)] = file_digest(path)

    class _Timer:
        def __init__(self, manifest, phase):
            self.manifest, self.phase = manifest, phase

        def __enter__(self):
            self.t0 = time.perf_counter()

        def __exit__(self, *exc):
            self.manifest.timings[self.phase] = round(time.perf_counter() - self.t0, 6)

    def phase(self, name):
        """Context manager recording the wall-clock seconds of one phase."""
        return self._Timer(self, name)

    def to_dict(self):
        return asdict(self)

    def write(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True, default=str)
            fh.write("\n")


def load_manifest(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict) or "argv" not in data or "subcommand" not in data:
        from ..errors import FormatError
        raise FormatError("not a run manifest", path=path)
    return data
