"""Influence curves and the CSV formats shared by predictors and simulators."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError
from .graph import format_float

__all__ = ["InfluenceCurve", "read_curve", "write_curve", "write_table", "read_table"]


@dataclass
class InfluenceCurve:
    """Sampled ``sigma(t)`` with a provenance record.

    ``provenance`` is a flat JSON-serialisable dict: method name, solver,
    step, tree width, seed, node count, source count, whatever produced it.
    """

    times: np.ndarray
    sigma: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.sigma = np.asarray(self.sigma, dtype=np.float64)
        if self.times.shape != self.sigma.shape or self.times.ndim != 1:
            raise ValueError("times and sigma must be 1-D arrays of equal length")

    @property
    def node_count(self):
        return self.provenance.get("node_count")

    @property
    def source_count(self):
        return self.provenance.get("source_count")

    def __len__(self):
        return self.times.size

    def at(self, t):
        return np.interp(t, self.times, self.sigma)


def write_table(path, header, columns, comments=()):
    cols = [np.asarray(c, dtype=np.float64) for c in columns]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for c in comments:
            fh.write(f"# {c}\n")
        fh.write(",".join(header) + "\n")
        for row in zip(*(c.tolist() for c in cols)):
            fh.write(",".join("" if np.isnan(x) else format_float(x) for x in row) + "\n")


def read_table(path):
    """Read a numeric CSV with one header row. Empty cells become NaN.

    Returns ``(header, data, comments)`` with ``data`` of shape (rows, cols).
    """
    header = None
    rows = []
    comments = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                comments.append(line[1:].strip())
                continue
            parts = [p.strip() for p in line.split(",")]
            if header is None:
                header = parts
                continue
            if len(parts) != len(header):
                raise FormatError(f"expected {len(header)} fields, got {len(parts)}",
                                  line=lineno, path=path)
            try:
                rows.append([float(p) if p else np.nan for p in parts])
            except ValueError:
                raise FormatError("non-numeric field", line=lineno, path=path) from None
    if header is None:
        raise FormatError("missing header row", path=path)
    data = np.array(rows, dtype=np.float64).reshape(len(rows), len(header))
    return header, data, comments


def write_curve(curve: InfluenceCurve, path):
    comments = [f"provenance={json.dumps(curve.provenance, sort_keys=True)}"] if curve.provenance else []
    write_table(path, ["t", "sigma"], [curve.times, curve.sigma], comments)


def read_curve(path) -> InfluenceCurve:
    header, data, comments = read_table(path)
    if header[:2] != ["t", "sigma"]:
        raise FormatError("curve file must have header 't,sigma'", line=1, path=path)
    prov = {}
    for c in comments:
        if c.startswith("provenance="):
            try:
                prov = json.loads(c[len("provenance="):])
            except json.JSONDecodeError:
                raise FormatError("bad provenance comment", path=path) from None
    if data.shape[0] and np.any(np.isnan(data[:, :2])):
        raise FormatError("empty cell in curve file", path=path)
    if data.shape[0] > 1 and np.any(np.diff(data[:, 0]) < 0):
        raise FormatError("curve times must be nondecreasing", path=path)
    return InfluenceCurve(data[:, 0], data[:, 1], prov)
