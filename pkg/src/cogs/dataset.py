"""InstanceDataset and its canonical text serialization.

File layout (UTF-8, ``\\n`` line endings)::

    COGS-DATASET 1
    {header: JSON object, keys sorted, no whitespace}
    x0 y0 x1 y1 ... x(n-1) y(n-1)      # one line per instance, Python repr floats

Header keys: ``count``, ``format_version``, ``generator`` (kind + parameters),
``master_seed``, ``n``, ``name``, ``provenance`` (list, one object per instance).
``repr`` of a float64 is the shortest round-tripping decimal, so
``parse(serialize(x)) == x`` and re-serialising a parsed file is byte-identical.
"""
from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import TspInstance

MAGIC = "COGS-DATASET"
FORMAT_VERSION = 1


class DatasetFormatError(ValueError):
    pass


@dataclass(eq=False)
class InstanceDataset:
    name: str
    points: np.ndarray
    master_seed: int = 0
    generator: dict = field(default_factory=dict)
    provenance: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.points = np.ascontiguousarray(self.points, dtype=np.float64)
        if self.points.ndim != 3 or self.points.shape[2] != 2:
            raise ValueError(f"points must be (count, n, 2), got {self.points.shape}")

    def __len__(self):
        return self.points.shape[0]

    @property
    def n(self) -> int:
        return self.points.shape[1]

    def instances(self) -> list[TspInstance]:
        return [TspInstance(p) for p in self.points]

    def digest(self) -> str:
        return points_digest(self.points)

    def __eq__(self, other):
        if not isinstance(other, InstanceDataset):
            return NotImplemented
        return serialize_dataset(self) == serialize_dataset(other)

    @classmethod
    def from_instances(cls, name, instances, **kwargs) -> "InstanceDataset":
        return cls(name, np.stack([i.points for i in instances]), **kwargs)


def points_digest(points: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(points, dtype=np.float64).tobytes()).hexdigest()


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def serialize_dataset(ds: InstanceDataset) -> str:
    header = {
        "count": len(ds),
        "format_version": FORMAT_VERSION,
        "generator": ds.generator,
        "master_seed": int(ds.master_seed),
        "meta": ds.meta,
        "n": ds.n,
        "name": ds.name,
        "provenance": ds.provenance,
    }
    lines = [f"{MAGIC} {FORMAT_VERSION}", _dumps(header)]
    for inst in ds.points:
        lines.append(" ".join(repr(float(v)) for v in inst.ravel()))
    return "\n".join(lines) + "\n"


def parse_dataset(text: str) -> InstanceDataset:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if len(lines) < 2 or lines[0] != f"{MAGIC} {FORMAT_VERSION}":
        raise DatasetFormatError("not a COGS dataset file (bad magic line)")
    header = json.loads(lines[1])
    body = lines[2:]
    count, n = header["count"], header["n"]
    if len(body) != count:
        raise DatasetFormatError(f"header declares {count} instances, body has {len(body)}")
    pts = np.empty((count, n, 2), dtype=np.float64)
    for i, line in enumerate(body):
        vals = [float(t) for t in line.split(" ")]
        if len(vals) != 2 * n:
            raise DatasetFormatError(f"instance {i}: expected {2 * n} values, got {len(vals)}")
        pts[i] = np.asarray(vals).reshape(n, 2)
    return InstanceDataset(
        name=header["name"],
        points=pts,
        master_seed=header["master_seed"],
        generator=header["generator"],
        provenance=header["provenance"],
        meta=header.get("meta", {}),
    )


def atomic_write_text(path: str | Path, text: str) -> None:
    """Write-then-rename so readers never see a partial file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_dataset(ds: InstanceDataset, path: str | Path) -> None:
    atomic_write_text(path, serialize_dataset(ds))


def load_dataset(path: str | Path) -> InstanceDataset:
    return parse_dataset(Path(path).read_text(encoding="utf-8"))
