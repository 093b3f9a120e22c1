"""Versioned, byte-stable checkpoint container for torch state dicts.

Layout::

    COGS-CKPT 1\\n
    <header JSON, keys sorted, no whitespace>\\n
    <raw little-endian array bytes, concatenated in manifest order>

The header holds ``kind``, ``config``, ``meta`` (epoch, version tag, ...),
``rng`` (JSON-able random state) and ``arrays``: a list of
``{"name", "dtype", "shape", "offset", "nbytes"}`` with offsets relative to
the first byte after the header line. No timestamps are stored, so loading
and re-saving reproduces the file byte for byte.
"""
from __future__ import annotations

import json
from collections import OrderedDict
from pathlib import Path

import numpy as np
import torch

from .dataset import atomic_write_bytes

MAGIC = b"COGS-CKPT 1"


class CheckpointError(ValueError):
    pass


def _to_numpy(t: torch.Tensor) -> np.ndarray:
    arr = t.detach().cpu().contiguous().numpy()
    return arr.astype(arr.dtype.newbyteorder("<"), copy=False)


def encode_checkpoint(kind: str, config: dict, arrays: "OrderedDict[str, torch.Tensor]", meta=None, rng=None) -> bytes:
    if isinstance(rng, torch.Generator):
        rng = {"torch": generator_state(rng)}
    manifest, chunks, offset = [], [], 0
    for name, tensor in arrays.items():
        arr = _to_numpy(tensor)
        raw = arr.tobytes(order="C")
        manifest.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = {"arrays": manifest, "config": config, "kind": kind, "meta": meta or {}, "rng": rng or {}}
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + b"\n" + head + b"\n" + b"".join(chunks)


def decode_checkpoint(data: bytes):
    """Return (header dict, OrderedDict name -> torch.Tensor)."""
    first = data.find(b"\n")
    if first < 0 or data[:first] != MAGIC:
        raise CheckpointError("not a COGS checkpoint (bad magic)")
    second = data.find(b"\n", first + 1)
    header = json.loads(data[first + 1:second].decode("utf-8"))
    body = memoryview(data)[second + 1:]
    arrays = OrderedDict()
    for entry in header["arrays"]:
        raw = body[entry["offset"]:entry["offset"] + entry["nbytes"]]
        if len(raw) != entry["nbytes"]:
            raise CheckpointError(f"truncated array {entry['name']}")
        arr = np.frombuffer(raw, dtype=np.dtype(entry["dtype"])).reshape(entry["shape"]).copy()
        arrays[entry["name"]] = torch.from_numpy(arr)
    return header, arrays


def write_checkpoint(path, kind, config, arrays, meta=None, rng=None) -> None:
    atomic_write_bytes(path, encode_checkpoint(kind, config, arrays, meta, rng))


def read_checkpoint(path):
    return decode_checkpoint(Path(path).read_bytes())


def generator_state(gen: torch.Generator) -> list[int]:
    return gen.get_state().tolist()


def restore_generator(state: list[int]) -> torch.Generator:
    g = torch.Generator()
    g.set_state(torch.tensor(state, dtype=torch.uint8))
    return g
