"""TSPLib EUC_2D parsing and the TSPLib50 bootstrap dataset."""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import TspInstance, normalize_points
from .seeding import derive_seed

TSPLIB50_SIZE = 50
SUPPORTED_EDGE_WEIGHT_TYPES = ("EUC_2D",)

_HEADER_RE = re.compile(r"^\s*([A-Z_]+)\s*:\s*(.*?)\s*$")


class TsplibFormatError(ValueError):
    pass


class UnsupportedFormatError(TsplibFormatError):
    def __init__(self, edge_weight_type: str):
        super().__init__(f"unsupported EDGE_WEIGHT_TYPE {edge_weight_type!r}; only EUC_2D is accepted")
        self.edge_weight_type = edge_weight_type


class SourceTooSmallError(ValueError):
    pass


class EmptyPoolError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class TsplibInstance:
    name: str
    dimension: int
    edge_weight_type: str
    ids: np.ndarray
    coords: np.ndarray

    @property
    def raw_points(self) -> list[tuple[int, float, float]]:
        return [(int(i), float(x), float(y)) for i, (x, y) in zip(self.ids, self.coords)]


def parse_tsplib(text: str) -> TsplibInstance:
    header: dict[str, str] = {}
    coords: list[tuple[float, float]] = []
    ids: list[int] = []
    in_coords = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line == "EOF":
            break
        if in_coords:
            parts = line.split()
            if len(parts) != 3:
                # next section starts (e.g. DISPLAY_DATA_SECTION); not supported, stop here
                if parts[0].endswith("_SECTION"):
                    break
                raise TsplibFormatError(f"line {lineno}: expected 'id x y', got {line!r}")
            try:
                ids.append(int(parts[0]))
                coords.append((float(parts[1]), float(parts[2])))
            except ValueError:
                raise TsplibFormatError(f"line {lineno}: bad coordinate record {line!r}") from None
            continue
        if line.startswith("NODE_COORD_SECTION"):
            in_coords = True
            continue
        m = _HEADER_RE.match(line)
        if m:
            header[m.group(1)] = m.group(2)
        elif line.endswith("_SECTION"):
            raise TsplibFormatError(f"unsupported section {line!r}")

    ewt = header.get("EDGE_WEIGHT_TYPE", "").upper()
    if ewt not in SUPPORTED_EDGE_WEIGHT_TYPES:
        raise UnsupportedFormatError(ewt or "<missing>")
    if "DIMENSION" not in header:
        raise TsplibFormatError("missing DIMENSION header")
    try:
        dimension = int(header["DIMENSION"])
    except ValueError:
        raise TsplibFormatError(f"bad DIMENSION {header['DIMENSION']!r}") from None
    if not in_coords:
        raise TsplibFormatError("missing NODE_COORD_SECTION")
    if len(coords) != dimension:
        raise TsplibFormatError(f"DIMENSION is {dimension} but {len(coords)} coordinates were read")
    if len(set(ids)) != len(ids):
        raise TsplibFormatError("duplicate node ids")
    return TsplibInstance(
        name=header.get("NAME", ""),
        dimension=dimension,
        edge_weight_type=ewt,
        ids=np.asarray(ids, dtype=np.int64),
        coords=np.asarray(coords, dtype=np.float64),
    )


def read_tsplib(path: str | Path) -> TsplibInstance:
    return parse_tsplib(Path(path).read_text())


def sample_tsplib50_indices(source: TsplibInstance, seed: int, size: int = TSPLIB50_SIZE) -> np.ndarray:
    if source.dimension < size:
        raise SourceTooSmallError(f"{source.name}: dimension {source.dimension} < {size}")
    return np.random.default_rng(seed).choice(source.dimension, size=size, replace=False)


def sample_tsplib50_instance(source: TsplibInstance, seed: int, size: int = TSPLIB50_SIZE) -> TspInstance:
    """Pick `size` distinct nodes uniformly without replacement, then normalize."""
    idx = sample_tsplib50_indices(source, seed, size)
    return TspInstance(normalize_points(source.coords[idx]))


@dataclass
class Tsplib50Dataset:
    instances: list[TspInstance]
    provenance: list[dict] = field(default_factory=list)
    master_seed: int = 0

    def __len__(self):
        return len(self.instances)

    @property
    def points(self) -> np.ndarray:
        return np.stack([inst.points for inst in self.instances])


def eligible_sources(sources, size: int = TSPLIB50_SIZE, max_dimension: int | None = None):
    out = []
    for s in sources:
        if s.edge_weight_type not in SUPPORTED_EDGE_WEIGHT_TYPES or s.dimension < size:
            continue
        if max_dimension is not None and s.dimension > max_dimension:
            continue
        out.append(s)
    return out


def build_tsplib50(
    sources,
    size: int = 10_000,
    master_seed: int = 0,
    max_dimension: int | None = None,
) -> Tsplib50Dataset:
    """Each instance: a source chosen uniformly (with repetition), then a 50-node subsample.

    Both draws are keyed by (master_seed, instance index) only.
    """
    pool = sorted(eligible_sources(sources, max_dimension=max_dimension), key=lambda s: s.name)
    if not pool:
        raise EmptyPoolError("no eligible EUC_2D sources with at least 50 nodes")
    instances, provenance = [], []
    for i in range(size):
        pick = np.random.default_rng(derive_seed(master_seed, "tsplib50-source", i)).integers(len(pool))
        src = pool[int(pick)]
        seed = derive_seed(master_seed, "tsplib50-sample", i)
        instances.append(sample_tsplib50_instance(src, seed))
        provenance.append({"index": i, "source": src.name, "seed": seed})
    return Tsplib50Dataset(instances, provenance, master_seed)


def scan_directory(directory: str | Path, max_dimension: int | None = None):
    """Parse every *.tsp file; return (eligible sources, [(filename, reason)] skipped)."""
    accepted, skipped = [], []
    for path in sorted(Path(directory).glob("*.tsp")):
        try:
            inst = read_tsplib(path)
        except TsplibFormatError as exc:
            skipped.append((path.name, str(exc)))
            continue
        if inst.dimension < TSPLIB50_SIZE:
            skipped.append((path.name, f"dimension {inst.dimension} < {TSPLIB50_SIZE}"))
        elif max_dimension is not None and inst.dimension > max_dimension:
            skipped.append((path.name, f"dimension {inst.dimension} > cap {max_dimension}"))
        else:
            accepted.append(inst)
    return accepted, skipped
