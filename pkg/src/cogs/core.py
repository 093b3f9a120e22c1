"""Instances, tours, tour length and optimality gap for 2D Euclidean TSP."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

REL_TOL = 1e-9


class DegenerateInstanceError(ValueError):
    """Raised when points cannot form a usable instance (e.g. all identical)."""


class InvalidTourError(ValueError):
    pass


class NumericalFailure(RuntimeError):
    """Non-finite values appeared in a computation.

    ``index`` carries the offending batch/instance index when known.
    """

    def __init__(self, message: str, index: int | None = None):
        super().__init__(message if index is None else f"{message} (index {index})")
        self.index = index


@dataclass(frozen=True, eq=False)
class TspInstance:
    points: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64, copy=True)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ValueError(f"points must have shape (n, 2), got {pts.shape}")
        if pts.shape[0] < 2:
            raise ValueError("an instance needs at least 2 points")
        if not np.all(np.isfinite(pts)):
            raise ValueError("points must be finite")
        if pts.min() < 0.0 or pts.max() > 1.0:
            raise ValueError("coordinates must lie in [0, 1]")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    def __len__(self) -> int:
        return self.n

    def __eq__(self, other):
        if not isinstance(other, TspInstance):
            return NotImplemented
        return np.array_equal(self.points, other.points)

    def __hash__(self):
        return hash(self.points.tobytes())


@dataclass(frozen=True)
class Tour:
    order: tuple[int, ...]
    length: float = field(compare=False)

    @classmethod
    def of(cls, instance: TspInstance | np.ndarray, order: Sequence[int]) -> "Tour":
        order = tuple(int(i) for i in order)
        return cls(order, tour_length(instance, order))

    def verify(self, instance: TspInstance | np.ndarray) -> None:
        recomputed = tour_length(instance, self.order)
        if not np.isclose(recomputed, self.length, rtol=REL_TOL, atol=0.0):
            raise InvalidTourError(f"stored length {self.length} != recomputed {recomputed}")


def _coords(instance: TspInstance | np.ndarray) -> np.ndarray:
    return instance.points if isinstance(instance, TspInstance) else np.asarray(instance, dtype=np.float64)


def distance_matrix(instance: TspInstance | np.ndarray) -> np.ndarray:
    pts = _coords(instance)
    diff = pts[:, None, :] - pts[None, :, :]
    d = np.sqrt((diff**2).sum(-1))
    # exact symmetry regardless of summation order
    return np.triu(d, 1) + np.triu(d, 1).T


def check_permutation(order: Sequence[int], n: int) -> np.ndarray:
    arr = np.asarray(order)
    if arr.ndim != 1 or arr.shape[0] != n:
        raise InvalidTourError(f"tour must list {n} indices, got {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        raise InvalidTourError("tour indices must be integers")
    if not np.array_equal(np.sort(arr), np.arange(n)):
        raise InvalidTourError("tour is not a permutation (duplicate or missing index)")
    return arr.astype(np.int64)


def tour_length(instance: TspInstance | np.ndarray, order: Sequence[int]) -> float:
    """Closed-cycle Euclidean length, including the edge back to the start."""
    pts = _coords(instance)
    idx = check_permutation(order, pts.shape[0])
    seq = pts[idx]
    return float(np.sqrt(((seq - np.roll(seq, -1, axis=0)) ** 2).sum(-1)).sum())


def batch_tour_lengths(points: np.ndarray, tours: np.ndarray) -> np.ndarray:
    """Cycle lengths for a (B, n, 2) batch and (B, n) tours; no permutation checks."""
    seq = np.take_along_axis(points, tours[..., None].astype(np.int64), axis=1)
    return np.sqrt(((seq - np.roll(seq, -1, axis=1)) ** 2).sum(-1)).sum(-1)


def canonical_cycle(order: Sequence[int]) -> tuple[int, ...]:
    """Rotate so index 0 is first and orient so the second element is smaller than the last."""
    order = [int(i) for i in order]
    k = order.index(0)
    rot = order[k:] + order[:k]
    if len(rot) > 2 and rot[1] > rot[-1]:
        rot = [rot[0]] + rot[1:][::-1]
    return tuple(rot)


def optimality_gap(model_cost: float, oracle_cost: float) -> float:
    if not oracle_cost > 0:
        raise ValueError(f"oracle cost must be positive, got {oracle_cost}")
    return (model_cost - oracle_cost) / oracle_cost


def normalize_to_unit_square(points) -> TspInstance:
    """Translate and uniformly scale so the larger bounding-box side is exactly 1."""
    return TspInstance(normalize_points(points))


def normalize_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
        raise ValueError("need at least 2 points of shape (n, 2)")
    lo = pts.min(axis=0)
    span = (pts.max(axis=0) - lo).max()
    if span == 0:
        raise DegenerateInstanceError("all points are identical")
    out = (pts - lo) / span
    # guard rounding on the short axis
    return np.clip(out, 0.0, 1.0)
