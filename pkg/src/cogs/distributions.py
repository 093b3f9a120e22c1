"""Synthetic instance generators."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .core import TspInstance, normalize_points
from .seeding import derive_seed

KINDS = ("uniform", "gaussian_mixture", "diagonal", "clustered_uniform")


def sample_uniform(n: int, seed: int) -> TspInstance:
    if n < 2:
        raise ValueError("n must be >= 2")
    return TspInstance(np.random.default_rng(seed).random((n, 2)))


def sample_gaussian_mixture(
    n: int,
    num_modes: int | None,
    spread: float,
    seed: int,
    working_size: float = 3.0,
    min_modes: int = 2,
    max_modes: int = 6,
) -> TspInstance:
    """Isotropic Gaussian blobs around uniformly placed centers, then normalized.

    ``num_modes=None`` draws the mode count uniformly from [min_modes, max_modes].
    """
    if spread <= 0:
        raise ValueError("spread must be > 0 (zero spread collapses a mode to one point)")
    rng = np.random.default_rng(seed)
    if num_modes is None:
        num_modes = int(rng.integers(min_modes, max_modes + 1))
    if num_modes < 1:
        raise ValueError("num_modes must be >= 1")
    centers = rng.uniform(0.0, working_size, size=(num_modes, 2))
    assign = rng.integers(0, num_modes, size=n)
    pts = centers[assign] + rng.normal(0.0, spread, size=(n, 2))
    return TspInstance(normalize_points(pts))


def sample_diagonal(n: int, band_width: float, jitter: float, seed: int) -> TspInstance:
    """Points scattered in a thin band around y = x."""
    if not 0 < band_width < 1:
        raise ValueError("band_width must be in (0, 1)")
    rng = np.random.default_rng(seed)
    t = rng.random(n)
    offset = rng.uniform(-band_width / 2, band_width / 2, size=n)
    noise = rng.normal(0.0, jitter, size=(n, 2)) if jitter > 0 else np.zeros((n, 2))
    perp = np.array([-1.0, 1.0]) / np.sqrt(2.0)
    pts = np.stack([t, t], axis=1) + offset[:, None] * perp + noise
    return TspInstance(normalize_points(np.clip(pts, 0.0, 1.0)))


def sample_clustered_uniform(
    n: int,
    max_clusters: int,
    cluster_radius_range: tuple[float, float],
    uniform_probability: float,
    seed: int,
    num_clusters: int | None = None,
) -> TspInstance:
    """Uniform square clusters of random count and size; sometimes plain uniform.

    The uniform branch reuses ``sample_uniform(n, seed)`` exactly; the branch
    coin comes from a separate derived stream.
    """
    if max_clusters < 1:
        raise ValueError("max_clusters must be >= 1")
    lo, hi = cluster_radius_range
    if not 0 <= lo <= hi:
        raise ValueError("cluster_radius_range must satisfy 0 <= low <= high")
    coin = np.random.default_rng(derive_seed(seed, "clustered-uniform-branch")).random()
    if coin < uniform_probability:
        return sample_uniform(n, seed)
    rng = np.random.default_rng(seed)
    k = num_clusters if num_clusters is not None else int(rng.integers(1, max_clusters + 1))
    centers = rng.random((k, 2))
    radii = rng.uniform(lo, hi, size=k)
    counts = rng.multinomial(n, np.full(k, 1.0 / k))
    assign = np.repeat(np.arange(k), counts)
    offsets = rng.uniform(-1.0, 1.0, size=(n, 2)) * radii[assign, None]
    pts = np.clip(centers[assign] + offsets, 0.0, 1.0)
    return TspInstance(pts)


@dataclass(frozen=True)
class GeneratorConfig:
    kind: str = "uniform"
    n: int = 50
    seed: int = 0
    # gaussian_mixture; num_modes None -> uniform in [min_modes, max_modes]
    num_modes: int | None = None
    min_modes: int = 2
    max_modes: int = 6
    spread: float = 0.1
    working_size: float = 3.0
    # diagonal
    band_width: float = 0.1
    jitter: float = 0.02
    # clustered_uniform
    max_clusters: int = 8
    cluster_radius_range: tuple[float, float] = field(default=(0.05, 0.25))
    uniform_probability: float = 0.2

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown generator kind {self.kind!r}; choose from {KINDS}")
        if self.n < 2:
            raise ValueError("n must be >= 2")
        if self.kind == "gaussian_mixture":
            if self.spread <= 0:
                raise ValueError("spread must be > 0")
            if not 1 <= self.min_modes <= self.max_modes:
                raise ValueError("need 1 <= min_modes <= max_modes")
        if self.kind == "diagonal" and not 0 < self.band_width < 1:
            raise ValueError("band_width must be in (0, 1)")
        if self.kind == "diagonal" and self.jitter < 0:
            raise ValueError("jitter must be >= 0")
        if self.kind == "clustered_uniform":
            if self.max_clusters < 1:
                raise ValueError("max_clusters must be >= 1")
            if not 0 <= self.uniform_probability <= 1:
                raise ValueError("uniform_probability must be in [0, 1]")
        object.__setattr__(self, "cluster_radius_range", tuple(float(v) for v in self.cluster_radius_range))

    def params(self) -> dict:
        """Only the parameters that affect this kind, for manifests."""
        keys = {
            "uniform": (),
            "gaussian_mixture": ("num_modes", "min_modes", "max_modes", "spread", "working_size"),
            "diagonal": ("band_width", "jitter"),
            "clustered_uniform": ("max_clusters", "cluster_radius_range", "uniform_probability"),
        }[self.kind]
        d = asdict(self)
        return {k: (list(d[k]) if isinstance(d[k], tuple) else d[k]) for k in keys}

    def sample(self, seed: int) -> TspInstance:
        if self.kind == "uniform":
            return sample_uniform(self.n, seed)
        if self.kind == "gaussian_mixture":
            return sample_gaussian_mixture(
                self.n, self.num_modes, self.spread, seed, self.working_size, self.min_modes, self.max_modes
            )
        if self.kind == "diagonal":
            return sample_diagonal(self.n, self.band_width, self.jitter, seed)
        return sample_clustered_uniform(
            self.n, self.max_clusters, self.cluster_radius_range, self.uniform_probability, seed
        )


def instance_seeds(master_seed: int, count: int, label: str = "instance") -> list[int]:
    return [derive_seed(master_seed, label, i) for i in range(count)]


def sample_batch(config: GeneratorConfig, count: int, master_seed: int | None = None, label: str = "instance") -> np.ndarray:
    """(count, n, 2) array; instance i uses derive_seed(master_seed, label, i)."""
    master = config.seed if master_seed is None else master_seed
    return np.stack([config.sample(s).points for s in instance_seeds(master, count, label)])
