"""Hardness-adaptive curriculum: hardness score, gradient ascent on coordinates, re-weighting."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DegenerateInstanceError, NumericalFailure, batch_tour_lengths
from .oracle import local_search_tours
from .policy import AttentionPolicy, RolloutBaseline, greedy_tours

SURROGATES = ("rollout_baseline", "local_search")


@dataclass(frozen=True)
class HacConfig:
    step_size: float = 1.0
    temperature: float = 0.5
    surrogate: str = "rollout_baseline"
    steps: int = 1
    clamp: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        if self.step_size < 0:
            raise ValueError("step_size must be >= 0")
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")
        if self.surrogate not in SURROGATES:
            raise ValueError(f"surrogate must be one of {SURROGATES}")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")


class LocalSearchSurrogate:
    def __init__(self, restarts: int = 5, seed: int = 0):
        self.restarts = restarts
        self.seed = seed

    def tours(self, points: np.ndarray) -> np.ndarray:
        return local_search_tours(points, self.restarts, self.seed)


class PolicySurrogate:
    def __init__(self, policy: AttentionPolicy):
        self.policy = policy

    def tours(self, points: np.ndarray) -> np.ndarray:
        return greedy_tours(self.policy, points)[0]


def as_surrogate(surrogate):
    if isinstance(surrogate, AttentionPolicy):
        return PolicySurrogate(surrogate)
    if isinstance(surrogate, RolloutBaseline):
        return PolicySurrogate(surrogate.policy)
    if not hasattr(surrogate, "tours"):
        raise TypeError(f"surrogate must expose .tours(points), got {type(surrogate).__name__}")
    return surrogate


def _model_tours(model, points):
    if isinstance(model, AttentionPolicy):
        return greedy_tours(model, points)[0]
    return as_surrogate(model).tours(points)


def tour_length_grad(points: np.ndarray, tours: np.ndarray) -> np.ndarray:
    """d(cycle length)/d(coordinates) for fixed tours; zero-length edges contribute 0."""
    seq = np.take_along_axis(points, tours[..., None], axis=1)
    edge = seq - np.roll(seq, -1, axis=1)
    norm = np.linalg.norm(edge, axis=-1, keepdims=True)
    unit = np.divide(edge, norm, out=np.zeros_like(edge), where=norm > 0)
    g_seq = unit - np.roll(unit, 1, axis=1)
    grad = np.empty_like(points)
    np.put_along_axis(grad, tours[..., None], g_seq, axis=1)
    return grad


def fixed_tour_hardness(points, model_tours, surrogate_tours) -> np.ndarray:
    cm = batch_tour_lengths(points, model_tours)
    cs = batch_tour_lengths(points, surrogate_tours)
    bad = np.flatnonzero(cs <= 0)
    if len(bad):
        raise DegenerateInstanceError(f"surrogate tour has zero length (all points coincide) at index {bad[0]}")
    return (cm - cs) / cs


def fixed_tour_hardness_grad(points, model_tours, surrogate_tours) -> tuple[np.ndarray, np.ndarray]:
    """Hardness and its gradient with both tours held fixed."""
    cm = batch_tour_lengths(points, model_tours)
    cs = batch_tour_lengths(points, surrogate_tours)
    bad = np.flatnonzero(cs <= 0)
    if len(bad):
        raise DegenerateInstanceError(f"surrogate tour has zero length (all points coincide) at index {bad[0]}")
    gm = tour_length_grad(points, model_tours)
    gs = tour_length_grad(points, surrogate_tours)
    grad = gm / cs[:, None, None] - (cm / cs**2)[:, None, None] * gs
    return (cm - cs) / cs, grad


def hardness(model, surrogate, batch) -> np.ndarray:
    """(C_model - C_surrogate) / C_surrogate per instance, greedy tours for policies."""
    points = np.asarray(batch, dtype=np.float64)
    return fixed_tour_hardness(points, _model_tours(model, points), as_surrogate(surrogate).tours(points))


def hardness_gradient(model, surrogate, batch):
    points = np.asarray(batch, dtype=np.float64)
    h, grad = fixed_tour_hardness_grad(points, _model_tours(model, points), as_surrogate(surrogate).tours(points))
    bad = np.flatnonzero(~np.isfinite(grad).all(axis=(1, 2)))
    if len(bad):
        raise NumericalFailure("non-finite hardness gradient", index=int(bad[0]))
    return h, grad


def hac_step(model, surrogate, batch, config: HacConfig) -> np.ndarray:
    """X <- clip(X + eta * dH/dX) for `config.steps` ascent steps, tours re-decoded each step."""
    points = np.array(batch, dtype=np.float64, copy=True)
    if config.step_size == 0:
        return points
    lo, hi = config.clamp
    for _ in range(config.steps):
        _, grad = hardness_gradient(model, surrogate, points)
        points = np.clip(points + config.step_size * grad, lo, hi)
    return points


def gradient_magnitude_stats(model, surrogate, batch, config: HacConfig) -> tuple[float, float]:
    """(mean, median) over all elements of |eta * dH/dX|."""
    _, grad = hardness_gradient(model, surrogate, batch)
    mag = np.abs(config.step_size * grad)
    return float(mag.mean()), float(np.median(mag))


def reweight(scores, temperature: float) -> np.ndarray:
    """B * softmax(scores / temperature): mean weight 1, harder instances weigh more."""
    s = np.asarray(scores, dtype=np.float64) / temperature
    if not np.all(np.isfinite(s)):
        raise NumericalFailure("non-finite hardness score")
    e = np.exp(s - s.max())
    return e * (len(s) / e.sum())


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(x) != len(y) or len(x) < 3:
        raise ValueError("need at least 3 paired records")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = (dx * dx).sum(), (dy * dy).sum()
    if sxx == 0 or syy == 0:
        raise ValueError("correlation undefined for a constant column")
    return float(np.clip((dx * dy).sum() / np.sqrt(sxx * syy), -1.0, 1.0))


def gap_size_correlation(records) -> float:
    """Pearson r between instance size and gap over (size, gap) records."""
    recs = list(records)
    if len(recs) < 3:
        raise ValueError("need at least 3 records")
    sizes, gaps = zip(*recs)
    return pearson(sizes, gaps)
