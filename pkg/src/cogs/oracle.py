"""Reference tour costs: brute force, Held-Karp, local search, and an external-solver file bridge."""
from __future__ import annotations

import itertools
import shutil
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np

from .core import (
    REL_TOL,
    InvalidTourError,
    TspInstance,
    Tour,
    canonical_cycle,
    check_permutation,
    distance_matrix,
)

BRUTE_FORCE_MAX_N = 10
HELD_KARP_MAX_N = 18
EXTERNAL_SCALE = 10**7


class SizeLimitError(ValueError):
    pass


@dataclass(frozen=True)
class OracleResult:
    tour: Tour
    method: str
    exact: bool

    @property
    def length(self) -> float:
        return self.tour.length


def _as_instance(instance) -> TspInstance:
    return instance if isinstance(instance, TspInstance) else TspInstance(instance)


def _result(instance: TspInstance, order, method: str, exact: bool) -> OracleResult:
    return OracleResult(Tour.of(instance, canonical_cycle(order)), method, exact)


def brute_force(instance) -> OracleResult:
    """Enumerate every distinct cycle (node 0 first, reversals skipped)."""
    instance = _as_instance(instance)
    n = instance.n
    if n > BRUTE_FORCE_MAX_N:
        raise SizeLimitError(f"brute force is limited to n <= {BRUTE_FORCE_MAX_N}, got {n}")
    if n <= 3:
        return _result(instance, range(n), "brute_force", True)
    d = distance_matrix(instance)
    # lexicographic enumeration; keep second < last to drop mirrored cycles
    perms = np.array([p for p in itertools.permutations(range(1, n)) if p[0] < p[-1]], dtype=np.int64)
    cycles = np.concatenate([np.zeros((len(perms), 1), dtype=np.int64), perms], axis=1)
    lengths = d[cycles, np.roll(cycles, -1, axis=1)].sum(axis=1)
    best = lengths.min()
    # ties (up to summation-order noise) resolve to the lexicographically smallest cycle
    k = int(np.flatnonzero(lengths <= best * (1 + 1e-12))[0])
    return _result(instance, cycles[k], "brute_force", True)


@numba.njit(cache=True)
def _held_karp_kernel(d):
    n = d.shape[0]
    m = n - 1
    full = 1 << m
    dp = np.full((full, m), np.inf)
    parent = np.full((full, m), -1, dtype=np.int64)
    for j in range(m):
        dp[1 << j, j] = d[0, j + 1]
    for mask in range(1, full):
        for j in range(m):
            if not (mask >> j) & 1:
                continue
            cur = dp[mask, j]
            if cur == np.inf:
                continue
            for k in range(m):
                if (mask >> k) & 1:
                    continue
                nxt = mask | (1 << k)
                cand = cur + d[j + 1, k + 1]
                if cand < dp[nxt, k]:
                    dp[nxt, k] = cand
                    parent[nxt, k] = j
    best = np.inf
    last = -1
    for j in range(m):
        cand = dp[full - 1, j] + d[j + 1, 0]
        if cand < best:
            best = cand
            last = j
    order = np.empty(n, dtype=np.int64)
    order[0] = 0
    mask = full - 1
    j = last
    for pos in range(n - 1, 0, -1):
        order[pos] = j + 1
        pj = parent[mask, j]
        mask = mask ^ (1 << j)
        j = pj
    return best, order


def held_karp(instance, max_n: int = HELD_KARP_MAX_N) -> OracleResult:
    """Exact optimum by subset dynamic programming; O(n^2 2^n) time, O(n 2^n) memory."""
    instance = _as_instance(instance)
    n = instance.n
    if n > max_n:
        raise SizeLimitError(f"Held-Karp is limited to n <= {max_n}, got {n}")
    if n <= 3:
        return _result(instance, range(n), "held_karp", True)
    _, order = _held_karp_kernel(distance_matrix(instance))
    return _result(instance, order, "held_karp", True)


# --- local search -----------------------------------------------------------

@numba.njit(cache=True)
def _cycle_length(d, tour):
    n = tour.shape[0]
    total = 0.0
    for i in range(n):
        total += d[tour[i], tour[(i + 1) % n]]
    return total


@numba.njit(cache=True)
def _nearest_neighbor(d, start):
    n = d.shape[0]
    tour = np.empty(n, dtype=np.int64)
    seen = np.zeros(n, dtype=np.bool_)
    tour[0] = start
    seen[start] = True
    for i in range(1, n):
        cur = tour[i - 1]
        best = -1
        bd = np.inf
        for j in range(n):
            if not seen[j] and d[cur, j] < bd:
                bd = d[cur, j]
                best = j
        tour[i] = best
        seen[best] = True
    return tour


@numba.njit(cache=True)
def _two_opt(d, tour):
    """First-improvement 2-opt until no improving move remains."""
    n = tour.shape[0]
    improved_any = False
    improved = True
    while improved:
        improved = False
        for i in range(n - 1):
            a = tour[i]
            b = tour[i + 1]
            for j in range(i + 2, n):
                c = tour[j]
                e = tour[(j + 1) % n]
                if e == a:
                    continue
                delta = d[a, c] + d[b, e] - d[a, b] - d[c, e]
                if delta < -1e-12:
                    lo = i + 1
                    hi = j
                    while lo < hi:
                        tmp = tour[lo]
                        tour[lo] = tour[hi]
                        tour[hi] = tmp
                        lo += 1
                        hi -= 1
                    improved = True
                    improved_any = True
                    a = tour[i]
                    b = tour[i + 1]
    return improved_any


@numba.njit(cache=True)
def _or_opt(d, tour):
    """Move segments of 1-3 consecutive nodes elsewhere (either orientation).

    Applies the first improving move found and returns True, else False.
    """
    n = tour.shape[0]
    for seg_len in range(1, 4):
        if seg_len > n - 3:
            break
        for i in range(n):
            # segment tour[i .. i+seg_len-1] (cyclic)
            first = tour[i]
            last = tour[(i + seg_len - 1) % n]
            prev = tour[(i - 1) % n]
            nxt = tour[(i + seg_len) % n]
            removal_gain = d[prev, first] + d[last, nxt] - d[prev, nxt]
            # candidate edges (p, q) outside the segment
            for k in range(n - seg_len - 1):
                p = tour[(i + seg_len + k) % n]
                q = tour[(i + seg_len + k + 1) % n]
                add_fwd = d[p, first] + d[last, q] - d[p, q]
                add_rev = d[p, last] + d[first, q] - d[p, q]
                if add_fwd < removal_gain - 1e-12 or add_rev < removal_gain - 1e-12:
                    reverse = add_rev < add_fwd
                    seg = np.empty(seg_len, dtype=np.int64)
                    for s in range(seg_len):
                        seg[s] = tour[(i + s) % n]
                    if reverse:
                        seg = seg[::-1].copy()
                    rest = np.empty(n - seg_len, dtype=np.int64)
                    for s in range(n - seg_len):
                        rest[s] = tour[(i + seg_len + s) % n]
                    # p sits at rest[k], q at rest[k+1]
                    pos = 0
                    for s in range(k + 1):
                        tour[pos] = rest[s]
                        pos += 1
                    for s in range(seg_len):
                        tour[pos] = seg[s]
                        pos += 1
                    for s in range(k + 1, n - seg_len):
                        tour[pos] = rest[s]
                        pos += 1
                    return True
    return False


@numba.njit(cache=True)
def _local_search_kernel(d, starts):
    n = d.shape[0]
    best_len = np.inf
    best = np.arange(n)
    for r in range(starts.shape[0]):
        tour = _nearest_neighbor(d, starts[r])
        while True:
            _two_opt(d, tour)
            moved = False
            while _or_opt(d, tour):
                moved = True
            if not moved:
                break
        length = _cycle_length(d, tour)
        if length < best_len - 1e-12:
            best_len = length
            best = tour.copy()
    return best_len, best


def local_search_starts(n: int, restarts: int, seed: int) -> np.ndarray:
    """Random construction start nodes; a prefix of the same stream for fewer restarts."""
    return np.random.default_rng(seed).integers(0, n, size=restarts)


def local_search_oracle(instance, restarts: int = 50, seed: int = 0) -> OracleResult:
    """Best of `restarts` nearest-neighbor + 2-opt + Or-opt runs. Not exact."""
    instance = _as_instance(instance)
    n = instance.n
    if n < 4:
        return _result(instance, range(n), "local_search", False)
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    starts = local_search_starts(n, restarts, seed)
    _, order = _local_search_kernel(distance_matrix(instance), starts)
    return _result(instance, order, "local_search", False)


def local_search_tours(points: np.ndarray, restarts: int = 10, seed: int = 0) -> np.ndarray:
    """Vectorised convenience over a (B, n, 2) batch; returns (B, n) tours."""
    points = np.asarray(points, dtype=np.float64)
    B, n, _ = points.shape
    out = np.empty((B, n), dtype=np.int64)
    rng = np.random.default_rng(seed)
    for b in range(B):
        if n < 4:
            out[b] = np.arange(n)
            continue
        starts = rng.integers(0, n, size=restarts)
        _, out[b] = _local_search_kernel(distance_matrix(points[b]), starts)
    return out


# --- external solver bridge -------------------------------------------------

def write_external_solver_file(instance, scale: int = EXTERNAL_SCALE, name: str = "cogs") -> str:
    """EUC_2D TSPLib text with coordinates multiplied by `scale` and rounded to integers."""
    instance = _as_instance(instance)
    if scale <= 0:
        raise ValueError("scale must be a positive integer")
    lines = [
        f"NAME : {name}",
        "TYPE : TSP",
        f"DIMENSION : {instance.n}",
        "EDGE_WEIGHT_TYPE : EUC_2D",
        "NODE_COORD_SECTION",
    ]
    scaled = np.rint(instance.points * scale).astype(np.int64)
    for i, (x, y) in enumerate(scaled, start=1):
        lines.append(f"{i} {x} {y}")
    lines.append("EOF")
    return "\n".join(lines) + "\n"


def parse_external_tour(text: str, n: int) -> list[int]:
    """Header line, then node indices (any whitespace layout). 0/1-based detected by range."""
    lines = [ln for ln in text.strip().splitlines() if ln.strip()]
    if len(lines) < 2:
        raise InvalidTourError("tour file needs a header line followed by node indices")
    try:
        values = [int(tok) for ln in lines[1:] for tok in ln.split()]
    except ValueError as exc:
        raise InvalidTourError(f"malformed tour file: {exc}") from None
    if values and values[-1] == -1:
        values = values[:-1]
    if len(values) != n:
        raise InvalidTourError(f"expected {n} node indices, found {len(values)}")
    lo, hi = min(values), max(values)
    if lo == 1 and hi == n:
        values = [v - 1 for v in values]
    elif not (lo == 0 and hi == n - 1):
        raise InvalidTourError(f"node indices span [{lo}, {hi}], neither 0- nor 1-based for n={n}")
    check_permutation(values, n)
    return values


def read_external_tour(text: str, instance) -> OracleResult:
    instance = _as_instance(instance)
    order = parse_external_tour(text, instance.n)
    return _result(instance, order, "external", True)


def external_solver_available(executable: str = "concorde") -> bool:
    return shutil.which(executable) is not None


def solve_external(instance, executable: str = "concorde", scale: int = EXTERNAL_SCALE) -> OracleResult:
    """Run a Concorde-compatible binary (`exe -o out.sol in.tsp`) and read its tour back."""
    instance = _as_instance(instance)
    exe = shutil.which(executable)
    if exe is None:
        raise FileNotFoundError(f"external solver {executable!r} not found on PATH")
    with tempfile.TemporaryDirectory() as tmp:
        tsp = Path(tmp) / "instance.tsp"
        sol = Path(tmp) / "instance.sol"
        tsp.write_text(write_external_solver_file(instance, scale))
        subprocess.run([exe, "-o", str(sol), str(tsp)], cwd=tmp, check=True, capture_output=True)
        return read_external_tour(sol.read_text(), instance)


ORACLES = {
    "brute_force": brute_force,
    "held_karp": held_karp,
    "local_search": local_search_oracle,
    "external": solve_external,
}


def solve(instance, method: str = "local_search", **kwargs) -> OracleResult:
    try:
        fn = ORACLES[method]
    except KeyError:
        raise ValueError(f"unknown oracle {method!r}; choose from {sorted(ORACLES)}") from None
    return fn(instance, **kwargs)


def lengths_match(a: float, b: float) -> bool:
    return bool(np.isclose(a, b, rtol=REL_TOL, atol=0.0))
