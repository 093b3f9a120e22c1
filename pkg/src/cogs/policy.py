"""Attention encoder-decoder TSP policy trained with REINFORCE and a greedy rollout baseline."""
from __future__ import annotations

import copy
import math
from collections import OrderedDict
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
import torch
from torch import nn

from .checkpoint import decode_checkpoint, encode_checkpoint, write_checkpoint
from .core import NumericalFailure, TspInstance

POLICY_VERSION = "attention-v1"


@dataclass(frozen=True)
class PolicyConfig:
    embed_dim: int = 128
    n_layers: int = 3
    n_heads: int = 8
    ff_dim: int = 512
    tanh_clip: float = 10.0

    def __post_init__(self):
        if self.embed_dim % self.n_heads:
            raise ValueError("embed_dim must be divisible by n_heads")

    @classmethod
    def tiny(cls) -> "PolicyConfig":
        return cls(embed_dim=8, n_layers=1, n_heads=2, ff_dim=16)

    @classmethod
    def toy(cls) -> "PolicyConfig":
        return cls(embed_dim=32, n_layers=2, n_heads=4, ff_dim=64)


class MultiHeadAttention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.wq = nn.Linear(dim, dim, bias=False)
        self.wk = nn.Linear(dim, dim, bias=False)
        self.wv = nn.Linear(dim, dim, bias=False)
        self.wo = nn.Linear(dim, dim, bias=False)

    def forward(self, q, kv):
        B, nq, d = q.shape
        nk = kv.shape[1]
        hd = d // self.heads
        Q = self.wq(q).view(B, nq, self.heads, hd).transpose(1, 2)
        K = self.wk(kv).view(B, nk, self.heads, hd).transpose(1, 2)
        V = self.wv(kv).view(B, nk, self.heads, hd).transpose(1, 2)
        attn = torch.softmax(Q @ K.transpose(-1, -2) / math.sqrt(hd), dim=-1)
        return self.wo((attn @ V).transpose(1, 2).reshape(B, nq, d))


class EncoderLayer(nn.Module):
    def __init__(self, dim, heads, ff_dim):
        super().__init__()
        self.mha = MultiHeadAttention(dim, heads)
        self.norm1 = nn.LayerNorm(dim)
        self.ff = nn.Sequential(nn.Linear(dim, ff_dim), nn.ReLU(), nn.Linear(ff_dim, dim))
        self.norm2 = nn.LayerNorm(dim)

    def forward(self, h):
        h = self.norm1(h + self.mha(h, h))
        return self.norm2(h + self.ff(h))


class Embeddings(NamedTuple):
    nodes: torch.Tensor  # (B, n, d)
    graph: torch.Tensor  # (B, d)


class DecodeResult(NamedTuple):
    tours: torch.Tensor  # (B, n) long
    log_prob: torch.Tensor  # (B,)
    step_log_probs: torch.Tensor  # (B, n); column 0 is the forced start


class AttentionPolicy(nn.Module):
    """Self-attention encoder + masked context-attention pointer decoder.

    Tours always start at node 0 (a free choice for a cycle), so every
    decode makes n selections of which the first is forced.
    """

    def __init__(self, config: PolicyConfig | None = None, seed: int = 0, dtype=torch.float32):
        super().__init__()
        self.config = config or PolicyConfig()
        c = self.config
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            self.init_embed = nn.Linear(2, c.embed_dim)
            self.layers = nn.ModuleList(EncoderLayer(c.embed_dim, c.n_heads, c.ff_dim) for _ in range(c.n_layers))
            self.project_nodes = nn.Linear(c.embed_dim, 3 * c.embed_dim, bias=False)
            self.project_graph = nn.Linear(c.embed_dim, c.embed_dim, bias=False)
            self.project_step = nn.Linear(2 * c.embed_dim, c.embed_dim, bias=False)
            self.project_out = nn.Linear(c.embed_dim, c.embed_dim, bias=False)
        self.to(dtype)

    @property
    def dtype(self):
        return self.init_embed.weight.dtype

    def encode(self, points: torch.Tensor) -> Embeddings:
        h = self.init_embed(points)
        for layer in self.layers:
            h = layer(h)
        return Embeddings(h, h.mean(dim=1))

    def decode(
        self, emb: Embeddings, mode: str = "greedy", generator: torch.Generator | None = None, forced: torch.Tensor | None = None
    ) -> DecodeResult:
        """Greedy or sampled decode; ``forced`` (B, n) tours starting at 0 are scored instead."""
        if forced is None and mode not in ("greedy", "sample"):
            raise ValueError(f"mode must be 'greedy' or 'sample', got {mode!r}")
        nodes, graph = emb
        B, n, d = nodes.shape
        H = self.config.n_heads
        hd = d // H
        gk, gv, lk = self.project_nodes(nodes).chunk(3, dim=-1)
        gk = gk.view(B, n, H, hd).transpose(1, 2)  # (B, H, n, hd)
        gv = gv.view(B, n, H, hd).transpose(1, 2)
        fixed = self.project_graph(graph)
        ar = torch.arange(B)

        visited = torch.zeros(B, n, dtype=torch.bool)
        visited[:, 0] = True
        first = nodes[:, 0]
        last = first
        tours = [torch.zeros(B, dtype=torch.long)]
        step_lp = [torch.zeros(B, dtype=nodes.dtype)]
        for t in range(1, n):
            query = fixed + self.project_step(torch.cat([first, last], dim=-1))  # (B, d)
            qh = query.view(B, H, 1, hd)
            compat = (qh @ gk.transpose(-1, -2)) / math.sqrt(hd)  # (B, H, 1, n)
            compat = compat.masked_fill(visited[:, None, None, :], float("-inf"))
            glimpse = (torch.softmax(compat, dim=-1) @ gv).reshape(B, d)
            glimpse = self.project_out(glimpse)
            logits = (lk @ glimpse.unsqueeze(-1)).squeeze(-1) / math.sqrt(d)
            logits = self.config.tanh_clip * torch.tanh(logits)
            logits = logits.masked_fill(visited, float("-inf"))
            logp = torch.log_softmax(logits, dim=-1)
            if forced is not None:
                sel = forced[:, t]
            elif mode == "greedy":
                sel = logp.argmax(dim=-1)
            else:
                bad = torch.nonzero(torch.isnan(logp).any(dim=-1))
                if len(bad):
                    raise NumericalFailure("non-finite selection probabilities", index=int(bad[0]))
                sel = torch.multinomial(logp.exp(), 1, generator=generator).squeeze(-1)
            step_lp.append(logp[ar, sel])
            tours.append(sel)
            visited = visited.clone()
            visited[ar, sel] = True
            last = nodes[ar, sel]
        step = torch.stack(step_lp, dim=1)
        return DecodeResult(torch.stack(tours, dim=1), step.sum(dim=1), step)

    def forward(self, points, mode="greedy", generator=None) -> DecodeResult:
        return self.decode(self.encode(points), mode, generator)

    def log_likelihood(self, points, tours) -> torch.Tensor:
        return self.decode(self.encode(points), forced=torch.as_tensor(tours, dtype=torch.long)).log_prob


# --- batch helpers -----------------------------------------------------------

def as_batch(batch, dtype=torch.float32) -> torch.Tensor:
    """Stack instances/arrays into a (B, n, 2) tensor; mixed sizes are rejected."""
    if isinstance(batch, torch.Tensor):
        return batch.to(dtype)
    if isinstance(batch, np.ndarray):
        return torch.as_tensor(batch, dtype=dtype)
    arrays = [b.points if isinstance(b, TspInstance) else np.asarray(b) for b in batch]
    sizes = {a.shape[0] for a in arrays}
    if len(sizes) != 1:
        raise ValueError(f"all instances in a batch must have equal n, got sizes {sorted(sizes)}")
    return torch.as_tensor(np.stack(arrays), dtype=dtype)


def encode(policy: AttentionPolicy, batch) -> Embeddings:
    return policy.encode(as_batch(batch, policy.dtype))


def decode(policy: AttentionPolicy, embeddings: Embeddings, mode="greedy", seed: int | None = None) -> DecodeResult:
    gen = None
    if mode == "sample":
        gen = torch.Generator().manual_seed(0 if seed is None else seed)
    return policy.decode(embeddings, mode, gen)


def tour_costs(points: torch.Tensor, tours: torch.Tensor) -> torch.Tensor:
    seq = points.gather(1, tours.unsqueeze(-1).expand(-1, -1, 2))
    return (seq - seq.roll(-1, dims=1)).norm(dim=-1).sum(dim=1)


@torch.no_grad()
def greedy_tours(policy: AttentionPolicy, points, chunk: int = 1024) -> tuple[np.ndarray, np.ndarray]:
    """Greedy tours and their costs for a (B, n, 2) batch, evaluated in chunks.

    Costs are computed on float64 coordinates so gaps are not limited by
    the policy's working precision.
    """
    was_training = policy.training
    policy.eval()
    exact = as_batch(points, torch.float64)
    tours, costs = [], []
    for s in range(0, exact.shape[0], chunk):
        p = exact[s:s + chunk]
        t = policy(p.to(policy.dtype), "greedy").tours
        tours.append(t)
        costs.append(tour_costs(p, t))
    policy.train(was_training)
    return torch.cat(tours).numpy(), torch.cat(costs).numpy()


# --- baseline and loss -------------------------------------------------------

class RolloutBaseline:
    """Frozen policy copy whose greedy tour cost is the REINFORCE baseline."""

    def __init__(self, policy: AttentionPolicy, validation=None):
        self.policy = copy.deepcopy(policy)
        self.policy.eval()
        for p in self.policy.parameters():
            p.requires_grad_(False)
        self.validation = validation

    @torch.no_grad()
    def costs(self, points: torch.Tensor) -> torch.Tensor:
        return tour_costs(points, self.policy(points.to(self.policy.dtype), "greedy").tours).to(points.dtype)

    def tours(self, points: np.ndarray) -> np.ndarray:
        return greedy_tours(self.policy, points)[0]


class ReinforceOutput(NamedTuple):
    loss: torch.Tensor  # differentiable surrogate whose gradient is the policy gradient
    cost: torch.Tensor  # sampled tour costs (B,)
    baseline_cost: torch.Tensor  # (B,)
    log_prob: torch.Tensor  # (B,)
    tours: torch.Tensor


def reinforce_loss(policy, batch, baseline: RolloutBaseline, weights=None, generator=None) -> ReinforceOutput:
    """Weighted REINFORCE with a greedy-rollout baseline.

    loss = mean_i w_i * (C(pi_i) - C(pi_i^baseline)) * log p(pi_i), pi_i sampled.
    """
    points = as_batch(batch, policy.dtype)
    res = policy(points, "sample", generator)
    cost = tour_costs(points, res.tours).detach()
    base = baseline.costs(points).detach()
    for name, vals in (("tour cost", cost), ("baseline cost", base), ("log-probability", res.log_prob.detach())):
        bad = torch.nonzero(~torch.isfinite(vals))
        if len(bad):
            raise NumericalFailure(f"non-finite {name}", index=int(bad[0]))
    if weights is None:
        w = torch.ones_like(cost)
    else:
        w = torch.as_tensor(weights, dtype=cost.dtype)
    loss = (w * (cost - base) * res.log_prob).mean()
    return ReinforceOutput(loss, cost, base, res.log_prob, res.tours)


def make_optimizer(policy: AttentionPolicy, lr: float = 1e-4) -> torch.optim.Optimizer:
    return torch.optim.Adam(policy.parameters(), lr=lr)


def train_step(policy, optimizer, batch, baseline, weights=None, generator=None, max_grad_norm: float = 1.0) -> ReinforceOutput:
    policy.train()
    out = reinforce_loss(policy, batch, baseline, weights, generator)
    optimizer.zero_grad(set_to_none=True)
    out.loss.backward()
    if max_grad_norm is not None:
        torch.nn.utils.clip_grad_norm_(policy.parameters(), max_grad_norm)
    optimizer.step()
    return out


def mean_greedy_cost(policy: AttentionPolicy, points) -> float:
    return float(greedy_tours(policy, points)[1].mean())


def maybe_update_baseline(policy, baseline: RolloutBaseline, validation) -> tuple[RolloutBaseline, bool, float, float]:
    """Replace the baseline with a frozen copy iff the policy is strictly better on validation."""
    pts = validation.points if hasattr(validation, "points") else np.asarray(validation)
    if len(pts) == 0:
        raise ValueError("validation set is empty")
    policy_cost = mean_greedy_cost(policy, pts)
    baseline_cost = mean_greedy_cost(baseline.policy, pts)
    if policy_cost < baseline_cost:
        return RolloutBaseline(policy, validation), True, policy_cost, baseline_cost
    return baseline, False, policy_cost, baseline_cost


# --- checkpoints -------------------------------------------------------------

def policy_to_bytes(policy: AttentionPolicy, meta=None, rng=None) -> bytes:
    meta = {"version": POLICY_VERSION, **(meta or {})}
    return encode_checkpoint("policy", asdict(policy.config), OrderedDict(policy.state_dict()), meta, rng)


def policy_from_bytes(data: bytes):
    header, arrays = decode_checkpoint(data)
    if header["kind"] != "policy":
        raise ValueError(f"checkpoint holds a {header['kind']!r}, not a policy")
    dtype = next(iter(arrays.values())).dtype
    policy = AttentionPolicy(PolicyConfig(**header["config"]), dtype=dtype)
    policy.load_state_dict(arrays)
    return policy, header


def save_policy(path, policy, meta=None, rng=None) -> None:
    meta = {"version": POLICY_VERSION, **(meta or {})}
    write_checkpoint(path, "policy", asdict(policy.config), OrderedDict(policy.state_dict()), meta, rng)


def load_policy(path):
    return policy_from_bytes(Path(path).read_bytes())
