"""LSTM sequence-to-sequence VAE over x-sorted point sequences."""
from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np
import torch
from scipy.spatial import ConvexHull
from torch import nn

from .checkpoint import decode_checkpoint, encode_checkpoint, write_checkpoint
from .core import NumericalFailure, TspInstance
from .distributions import GeneratorConfig, sample_batch
from .seeding import derive_seed

VAE_VERSION = "lstm-seq2seq-v1"


def canonicalize_sequence(points) -> np.ndarray:
    """Sort ascending by x, ties by y."""
    pts = points.points if isinstance(points, TspInstance) else np.asarray(points, dtype=np.float64)
    return pts[np.lexsort((pts[:, 1], pts[:, 0]))]


def canonicalize_batch(points: np.ndarray) -> np.ndarray:
    return np.stack([canonicalize_sequence(p) for p in points])


@dataclass(frozen=True)
class VaeConfig:
    n_points: int = 50
    latent_dim: int = 32
    hidden: int = 128

    def __post_init__(self):
        if self.latent_dim < 2:
            raise ValueError("latent_dim must be >= 2")
        if self.n_points < 2:
            raise ValueError("n_points must be >= 2")


class SequenceVAE(nn.Module):
    """Encoder LSTM -> (mu, logvar); decoder LSTM conditioned on z emits one point per step.

    Decoder outputs pass through a sigmoid, so every decoded coordinate is in [0, 1].
    """

    def __init__(self, config: VaeConfig | None = None, seed: int = 0, dtype=torch.float32):
        super().__init__()
        self.config = config or VaeConfig()
        c = self.config
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            self.encoder = nn.LSTM(2, c.hidden, batch_first=True)
            self.to_mu = nn.Linear(c.hidden, c.latent_dim)
            self.to_logvar = nn.Linear(c.hidden, c.latent_dim)
            self.init_state = nn.Linear(c.latent_dim, 2 * c.hidden)
            self.decoder = nn.LSTM(2 + c.latent_dim, c.hidden, batch_first=True)
            self.to_point = nn.Linear(c.hidden, 2)
        self.to(dtype)

    @property
    def dtype(self):
        return self.to_point.weight.dtype

    def encode(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        _, (h, _) = self.encoder(x)
        h = h[-1]
        return self.to_mu(h), self.to_logvar(h)

    def _state(self, z):
        h0, c0 = torch.tanh(self.init_state(z)).chunk(2, dim=-1)
        return h0.unsqueeze(0).contiguous(), c0.unsqueeze(0).contiguous()

    def reconstruct(self, x: torch.Tensor, z: torch.Tensor, input_dropout: float = 0.0, generator=None) -> torch.Tensor:
        """Teacher-forced decode: step t sees the true point t-1.

        ``input_dropout`` zeroes that many of the teacher inputs at random,
        which forces the decoder to read z instead of copying its inputs.
        """
        B, n, _ = x.shape
        prev = torch.cat([x.new_zeros(B, 1, 2), x[:, :-1]], dim=1)
        if input_dropout > 0:
            keep = torch.rand((B, n, 1), generator=generator, dtype=x.dtype) >= input_dropout
            prev = prev * keep
        inp = torch.cat([prev, z.unsqueeze(1).expand(B, n, z.shape[-1])], dim=-1)
        out, _ = self.decoder(inp, self._state(z))
        return torch.sigmoid(self.to_point(out))

    def generate(self, z: torch.Tensor, n: int | None = None) -> torch.Tensor:
        """Free-running decode feeding back each emitted point."""
        n = n or self.config.n_points
        B = z.shape[0]
        state = self._state(z)
        prev = z.new_zeros(B, 1, 2)
        out = []
        for _ in range(n):
            h, state = self.decoder(torch.cat([prev, z.unsqueeze(1)], dim=-1), state)
            prev = torch.sigmoid(self.to_point(h))
            out.append(prev)
        return torch.cat(out, dim=1)


def gaussian_kl(mu: torch.Tensor, logvar: torch.Tensor) -> torch.Tensor:
    """Per-dimension KL(N(mu, e^logvar) || N(0, 1))."""
    return 0.5 * (mu**2 + logvar.exp() - 1.0 - logvar)


class ElboTerms(NamedTuple):
    loss: torch.Tensor
    reconstruction: torch.Tensor
    kl: torch.Tensor


def vae_elbo_loss(model: SequenceVAE, batch, kl_weight: float, generator: torch.Generator | None = None, input_dropout: float = 0.0) -> ElboTerms:
    """MSE over all coordinates + kl_weight * KL (summed over latent dims, averaged over batch)."""
    x = torch.as_tensor(np.asarray(batch), dtype=model.dtype) if not isinstance(batch, torch.Tensor) else batch.to(model.dtype)
    mu, logvar = model.encode(x)
    eps = torch.randn(mu.shape, generator=generator, dtype=mu.dtype)
    z = mu + (0.5 * logvar).exp() * eps
    recon = ((model.reconstruct(x, z, input_dropout, generator) - x) ** 2).mean()
    kl = gaussian_kl(mu, logvar).sum(dim=-1).mean()
    loss = recon + kl_weight * kl
    if not torch.isfinite(loss):
        raise NumericalFailure("non-finite VAE loss")
    return ElboTerms(loss, recon, kl)


def kl_schedule(epoch: int, epochs: int, kl_max: float = 1.0, warmup_fraction: float = 0.2) -> float:
    """Linear ramp 0 -> kl_max over the first `warmup_fraction` of epochs (epoch is 0-based)."""
    ramp = max(1, math.ceil(warmup_fraction * epochs))
    return kl_max * min(1.0, epoch / ramp)


@dataclass(frozen=True)
class VaeTrainConfig:
    epochs: int = 30
    batch_size: int = 100
    samples_per_epoch: int = 2000
    lr: float = 3e-3
    # KL ceiling well below 1: at 1 the latent collapses (KL -> 0, samples degenerate)
    kl_max: float = 1e-4
    warmup_fraction: float = 0.2
    max_grad_norm: float = 1.0
    input_dropout: float = 0.75


def train_vae(
    model: SequenceVAE,
    generator_config: GeneratorConfig,
    epochs: int,
    batch_size: int,
    seed: int,
    train_config: VaeTrainConfig | None = None,
):
    """Fresh clustered-uniform samples every epoch; returns (model, history rows)."""
    tc = replace(train_config or VaeTrainConfig(), epochs=epochs, batch_size=batch_size)
    if generator_config.n != model.config.n_points:
        raise ValueError(f"generator n={generator_config.n} but VAE expects {model.config.n_points} points")
    history = []
    if epochs <= 0:
        return model, history
    opt = torch.optim.Adam(model.parameters(), lr=tc.lr)
    noise = torch.Generator().manual_seed(derive_seed(seed, "vae-noise"))
    model.train()
    for epoch in range(epochs):
        beta = kl_schedule(epoch, epochs, tc.kl_max, tc.warmup_fraction)
        data = canonicalize_batch(sample_batch(generator_config, tc.samples_per_epoch, derive_seed(seed, "vae-data", epoch)))
        x_all = torch.as_tensor(data, dtype=model.dtype)
        order = torch.randperm(len(x_all), generator=noise)
        sums = np.zeros(3)
        batches = 0
        for s in range(0, len(x_all), batch_size):
            x = x_all[order[s:s + batch_size]]
            terms = vae_elbo_loss(model, x, beta, noise, tc.input_dropout)
            opt.zero_grad(set_to_none=True)
            terms.loss.backward()
            if tc.max_grad_norm:
                torch.nn.utils.clip_grad_norm_(model.parameters(), tc.max_grad_norm)
            opt.step()
            sums += [terms.loss.item(), terms.reconstruction.item(), terms.kl.item()]
            batches += 1
        loss, rec, kl = sums / batches
        history.append({"epoch": epoch + 1, "kl_weight": beta, "loss": loss, "reconstruction": rec, "kl": kl})
    model.eval()
    return model, history


@torch.no_grad()
def decode_latents(model: SequenceVAE, z) -> np.ndarray:
    z = torch.as_tensor(np.asarray(z), dtype=model.dtype)
    return model.generate(z).double().clamp(0.0, 1.0).numpy()


def sample_points(model: SequenceVAE, count: int, seed: int) -> np.ndarray:
    """Decode `count` prior draws z ~ N(0, I) into a (count, n, 2) array."""
    z = np.random.default_rng(seed).standard_normal((count, model.config.latent_dim))
    return decode_latents(model, z)


def sample_instances(model: SequenceVAE, count: int, seed: int) -> list[TspInstance]:
    return [TspInstance(p) for p in sample_points(model, count, seed)]


@torch.no_grad()
def posterior_means(model: SequenceVAE, points) -> np.ndarray:
    x = torch.as_tensor(canonicalize_batch(np.asarray(points)), dtype=model.dtype)
    return model.encode(x)[0].double().numpy()


class PcaProjection(NamedTuple):
    coords: dict  # label -> (m, 2)
    explained_variance_ratio: np.ndarray  # (2,), descending


def pca_2d(vectors: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Project onto the top two principal components; returns (coords, variance ratios)."""
    X = np.asarray(vectors, dtype=np.float64)
    if X.shape[0] < 3:
        raise ValueError("PCA needs at least 3 vectors")
    Xc = X - X.mean(axis=0)
    _, s, vt = np.linalg.svd(Xc, full_matrices=False)
    var = s**2
    total = var.sum()
    k = min(2, vt.shape[0])
    ratios = var[:k] / total if total > 0 else np.zeros(k)
    return Xc @ vt[:k].T, ratios


def latent_pca_projection(model: SequenceVAE, datasets: dict) -> PcaProjection:
    labels = list(datasets)
    if any(len(datasets[k]) == 0 for k in labels):
        raise ValueError("every dataset must be nonempty")
    mus = [posterior_means(model, datasets[k]) for k in labels]
    coords, ratios = pca_2d(np.concatenate(mus))
    out, s = {}, 0
    for k, m in zip(labels, mus):
        out[k] = coords[s:s + len(m)]
        s += len(m)
    return PcaProjection(out, ratios)


def hull_area(points2d: np.ndarray) -> float:
    return float(ConvexHull(np.asarray(points2d)).volume)


# --- checkpoints -------------------------------------------------------------

def vae_to_bytes(model: SequenceVAE, meta=None) -> bytes:
    meta = {"version": VAE_VERSION, **(meta or {})}
    return encode_checkpoint("vae", asdict(model.config), OrderedDict(model.state_dict()), meta)


def vae_from_bytes(data: bytes):
    header, arrays = decode_checkpoint(data)
    if header["kind"] != "vae":
        raise ValueError(f"checkpoint holds a {header['kind']!r}, not a VAE")
    model = SequenceVAE(VaeConfig(**header["config"]), dtype=next(iter(arrays.values())).dtype)
    model.load_state_dict(arrays)
    model.eval()
    return model, header


def save_vae(path, model, meta=None) -> None:
    meta = {"version": VAE_VERSION, **(meta or {})}
    write_checkpoint(path, "vae", asdict(model.config), OrderedDict(model.state_dict()), meta)


def load_vae(path):
    return vae_from_bytes(Path(path).read_bytes())
