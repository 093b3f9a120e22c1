"""Training loop over the five data modes, evaluation harness and run aggregation."""
from __future__ import annotations

import itertools
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Callable

import numpy as np
import torch
from scipy import stats

from .core import NumericalFailure
from .dataset import InstanceDataset, atomic_write_text, points_digest
from .distributions import GeneratorConfig, sample_batch
from .hac import HacConfig, LocalSearchSurrogate, hardness, hac_step, reweight
from .oracle import ORACLES, SizeLimitError
from .policy import (
    AttentionPolicy,
    RolloutBaseline,
    greedy_tours,
    make_optimizer,
    maybe_update_baseline,
    save_policy,
    train_step,
)
from .seeding import derive_seed
from .vae import SequenceVAE, sample_points

log = logging.getLogger(__name__)

MODES = ("uniform", "hac", "cogs", "cogs_no_hac", "no_vae")
HAC_MODES = frozenset({"hac", "cogs", "no_vae"})
VAE_MODES = frozenset({"cogs", "cogs_no_hac"})
TAILS = (1.0, 0.5, 0.1)


class TrainingFailure(RuntimeError):
    def __init__(self, message, epoch, batch):
        super().__init__(f"{message} (epoch {epoch}, batch {batch})")
        self.epoch = epoch
        self.batch = batch


class OracleFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    n: int = 50
    epochs: int = 50
    batch_size: int = 256
    batches_per_epoch: int = 20
    lr: float = 1e-4
    max_grad_norm: float = 1.0
    validation_size: int = 512
    seed: int = 0
    hac: HacConfig = field(default_factory=HacConfig)
    clustered: GeneratorConfig | None = None
    surrogate_restarts: int = 5
    checkpoint_stride: int = 0

    def clustered_config(self) -> GeneratorConfig:
        return self.clustered or GeneratorConfig(kind="clustered_uniform", n=self.n)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["clustered"] = asdict(self.clustered_config())
        return d


# --- training data -----------------------------------------------------------

def make_training_data(
    mode: str,
    epoch_seed: int,
    vae: SequenceVAE | None,
    config: TrainConfig,
    count: int,
    policy: AttentionPolicy | None = None,
    surrogate=None,
) -> InstanceDataset:
    """The only place the five modes differ.

    uniform: uniform; hac: uniform + ascent; cogs: VAE decode + ascent;
    cogs_no_hac: VAE decode; no_vae: clustered uniform + ascent. Ascent
    modes also flag their batches for hardness re-weighting.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; choose from {MODES}")
    if mode in VAE_MODES and vae is None:
        raise ValueError(f"mode {mode!r} needs a trained VAE")
    if mode in ("uniform", "hac"):
        gen = GeneratorConfig(kind="uniform", n=config.n)
        points = sample_batch(gen, count, epoch_seed, label="train")
        source = {"kind": "uniform"}
    elif mode in VAE_MODES:
        points = sample_points(vae, count, epoch_seed)
        source = {"kind": "vae"}
    else:
        gen = config.clustered_config()
        points = sample_batch(gen, count, epoch_seed, label="train")
        source = {"kind": gen.kind, **gen.params()}
    decoded = points
    if mode in HAC_MODES:
        if policy is None or surrogate is None:
            raise ValueError(f"mode {mode!r} needs a policy and a surrogate for the ascent step")
        points = np.concatenate([
            hac_step(policy, surrogate, points[s:s + config.batch_size], config.hac)
            for s in range(0, count, config.batch_size)
        ])
    return InstanceDataset(
        name=f"train-{mode}",
        points=points,
        master_seed=epoch_seed,
        generator=source,
        meta={"mode": mode, "reweight": mode in HAC_MODES, "decoded_digest": points_digest(decoded)},
    )


def make_surrogate(config: TrainConfig, baseline: RolloutBaseline, epoch_seed: int):
    if config.hac.surrogate == "rollout_baseline":
        return baseline
    return LocalSearchSurrogate(config.surrogate_restarts, derive_seed(epoch_seed, "surrogate"))


def validation_set(n: int, size: int, seed: int) -> InstanceDataset:
    gen = GeneratorConfig(kind="uniform", n=n)
    return InstanceDataset("validation", sample_batch(gen, size, derive_seed(seed, "validation")), seed, {"kind": "uniform"})


# --- training loop -----------------------------------------------------------

@dataclass
class TrainResult:
    policy: AttentionPolicy
    baseline: RolloutBaseline
    logs: list
    optimizer: torch.optim.Optimizer


def cogs_train(
    policy: AttentionPolicy,
    baseline: RolloutBaseline,
    vae: SequenceVAE | None,
    validation: InstanceDataset,
    config: TrainConfig,
    mode: str = "cogs",
    optimizer=None,
    label: str = "train",
    on_epoch: Callable | None = None,
    run_dir: str | Path | None = None,
    data_fn: Callable = make_training_data,
    epoch_offset: int = 0,
) -> TrainResult:
    """Fine-tune `policy` for `config.epochs` epochs of freshly generated data.

    Each epoch: generate data for `mode`, REINFORCE over its batches (hardness
    re-weighted when the data asks for it), then replace the baseline if the
    policy is strictly better on `validation`. All randomness is keyed by
    (config.seed, label, epoch), never by mode, so modes see matching streams.
    """
    optimizer = optimizer or make_optimizer(policy, config.lr)
    logs = []
    run_dir = Path(run_dir) if run_dir else None
    count = config.batch_size * config.batches_per_epoch
    # rows from an earlier call (resume via epoch_offset) are kept
    logged = (run_dir / "log.jsonl").read_text() if run_dir and (run_dir / "log.jsonl").exists() else ""
    for e in range(config.epochs):
        epoch = epoch_offset + e + 1
        epoch_seed = derive_seed(config.seed, label, "data", epoch)
        sampler = torch.Generator().manual_seed(derive_seed(config.seed, label, "sampling", epoch))
        surrogate = make_surrogate(config, baseline, epoch_seed)
        batch_idx = -1
        try:
            data = data_fn(mode, epoch_seed, vae, config, count, policy, surrogate)
            costs, hards = [], []
            for batch_idx in range(config.batches_per_epoch):
                pts = data.points[batch_idx * config.batch_size:(batch_idx + 1) * config.batch_size]
                weights = None
                if data.meta.get("reweight"):
                    h = hardness(policy, surrogate, pts)
                    hards.append(float(h.mean()))
                    weights = reweight(h, config.hac.temperature)
                out = train_step(policy, optimizer, pts, baseline, weights, sampler, config.max_grad_norm)
                costs.append(float(out.cost.mean()))
        except NumericalFailure as exc:
            if run_dir:
                save_policy(run_dir / "failed.ckpt", policy, {"epoch": epoch, "batch": batch_idx, "mode": mode})
            raise TrainingFailure(str(exc), epoch, batch_idx) from exc
        baseline, replaced, pcost, bcost = maybe_update_baseline(policy, baseline, validation)
        row = {
            "epoch": epoch,
            "mode": mode,
            "seed": config.seed,
            "label": label,
            "train_cost": float(np.mean(costs)),
            "val_policy_cost": pcost,
            "val_baseline_cost": bcost,
            "baseline_replaced": replaced,
            "mean_hardness": float(np.mean(hards)) if hards else None,
            "data_digest": data.digest(),
        }
        if on_epoch is not None:
            row.update(on_epoch(epoch, policy) or {})
        logs.append(row)
        log.info("epoch %d mode=%s cost=%.4f val=%.4f/%.4f%s", epoch, mode, row["train_cost"], pcost, bcost,
                 " baseline<-policy" if replaced else "")
        if run_dir:
            logged += json.dumps(row, sort_keys=True) + "\n"
            atomic_write_text(run_dir / "log.jsonl", logged)
            if config.checkpoint_stride and epoch % config.checkpoint_stride == 0:
                save_policy(run_dir / f"policy-epoch{epoch:04d}.ckpt", policy, {"epoch": epoch, "mode": mode})
    return TrainResult(policy, baseline, logs, optimizer)


def warm_up(policy: AttentionPolicy, validation: InstanceDataset, config: TrainConfig, epochs: int, **kwargs) -> TrainResult:
    """Uniform-only pre-training that every fine-tuning mode starts from."""
    baseline = RolloutBaseline(policy)
    return cogs_train(policy, baseline, None, validation, replace(config, epochs=epochs), "uniform", label="warmup", **kwargs)


# --- evaluation --------------------------------------------------------------

def tail_count(k_percent: float, total: int) -> int:
    """ceil(k/100 * N) using exact rational arithmetic, at least 1."""
    return max(1, math.ceil(Fraction(str(k_percent)) * total / 100))


def tail_mean(gaps, k_percent: float) -> float:
    g = np.sort(np.asarray(gaps, dtype=np.float64))[::-1]
    return float(g[:tail_count(k_percent, len(g))].mean())


@dataclass
class GapReport:
    gaps: np.ndarray
    oracle: str
    seed: int | None = None
    epoch: int | None = None
    dataset: str = ""
    mode: str = ""
    mean: float = field(init=False)
    tails: dict = field(init=False)

    def __post_init__(self):
        self.gaps = np.asarray(self.gaps, dtype=np.float64)
        if self.gaps.size == 0:
            raise ValueError("a gap report needs at least one instance")
        self.mean = float(self.gaps.mean())
        self.tails = {k: tail_mean(self.gaps, k) for k in TAILS}

    def metric(self, name: str) -> float:
        if name == "mean":
            return self.mean
        return self.tails[float(name.removeprefix("worst_"))]

    def check_monotone(self) -> bool:
        t = self.tails
        return t[0.1] >= t[0.5] >= t[1.0] >= self.mean - 1e-15

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "epoch": self.epoch,
            "gaps": [float(g) for g in self.gaps],
            "mean": self.mean,
            "mode": self.mode,
            "oracle": self.oracle,
            "seed": self.seed,
            "tails": {f"worst_{k}": v for k, v in self.tails.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GapReport":
        return cls(np.asarray(d["gaps"]), d["oracle"], d.get("seed"), d.get("epoch"), d.get("dataset", ""), d.get("mode", ""))


METRICS = ("mean", "worst_1.0", "worst_0.5", "worst_0.1")


def oracle_results(dataset: InstanceDataset, method: str = "local_search", **kwargs) -> list:
    """One OracleResult per instance; failures name the instance's provenance."""
    if method not in ORACLES:
        raise ValueError(f"unknown oracle {method!r}")
    fn = ORACLES[method]
    out = []
    for i, pts in enumerate(dataset.points):
        try:
            out.append(fn(pts, **kwargs))
        except (SizeLimitError, ValueError, OSError) as exc:
            prov = dataset.provenance[i] if i < len(dataset.provenance) else {"index": i}
            raise OracleFailure(f"oracle {method} failed on {dataset.name} instance {prov}: {exc}") from exc
    return out


def oracle_costs(dataset: InstanceDataset, method: str = "local_search", **kwargs) -> np.ndarray:
    return np.array([r.length for r in oracle_results(dataset, method, **kwargs)], dtype=np.float64)


def evaluate(
    policy: AttentionPolicy,
    dataset: InstanceDataset,
    oracle: str = "local_search",
    reference_costs: np.ndarray | None = None,
    seed: int | None = None,
    epoch: int | None = None,
    mode: str = "",
    **oracle_kwargs,
) -> GapReport:
    """Greedy-decode every instance and compare against oracle costs."""
    if len(dataset) == 0:
        raise ValueError("evaluation dataset is empty")
    if reference_costs is None:
        reference_costs = oracle_costs(dataset, oracle, **oracle_kwargs)
    _, model_costs = greedy_tours(policy, dataset.points)
    gaps = (model_costs - reference_costs) / reference_costs
    return GapReport(gaps, oracle, seed, epoch, dataset.name, mode)


# --- aggregation ---------------------------------------------------------------

def welch_ttest(a, b) -> tuple[float, float, float]:
    """Unequal-variance two-sample t-test: (t, degrees of freedom, two-sided p)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if len(a) < 2 or len(b) < 2:
        raise ValueError("each group needs at least 2 samples")
    va, vb = a.var(ddof=1) / len(a), b.var(ddof=1) / len(b)
    diff = a.mean() - b.mean()
    se2 = va + vb
    if se2 == 0:
        if diff == 0:
            return 0.0, float(len(a) + len(b) - 2), 1.0
        return math.copysign(math.inf, diff), float(len(a) + len(b) - 2), 0.0
    t = diff / math.sqrt(se2)
    df = se2**2 / (va**2 / (len(a) - 1) + vb**2 / (len(b) - 1))
    p = 2.0 * stats.t.sf(abs(t), df)
    return float(t), float(df), float(min(1.0, p))


@dataclass
class RunSummary:
    reports: dict  # mode -> list[GapReport]
    aggregates: dict = field(default_factory=dict)  # mode -> metric -> {mean, std, n, flag}
    ttests: dict = field(default_factory=dict)  # "a vs b" -> metric -> {t, df, p}

    def to_dict(self) -> dict:
        return {
            "aggregates": self.aggregates,
            "reports": {m: [r.to_dict() for r in rs] for m, rs in self.reports.items()},
            "ttests": self.ttests,
        }


def aggregate_runs(reports: dict) -> RunSummary:
    """Mean and sample std per mode/metric across seeds, plus Welch t-tests between modes."""
    summary = RunSummary({m: list(rs) for m, rs in reports.items()})
    values = {m: {k: np.array([r.metric(k) for r in rs]) for k in METRICS} for m, rs in reports.items()}
    for m, per in values.items():
        summary.aggregates[m] = {}
        for k, v in per.items():
            single = len(v) < 2
            summary.aggregates[m][k] = {
                "mean": float(v.mean()),
                "std": None if single else float(v.std(ddof=1)),
                "n": int(len(v)),
                "flag": "single seed: deviation undefined" if single else None,
            }
    for a, b in itertools.combinations(list(values), 2):
        key = f"{a} vs {b}"
        summary.ttests[key] = {}
        for k in METRICS:
            try:
                t, df, p = welch_ttest(values[a][k], values[b][k])
                summary.ttests[key][k] = {"t": t, "df": df, "p": p}
            except ValueError as exc:
                summary.ttests[key][k] = {"t": None, "df": None, "p": None, "flag": str(exc)}
    return summary


def format_gap_table(summary: RunSummary, dataset_label: str, metrics=METRICS, model_names=None) -> str:
    """Plain-text table, one row per (metric, mode): ``Dataset | Model | Gap (%)`` with mean ± std."""
    names = model_names or {}
    labels = {"mean": dataset_label, **{f"worst_{k}": f"{dataset_label} Worst {k:g}%" for k in TAILS}}
    rows = [("Dataset", "Model", "Gap (%)")]
    for k in metrics:
        for mode, agg in summary.aggregates.items():
            cell = agg[k]
            std = "n/a" if cell["std"] is None else f"{100 * cell['std']:.3f}"
            rows.append((labels[k], names.get(mode, mode), f"{100 * cell['mean']:.3f} ± {std}"))
    widths = [max(len(r[i]) for r in rows) for i in range(3)]
    lines = [" | ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
    lines.insert(1, "-+-".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def save_json(path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, sort_keys=True, indent=1) + "\n")
