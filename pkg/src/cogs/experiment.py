"""Multi-seed, multi-mode study: warm up once per seed, fine-tune each mode, evaluate."""
from __future__ import annotations

import copy
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path


from .dataset import InstanceDataset, save_dataset
from .distributions import GeneratorConfig, sample_batch
from .hac import HacConfig
from .pipeline import (
    TrainConfig,
    aggregate_runs,
    cogs_train,
    evaluate,
    oracle_costs,
    save_json,
    validation_set,
    warm_up,
)
from .policy import AttentionPolicy, PolicyConfig, RolloutBaseline, make_optimizer, save_policy
from .seeding import derive_seed
from .vae import SequenceVAE, VaeConfig, VaeTrainConfig, save_vae, train_vae

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class StudyConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    vae: VaeConfig = field(default_factory=VaeConfig)
    vae_train: VaeTrainConfig = field(default_factory=VaeTrainConfig)
    modes: tuple[str, ...] = ("uniform", "hac", "cogs")
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    warmup_epochs: int = 5
    eval_size: int = 1000
    eval_kinds: tuple[str, ...] = ("clustered_uniform",)
    oracle: str = "local_search"
    oracle_restarts: int = 50
    eval_seed: int = 12345
    eval_stride: int = 0

    @classmethod
    def toy(cls, **overrides) -> "StudyConfig":
        """n = 20, width-32 policy, 50 epochs, 1,000-instance evaluation, 5 seeds."""
        base = cls(
            # eta = 1 overshoots at this scale: re-decoded tours change and hardness often drops
            train=TrainConfig(n=20, epochs=50, batch_size=128, batches_per_epoch=4, lr=1e-3, validation_size=256,
                              hac=HacConfig(step_size=0.1)),
            policy=PolicyConfig.toy(),
            vae=VaeConfig(n_points=20, latent_dim=32, hidden=64),
            vae_train=VaeTrainConfig(epochs=100, batch_size=100, samples_per_epoch=2000),
            warmup_epochs=40,
        )
        return replace(base, **overrides)


def eval_sets(cfg: StudyConfig) -> dict[str, InstanceDataset]:
    out = {}
    for kind in cfg.eval_kinds:
        gen = GeneratorConfig(kind=kind, n=cfg.train.n)
        pts = sample_batch(gen, cfg.eval_size, derive_seed(cfg.eval_seed, "eval", kind), label="eval")
        out[kind] = InstanceDataset(f"eval-{kind}", pts, cfg.eval_seed, {"kind": kind, **gen.params()})
    return out


def run_study(cfg: StudyConfig, run_dir: str | Path | None = None, progress=None) -> dict:
    """Returns {"reports": {kind: {mode: [GapReport per seed]}}, "summaries", "curves", "vaes", "elapsed"}."""
    run_dir = Path(run_dir) if run_dir else None
    t0 = time.time()
    sets = eval_sets(cfg)
    refs = {k: oracle_costs(ds, cfg.oracle, restarts=cfg.oracle_restarts) if cfg.oracle == "local_search"
            else oracle_costs(ds, cfg.oracle) for k, ds in sets.items()}
    if run_dir:
        run_dir.mkdir(parents=True, exist_ok=True)
        save_json(run_dir / "config.json", _config_dict(cfg))
        for k, ds in sets.items():
            save_dataset(ds, run_dir / f"{ds.name}.ds")
    reports = {k: {m: [] for m in cfg.modes} for k in sets}
    curves, vaes = [], {}
    for seed in cfg.seeds:
        tcfg = replace(cfg.train, seed=seed)
        val = validation_set(tcfg.n, tcfg.validation_size, seed)
        policy = AttentionPolicy(cfg.policy, seed=derive_seed(seed, "policy-init"))
        warm = warm_up(policy, val, tcfg, cfg.warmup_epochs)
        vae = None
        if any(m in ("cogs", "cogs_no_hac") for m in cfg.modes):
            vae = SequenceVAE(cfg.vae, seed=derive_seed(seed, "vae-init"))
            vae, _ = train_vae(vae, tcfg.clustered_config(), cfg.vae_train.epochs, cfg.vae_train.batch_size,
                               derive_seed(seed, "vae-train"), cfg.vae_train)
            vaes[seed] = vae
            if run_dir:
                save_vae(run_dir / f"vae-seed{seed}.ckpt", vae, {"seed": seed})
        for mode in cfg.modes:
            p = copy.deepcopy(warm.policy)
            b = RolloutBaseline(warm.baseline.policy)
            on_epoch = _curve_hook(cfg, sets, refs) if cfg.eval_stride else None
            mode_dir = run_dir / f"seed{seed}-{mode}" if run_dir else None
            if mode_dir:
                mode_dir.mkdir(parents=True, exist_ok=True)
            res = cogs_train(p, b, vae, val, tcfg, mode, make_optimizer(p, tcfg.lr), on_epoch=on_epoch, run_dir=mode_dir)
            curves.extend(res.logs)
            if mode_dir:
                save_policy(mode_dir / "policy.ckpt", res.policy, {"seed": seed, "mode": mode, "epoch": tcfg.epochs})
            for k, ds in sets.items():
                rep = evaluate(res.policy, ds, cfg.oracle, refs[k], seed=seed, epoch=tcfg.epochs, mode=mode)
                reports[k][mode].append(rep)
                if progress:
                    progress(f"seed={seed} mode={mode} {k}: mean={rep.mean:.4f} worst1%={rep.tails[1.0]:.4f} "
                             f"({time.time() - t0:.0f}s)")
    summaries = {k: aggregate_runs(r) for k, r in reports.items()}
    if run_dir:
        for k, s in summaries.items():
            save_json(run_dir / f"summary-{k}.json", s.to_dict())
    return {"reports": reports, "summaries": summaries, "curves": curves, "vaes": vaes, "elapsed": time.time() - t0}


def _curve_hook(cfg: StudyConfig, sets: dict, refs: dict):
    def on_epoch(epoch, policy):
        if epoch % cfg.eval_stride:
            return {}
        row = {"oracle": cfg.oracle}
        for k, ds in sets.items():
            r = evaluate(policy, ds, cfg.oracle, refs[k])
            row[f"{k}/mean"] = r.mean
            row.update({f"{k}/worst_{t}": v for t, v in r.tails.items()})
        return row

    return on_epoch


def _config_dict(cfg: StudyConfig) -> dict:
    d = asdict(cfg)
    d["train"] = cfg.train.to_dict()
    return d
