"""`cogs` command-line entry point.

Exit codes: 0 success, 1 usage error, 2 runtime or numerical failure.
Every subcommand also accepts ``--config FILE`` (JSON object keyed by flag
names with dashes or underscores); flags given on the command line win.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np
import torch

from . import plotting
from .core import NumericalFailure
from .dataset import InstanceDataset, atomic_write_text, load_dataset, save_dataset
from .distributions import KINDS, GeneratorConfig, instance_seeds, sample_batch
from .hac import SURROGATES, HacConfig
from .oracle import ORACLES
from .pipeline import (
    MODES,
    VAE_MODES,
    GapReport,
    OracleFailure,
    TrainConfig,
    TrainingFailure,
    aggregate_runs,
    cogs_train,
    evaluate,
    format_gap_table,
    oracle_costs,
    oracle_results,
    save_json,
    validation_set,
    warm_up,
)
from .policy import AttentionPolicy, PolicyConfig, RolloutBaseline, greedy_tours, load_policy, save_policy
from .seeding import derive_seed
from .tsplib import build_tsplib50, scan_directory
from .vae import (
    SequenceVAE,
    VaeConfig,
    VaeTrainConfig,
    hull_area,
    latent_pca_projection,
    load_vae,
    sample_points,
    save_vae,
    train_vae,
)

log = logging.getLogger("cogs")

PROFILES = {"default": PolicyConfig, "toy": PolicyConfig.toy, "tiny": PolicyConfig.tiny}


class UsageError(Exception):
    pass


class RuntimeFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _need(args, *names):
    missing = [f"--{n.replace('_', '-')}" for n in names if getattr(args, n, None) is None]
    if missing:
        raise UsageError(f"missing required option(s): {', '.join(missing)}")


def _existing(path, what) -> Path:
    p = Path(path)
    if not p.exists():
        raise RuntimeFailure(f"missing input {what}: {p}")
    return p


def _write_jsonl(path: Path, rows) -> None:
    atomic_write_text(path, "".join(json.dumps(r, sort_keys=True) + "\n" for r in rows))


def _read_jsonl(path) -> list[dict]:
    return [json.loads(line) for line in _existing(path, "log").read_text().splitlines() if line.strip()]


# --- data ---------------------------------------------------------------------

def _generator_config(args) -> GeneratorConfig:
    kw = {"kind": args.kind, "n": args.n, "seed": args.seed}
    for name in ("num_modes", "min_modes", "max_modes", "spread", "working_size", "band_width", "jitter",
                 "max_clusters", "uniform_probability"):
        if getattr(args, name) is not None:
            kw[name] = getattr(args, name)
    if args.radius_min is not None or args.radius_max is not None:
        lo, hi = GeneratorConfig().cluster_radius_range
        kw["cluster_radius_range"] = (args.radius_min if args.radius_min is not None else lo,
                                      args.radius_max if args.radius_max is not None else hi)
    try:
        return GeneratorConfig(**kw)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_gen_data(args) -> int:
    _need(args, "kind", "count", "out")
    if args.count < 1:
        raise UsageError("--count must be >= 1")
    gen = _generator_config(args)
    seeds = instance_seeds(args.seed, args.count)
    ds = InstanceDataset(
        Path(args.out).stem,
        sample_batch(gen, args.count, args.seed),
        args.seed,
        {"kind": gen.kind, **gen.params()},
        [{"index": i, "seed": s} for i, s in enumerate(seeds)],
    )
    save_dataset(ds, args.out)
    print(f"wrote {args.count} {gen.kind} instances (n={gen.n}, seed={args.seed}) to {args.out}")
    return 0


def cmd_build_tsplib50(args) -> int:
    _need(args, "tsplib_dir", "out")
    directory = _existing(args.tsplib_dir, "TSPLib directory")
    accepted, skipped = scan_directory(directory, args.max_dimension)
    for name, reason in skipped:
        print(f"skipped {name}: {reason}", file=sys.stderr)
    if not accepted:
        raise RuntimeFailure(f"no eligible EUC_2D sources in {directory}; rejected: "
                             + "; ".join(f"{n} ({r})" for n, r in skipped))
    built = build_tsplib50(accepted, args.count, args.seed, args.max_dimension)
    ds = InstanceDataset(Path(args.out).stem, built.points, args.seed, {"kind": "tsplib50", "size": 50}, built.provenance)
    save_dataset(ds, args.out)
    manifest = {
        "master_seed": args.seed,
        "count": args.count,
        "sources": [{"name": s.name, "dimension": s.dimension} for s in sorted(accepted, key=lambda s: s.name)],
        "skipped": [{"file": n, "reason": r} for n, r in skipped],
        "instances": built.provenance,
    }
    save_json(_manifest_path(args.out), manifest)
    print(f"wrote {args.count} TSPLib50 instances from {len(accepted)} sources to {args.out}")
    return 0


def _manifest_path(out) -> Path:
    out = Path(out)
    return out.with_name(out.name + ".manifest.json")


# --- VAE ----------------------------------------------------------------------

def cmd_train_vae(args) -> int:
    _need(args, "run_dir")
    run = Path(args.run_dir)
    run.mkdir(parents=True, exist_ok=True)
    cfg = VaeConfig(n_points=args.n, latent_dim=args.latent_dim, hidden=args.hidden)
    tc = VaeTrainConfig(epochs=args.epochs, batch_size=args.batch_size, samples_per_epoch=args.samples_per_epoch,
                        lr=args.lr, kl_max=args.kl_max, input_dropout=args.input_dropout)
    gen = GeneratorConfig(kind="clustered_uniform", n=args.n)
    model = SequenceVAE(cfg, seed=derive_seed(args.seed, "vae-init"))
    model, hist = train_vae(model, gen, tc.epochs, tc.batch_size, derive_seed(args.seed, "vae-train"), tc)
    save_vae(run / "vae.ckpt", model, {"seed": args.seed, "epochs": tc.epochs})
    _write_jsonl(run / "vae_history.jsonl", hist)
    save_json(run / "vae_config.json", {"model": asdict(cfg), "train": asdict(tc), "generator": asdict(gen), "seed": args.seed})
    if hist:
        print(f"trained VAE for {tc.epochs} epochs: reconstruction {hist[-1]['reconstruction']:.5f}, kl {hist[-1]['kl']:.3f}")
    return 0


def cmd_sample_vae(args) -> int:
    _need(args, "vae", "count", "out")
    model, _ = load_vae(_existing(args.vae, "VAE checkpoint"))
    pts = sample_points(model, args.count, args.seed)
    ds = InstanceDataset(Path(args.out).stem, pts, args.seed, {"kind": "vae", "checkpoint": Path(args.vae).name})
    save_dataset(ds, args.out)
    print(f"wrote {args.count} VAE samples (n={model.config.n_points}, seed={args.seed}) to {args.out}")
    return 0


def cmd_latent_pca(args) -> int:
    _need(args, "vae", "dataset", "out")
    model, _ = load_vae(_existing(args.vae, "VAE checkpoint"))
    train = load_dataset(_existing(args.dataset, "dataset")).points[:args.count]
    inferred = sample_points(model, args.count, args.seed)
    proj = latent_pca_projection(model, {"training": train, "inference": inferred})
    out = {
        "explained_variance_ratio": proj.explained_variance_ratio.tolist(),
        "coords": {k: v.tolist() for k, v in proj.coords.items()},
        "hull_area": {k: hull_area(v) for k, v in proj.coords.items()},
        "count": args.count,
        "seed": args.seed,
    }
    save_json(args.out, out)
    print("hull areas: " + ", ".join(f"{k}={v:.4f}" for k, v in out["hull_area"].items()))
    return 0


# --- solver -------------------------------------------------------------------

def _train_config(args) -> TrainConfig:
    try:
        hac = HacConfig(step_size=args.step_size, temperature=args.temperature, surrogate=args.surrogate)
        return TrainConfig(n=args.n, epochs=args.epochs, batch_size=args.batch_size, batches_per_epoch=args.batches_per_epoch,
                           lr=args.lr, validation_size=args.validation_size, seed=args.seed, hac=hac,
                           checkpoint_stride=args.checkpoint_stride)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_train_solver(args) -> int:
    _need(args, "mode", "run_dir")
    if args.mode in VAE_MODES and args.vae is None:
        raise UsageError(f"--mode {args.mode} needs --vae")
    cfg = _train_config(args)
    run = Path(args.run_dir)
    run.mkdir(parents=True, exist_ok=True)
    for stale in (run / "log.jsonl", run / "warmup" / "log.jsonl"):
        stale.unlink(missing_ok=True)
    torch.manual_seed(derive_seed(args.seed, "cli"))
    vae = load_vae(_existing(args.vae, "VAE checkpoint"))[0] if args.vae else None
    if vae is not None and vae.config.n_points != cfg.n:
        raise UsageError(f"VAE decodes {vae.config.n_points} points but --n is {cfg.n}")
    val = validation_set(cfg.n, cfg.validation_size, args.seed)
    if args.init_policy:
        policy, _ = load_policy(_existing(args.init_policy, "policy checkpoint"))
        baseline = RolloutBaseline(policy)
    else:
        policy = AttentionPolicy(PROFILES[args.profile](), seed=derive_seed(args.seed, "policy-init"))
        (run / "warmup").mkdir(exist_ok=True)
        warm = warm_up(policy, val, cfg, args.warmup_epochs, run_dir=run / "warmup")
        policy, baseline = warm.policy, warm.baseline
        save_policy(run / "warmup.ckpt", policy, {"epoch": args.warmup_epochs, "mode": "warmup", "seed": args.seed})
    hook = _eval_hook(args) if args.eval_dataset else None
    save_json(run / "config.json", {"command": "train-solver", "args": _jsonable(vars(args)), "train": cfg.to_dict(),
                                    "policy": asdict(policy.config)})
    res = cogs_train(policy, baseline, vae, val, cfg, args.mode, on_epoch=hook, run_dir=run)
    save_policy(run / "policy.ckpt", res.policy, {"epoch": cfg.epochs, "mode": args.mode, "seed": args.seed})
    last = res.logs[-1] if res.logs else {}
    print(f"trained {args.mode} policy for {cfg.epochs} epochs; final validation cost {last.get('val_policy_cost', float('nan')):.4f}")
    return 0


def _eval_hook(args):
    eval_ds = load_dataset(_existing(args.eval_dataset, "evaluation dataset"))
    refs = oracle_costs(eval_ds, args.eval_oracle, **_oracle_kwargs(args.eval_oracle, args.restarts))

    def hook(epoch, pol):
        if epoch % args.eval_stride:
            return {}
        r = evaluate(pol, eval_ds, args.eval_oracle, refs)
        return {"oracle": args.eval_oracle, "eval/mean": r.mean, **{f"eval/worst_{k}": v for k, v in r.tails.items()}}

    return hook


def _oracle_kwargs(method, restarts):
    return {"restarts": restarts} if method == "local_search" else {}


def cmd_eval(args) -> int:
    _need(args, "dataset", "out")
    if (args.policy is None) == (args.solver_oracle is None):
        raise UsageError("give exactly one of --policy or --solver-oracle")
    ds = load_dataset(_existing(args.dataset, "dataset"))
    meta = {}
    if args.policy is not None:
        policy, header = load_policy(_existing(args.policy, "policy checkpoint"))
        meta = header["meta"]
    results = oracle_results(ds, args.oracle, **_oracle_kwargs(args.oracle, args.restarts))
    refs = np.array([r.length for r in results])
    if args.policy is not None:
        model_tours, model_costs = greedy_tours(policy, ds.points)
    else:
        solved = oracle_results(ds, args.solver_oracle, **_oracle_kwargs(args.solver_oracle, args.restarts))
        model_tours = [list(r.tour.order) for r in solved]
        model_costs = np.array([r.length for r in solved])
    report = GapReport((model_costs - refs) / refs, args.oracle,
                       seed=args.seed if args.seed is not None else meta.get("seed"), epoch=meta.get("epoch"),
                       dataset=ds.name, mode=args.mode or meta.get("mode") or args.solver_oracle or "")
    order = np.argsort(-report.gaps, kind="stable")[:args.worst]
    doc = report.to_dict()
    doc["worst"] = [{"index": int(i), "gap": float(report.gaps[i]), "model_tour": [int(v) for v in model_tours[i]],
                     "oracle_tour": [int(v) for v in results[i].tour.order]} for i in order]
    save_json(args.out, doc)
    tails = ", ".join(f"worst {k:g}% {100 * v:.3f}%" for k, v in report.tails.items())
    print(f"{ds.name}: mean gap {100 * report.mean:.3f}%, {tails} (oracle {args.oracle})")
    return 0


# --- plots --------------------------------------------------------------------

def _table_path(out) -> Path:
    return Path(out).with_suffix(".txt")


def cmd_plot_curves(args) -> int:
    _need(args, "logs", "metric", "out")
    rows = [r for path in args.logs for r in _read_jsonl(path)]
    table = plotting.plot_curves(rows, args.metric, args.out, ylabel=args.ylabel or args.metric, scale=args.scale)
    atomic_write_text(_table_path(args.out), plotting.format_rows(table, ["mode", "epoch", "mean", "std", "n"]))
    print(f"wrote {args.out}")
    return 0


def cmd_plot_table(args) -> int:
    _need(args, "reports", "out")
    reports = [GapReport.from_dict(json.loads(_existing(p, "report").read_text())) for p in args.reports]
    plotting.check_single_oracle([{"oracle": r.oracle} for r in reports])
    by_mode = {}
    for r in reports:
        by_mode.setdefault(r.mode or "model", []).append(r)
    summary = aggregate_runs(by_mode)
    text = format_gap_table(summary, args.label, model_names=plotting.MODE_LABELS)
    atomic_write_text(args.out, text)
    save_json(Path(args.out).with_suffix(".json"), {"aggregates": summary.aggregates, "ttests": summary.ttests})
    print(text, end="")
    return 0


def cmd_plot_scatter(args) -> int:
    _need(args, "records", "out")
    recs = json.loads(_existing(args.records, "records").read_text())
    records = [(r["size"], r["gap"]) for r in recs]
    data = plotting.plot_gap_vs_size(records, args.out, args.label)
    atomic_write_text(_table_path(args.out), f"pearson_r {data['pearson_r']:.6f}\n" + plotting.format_rows(data["rows"], ["size", "gap"]))
    print(f"pearson r = {data['pearson_r']:.4f}")
    return 0


def cmd_plot_worst(args) -> int:
    _need(args, "report", "dataset", "out")
    doc = json.loads(_existing(args.report, "report").read_text())
    if "worst" not in doc:
        raise RuntimeFailure(f"{args.report} carries no worst-instance tours (produce it with `cogs eval`)")
    ds = load_dataset(_existing(args.dataset, "dataset"))
    table = plotting.plot_worst_instances(ds.points, doc["worst"][:args.count], args.out)
    atomic_write_text(_table_path(args.out), plotting.format_rows(table, ["index", "gap"]))
    print(f"wrote {args.out}")
    return 0


def cmd_plot_gallery(args) -> int:
    _need(args, "datasets", "out")
    sets = {}
    for path in args.datasets:
        ds = load_dataset(_existing(path, "dataset"))
        sets[ds.generator.get("kind", ds.name)] = ds.points[:args.per_row]
    table = plotting.plot_gallery(sets, args.out, args.per_row)
    atomic_write_text(_table_path(args.out), plotting.format_rows(table, ["label", "index", "n"]))
    print(f"wrote {args.out}")
    return 0


def cmd_plot_latent(args) -> int:
    _need(args, "projection", "out")
    doc = json.loads(_existing(args.projection, "projection").read_text())
    table = plotting.plot_latent(doc["coords"], doc["explained_variance_ratio"], args.out)
    for row in table:
        row["hull_area"] = doc.get("hull_area", {}).get(row["label"])
    atomic_write_text(_table_path(args.out), plotting.format_rows(table, ["label", "count", "hull_area"]))
    print(f"wrote {args.out}")
    return 0


# --- study --------------------------------------------------------------------

def cmd_study(args) -> int:
    from .experiment import StudyConfig, run_study

    _need(args, "run_dir")
    base = StudyConfig.toy() if args.profile == "toy" else StudyConfig()
    kw = {}
    if args.seeds:
        kw["seeds"] = tuple(args.seeds)
    if args.modes:
        kw["modes"] = tuple(args.modes)
    if args.eval_stride is not None:
        kw["eval_stride"] = args.eval_stride
    if args.eval_size is not None:
        kw["eval_size"] = args.eval_size
    cfg = replace(base, **kw)
    res = run_study(cfg, args.run_dir, progress=print)
    for kind, summary in res["summaries"].items():
        print(format_gap_table(summary, kind, model_names=plotting.MODE_LABELS), end="")
    _write_jsonl(Path(args.run_dir) / "curves.jsonl", res["curves"])
    return 0


# --- parser -------------------------------------------------------------------

def _jsonable(d: dict) -> dict:
    return {k: v for k, v in d.items() if not callable(v) and not k.startswith("_")}


def build_parser() -> tuple[argparse.ArgumentParser, dict]:
    parser = _Parser(prog="cogs", description="Generative-sampling curriculum for neural TSP solvers.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    leaves = {}

    def leaf(subparsers, name, fn, help_):
        p = subparsers.add_parser(name, help=help_)
        p.add_argument("--config", help="JSON file of option defaults; flags win")
        p.set_defaults(_fn=fn, _leaf=name)
        leaves[name] = p
        return p

    p = leaf(sub, "gen-data", cmd_gen_data, "sample a synthetic dataset")
    p.add_argument("--kind", choices=KINDS)
    p.add_argument("--n", type=int, default=50)
    p.add_argument("--count", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    for name, typ in (("num-modes", int), ("min-modes", int), ("max-modes", int), ("spread", float), ("working-size", float),
                      ("band-width", float), ("jitter", float), ("max-clusters", int), ("radius-min", float),
                      ("radius-max", float), ("uniform-probability", float)):
        p.add_argument(f"--{name}", type=typ)

    p = leaf(sub, "build-tsplib50", cmd_build_tsplib50, "bootstrap 50-node instances from TSPLib files")
    p.add_argument("--tsplib-dir")
    p.add_argument("--count", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.add_argument("--max-dimension", type=int)

    vt = VaeTrainConfig()
    p = leaf(sub, "train-vae", cmd_train_vae, "train the sequence VAE on clustered-uniform data")
    p.add_argument("--run-dir")
    p.add_argument("--n", type=int, default=50)
    p.add_argument("--epochs", type=int, default=vt.epochs)
    p.add_argument("--batch-size", type=int, default=vt.batch_size)
    p.add_argument("--samples-per-epoch", type=int, default=vt.samples_per_epoch)
    p.add_argument("--latent-dim", type=int, default=VaeConfig().latent_dim)
    p.add_argument("--hidden", type=int, default=VaeConfig().hidden)
    p.add_argument("--lr", type=float, default=vt.lr)
    p.add_argument("--kl-max", type=float, default=vt.kl_max)
    p.add_argument("--input-dropout", type=float, default=vt.input_dropout)
    p.add_argument("--seed", type=int, default=0)

    p = leaf(sub, "sample-vae", cmd_sample_vae, "decode prior samples into a dataset")
    p.add_argument("--vae")
    p.add_argument("--count", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")

    p = leaf(sub, "latent-pca", cmd_latent_pca, "project training vs inference samples onto latent PCs")
    p.add_argument("--vae")
    p.add_argument("--dataset", help="training-distribution samples")
    p.add_argument("--count", type=int, default=150)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")

    tc, hc = TrainConfig(), HacConfig()
    p = leaf(sub, "train-solver", cmd_train_solver, "warm up and fine-tune a policy in one data mode")
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--run-dir")
    p.add_argument("--profile", choices=sorted(PROFILES), default="default")
    p.add_argument("--n", type=int, default=tc.n)
    p.add_argument("--epochs", type=int, default=tc.epochs)
    p.add_argument("--batch-size", type=int, default=tc.batch_size)
    p.add_argument("--batches-per-epoch", type=int, default=tc.batches_per_epoch)
    p.add_argument("--lr", type=float, default=tc.lr)
    p.add_argument("--validation-size", type=int, default=tc.validation_size)
    p.add_argument("--warmup-epochs", type=int, default=5)
    p.add_argument("--init-policy", help="start from this checkpoint instead of warming up")
    p.add_argument("--vae", help="VAE checkpoint (cogs modes)")
    p.add_argument("--step-size", type=float, default=hc.step_size)
    p.add_argument("--temperature", type=float, default=hc.temperature)
    p.add_argument("--surrogate", choices=SURROGATES, default=hc.surrogate)
    p.add_argument("--checkpoint-stride", type=int, default=0)
    p.add_argument("--eval-dataset")
    p.add_argument("--eval-oracle", choices=sorted(ORACLES), default="local_search")
    p.add_argument("--eval-stride", type=int, default=1)
    p.add_argument("--restarts", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)

    p = leaf(sub, "eval", cmd_eval, "gap report of a policy against an oracle")
    p.add_argument("--policy")
    p.add_argument("--solver-oracle", choices=sorted(ORACLES), help="score an oracle instead of a policy")
    p.add_argument("--dataset")
    p.add_argument("--oracle", choices=sorted(ORACLES), default="local_search")
    p.add_argument("--restarts", type=int, default=50)
    p.add_argument("--worst", type=int, default=6, help="keep tours of this many worst instances")
    p.add_argument("--mode")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")

    plot = sub.add_parser("plot", help="render figures and tables from logged rows")
    psub = plot.add_subparsers(dest="figure", parser_class=_Parser)
    p = leaf(psub, "curves", cmd_plot_curves, "metric vs epoch with across-seed std bands")
    p.add_argument("--logs", nargs="+")
    p.add_argument("--metric")
    p.add_argument("--ylabel")
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--out")
    p = leaf(psub, "table", cmd_plot_table, "mean ± std gap table from eval reports")
    p.add_argument("--reports", nargs="+")
    p.add_argument("--label", default="Dataset")
    p.add_argument("--out")
    p = leaf(psub, "scatter", cmd_plot_scatter, "gap vs instance size")
    p.add_argument("--records", help="JSON list of {size, gap}")
    p.add_argument("--label", default="")
    p.add_argument("--out")
    p = leaf(psub, "worst", cmd_plot_worst, "worst instances with oracle and model tours")
    p.add_argument("--report")
    p.add_argument("--dataset")
    p.add_argument("--count", type=int, default=6)
    p.add_argument("--out")
    p = leaf(psub, "gallery", cmd_plot_gallery, "sample instances per dataset")
    p.add_argument("--datasets", nargs="+")
    p.add_argument("--per-row", type=int, default=4)
    p.add_argument("--out")
    p = leaf(psub, "latent", cmd_plot_latent, "latent PCA scatter")
    p.add_argument("--projection")
    p.add_argument("--out")

    p = leaf(sub, "study", cmd_study, "multi-seed comparison of training modes")
    p.add_argument("--run-dir")
    p.add_argument("--profile", choices=("toy", "default"), default="toy")
    p.add_argument("--seeds", type=int, nargs="+")
    p.add_argument("--modes", nargs="+", choices=MODES)
    p.add_argument("--eval-stride", type=int)
    p.add_argument("--eval-size", type=int)
    return parser, leaves


def _apply_config(args, leaves, argv):
    path = getattr(args, "config", None)
    if not path:
        return args
    try:
        cfg = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise RuntimeFailure(f"missing input config file: {path}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise UsageError(f"config file {path} must hold a JSON object")
    p = leaves[args._leaf]
    known = {a.dest for a in p._actions}
    defaults = {}
    for k, v in cfg.items():
        dest = k.replace("-", "_")
        if dest not in known or dest in ("config", "help"):
            raise UsageError(f"unknown option {k!r} in config file {path}")
        defaults[dest] = v
    p.set_defaults(**defaults)
    return p.parse_args(argv[argv.index(args._leaf) + 1:], namespace=argparse.Namespace(**{
        k: v for k, v in vars(args).items() if k in ("verbose", "command", "figure", "_fn", "_leaf")}))


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, leaves = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "_fn", None):
            parser.print_help(sys.stderr)
            return 1
        args = _apply_config(args, leaves, argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
        return args._fn(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (RuntimeFailure, TrainingFailure, OracleFailure, NumericalFailure, plotting.MixedOracleError,
            FileNotFoundError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
