"""Experiment runner: builds datasets, trains per seed, writes artifacts.

Subcommands: ``run`` (execute the config's mode), ``inspect`` (hierarchy
statistics and cross-scale loss gaps), ``theorem`` (least-squares bound
study), ``flops`` (cost model report).  Every invocation writes a
``manifest.json`` with the config hash; ``run`` also writes per-seed metric
CSVs and a ``summary.json`` aggregating seeds.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import io as msio
from .coarsening import CoarsenPlan, build_hierarchy
from .config import ConfigError, DatasetConfig, ExperimentConfig, load_config
from .datasets import QtipsSpec, gen_knn_cloud, gen_sbm, qtips_dataset
from .engine import init_model, load_weights, model_flops_per_pass
from .graphs import GraphData, LabelVector, Masks
from .coarsening import random_select
from .telescope import TelescopeConfig, loss_gap_gamma, train_ms_gradient
from .engine import forward, nll_loss
from .theory import LinearLSProblem, run_theorem_trials
from .training import (
    MetricLog,
    TrainSchedule,
    coarse_to_fine,
    doubling_schedule,
    sub_to_full,
    train_single_level,
)


def build_dataset(ds: DatasetConfig) -> GraphData:
    p = dict(ds.params)
    if ds.kind == "sbm":
        return gen_sbm(
            n=p.get("n", 256),
            blocks=p.get("blocks", 4),
            p_in=p.get("p_in", 0.1),
            p_out=p.get("p_out", 0.01),
            feature_noise=p.get("feature_noise", 1.0),
            seed=p.get("seed", 0),
        )
    if ds.kind == "qtips":
        spec = QtipsSpec(
            num_graphs=p.get("num_graphs", 10),
            grid_side=p.get("grid_side", 16),
            rod_length=p.get("rod_length", 7),
            rods_per_graph=p.get("rods_per_graph", 10),
            knn_k=p.get("knn_k", 4),
            seed=p.get("seed", 0),
        )
        return qtips_dataset(
            spec,
            p.get("train_graphs", max(spec.num_graphs - 2, 1)),
            p.get("val_graphs", 1),
            p.get("test_graphs", 1),
        )
    if ds.kind == "knn":
        # Structure-only dataset (single dummy class): usable for inspection
        # and cost reports, not for classification training.
        g, coords = gen_knn_cloud(
            p.get("n", 256), p.get("d", 2), p.get("k", 4), p.get("seed", 0)
        )
        n = g.num_nodes
        return GraphData(
            g,
            coords.points.copy(),
            LabelVector(np.zeros(n, dtype=np.int64), 1),
            Masks(np.ones(n, bool), np.ones(n, bool), np.ones(n, bool)),
            coords,
        )
    if ds.kind == "files":
        g = msio.load_edge_list(p["edge_list"], p.get("num_nodes"))
        x = msio.load_features_csv(p["features"])
        y = msio.load_labels_csv(p["labels"], p.get("num_classes"))
        masks = msio.load_masks_csv(p["masks"], g.num_nodes)
        return GraphData(g, x, y, masks)
    raise ConfigError(f"dataset.kind: unknown kind {ds.kind!r}")


def derive_seeds(seed: int) -> tuple[int, int, int]:
    """(model, plan, schedule) seeds from one experiment seed."""
    state = np.random.SeedSequence(seed).generate_state(3)
    return int(state[0]), int(state[1]), int(state[2])


def _resolve_epochs(cfg: ExperimentConfig, levels: int) -> tuple[int, ...]:
    sched = cfg.schedule
    if sched.epochs is not None:
        if len(sched.epochs) != levels:
            raise ConfigError(
                f"schedule.epochs: {len(sched.epochs)} budgets for {levels} levels"
            )
        return tuple(int(e) for e in sched.epochs)
    return doubling_schedule(sched.fine_epochs, levels)


def _make_plan(cfg: ExperimentConfig, plan_seed: int) -> CoarsenPlan:
    p = cfg.plan
    power = tuple(p.power) if isinstance(p.power, list) else p.power
    hops = tuple(p.ego_hops) if p.ego_hops is not None else None
    return CoarsenPlan(
        levels=p.levels,
        ratio=p.ratio,
        power=power,
        policy=p.policy,
        ego_hops=hops,
        seed=plan_seed,
        max_edge_growth=p.max_edge_growth,
    )


def run_one(cfg: ExperimentConfig, seed: int, out_dir: Path,
            timing: bool = False) -> dict:
    """Execute the config's training mode for one seed; writes the metric CSV."""
    data = build_dataset(cfg.dataset)
    model_seed, plan_seed, sched_seed = derive_seeds(seed)
    channels = cfg.model.channels(data.x.shape[1], data.y.num_classes)
    model = init_model(
        cfg.model.kind,
        channels,
        np.random.default_rng(model_seed),
        cfg.model.normalize,
        cfg.model.gin_eps,
    )
    lr, eval_every = cfg.schedule.learning_rate, cfg.schedule.eval_every

    t0 = time.perf_counter()
    if cfg.mode == "baseline":
        if cfg.plan is not None and cfg.plan.levels > 1:
            warnings.warn("baseline mode ignores the coarsening plan")
        epochs = _resolve_epochs(cfg, 1)
        schedule = TrainSchedule(epochs, lr, eval_every, sched_seed)
        model, log = train_single_level(model, data, schedule)
    elif cfg.mode == "coarse2fine":
        plan = _make_plan(cfg, plan_seed)
        hierarchy = build_hierarchy(data, plan)
        schedule = TrainSchedule(_resolve_epochs(cfg, plan.levels), lr,
                                 eval_every, sched_seed)
        model, log = coarse_to_fine(model, hierarchy, schedule)
    elif cfg.mode == "sub2full":
        plan = _make_plan(cfg, plan_seed)
        schedule = TrainSchedule(_resolve_epochs(cfg, plan.levels), lr,
                                 eval_every, sched_seed)
        model, log = sub_to_full(model, data, plan, schedule)
    elif cfg.mode == "msgrad":
        t = cfg.telescope
        tcfg = TelescopeConfig(
            levels=t.levels,
            samples_per_term=tuple(t.samples_per_term)
            if t.samples_per_term else None,
            retain_fraction=t.retain_fraction,
            switch_epoch=t.switch_epoch,
        )
        schedule = TrainSchedule(_resolve_epochs(cfg, 1), lr, eval_every,
                                 sched_seed)
        model, log = train_ms_gradient(model, data, tcfg, schedule)
    else:
        raise ConfigError(f"mode {cfg.mode!r} is not a training mode")
    wall_ms = int((time.perf_counter() - t0) * 1000)

    csv_path = out_dir / f"metrics_seed{seed}.csv"
    log.to_csv(csv_path, include_timing=timing)
    final = log.final
    return {
        "seed": seed,
        "test_acc": final.test_acc,
        "val_acc": final.val_acc,
        "train_loss": final.train_loss,
        "total_flops": final.cum_flops,
        "wall_ms": wall_ms,
        "metrics_csv": csv_path.name,
    }


def _worker(cfg_dict: dict, seed: int, out_dir: str, timing: bool) -> dict:
    cfg = ExperimentConfig.from_dict(cfg_dict)
    return run_one(cfg, seed, Path(out_dir), timing)


def _stats(values) -> dict:
    arr = np.asarray(values, dtype=np.float64)
    return {
        "mean": float(arr.mean()),
        "std": float(arr.std()),  # population std over seeds
        "per_seed": [float(v) for v in arr],
    }


def write_manifest(cfg: ExperimentConfig, out_dir: Path, seeds: list[int],
                   artifacts: list[str]) -> None:
    canonical = json.dumps(cfg.to_dict(), sort_keys=True)
    try:
        from importlib.metadata import version

        pkg_version = version("msgnn")
    except Exception:
        pkg_version = "unknown"
    manifest = {
        "config": cfg.to_dict(),
        "config_sha256": hashlib.sha256(canonical.encode()).hexdigest(),
        "seeds": seeds,
        "package_version": pkg_version,
        "artifacts": sorted(artifacts),
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2))


def run_experiment(cfg: ExperimentConfig, out_dir: Path, jobs: int = 1,
                   timing: bool = False) -> dict:
    msio.ensure_dir(out_dir)
    seeds = cfg.seeds
    if jobs > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(
                pool.map(
                    _worker,
                    [cfg.to_dict()] * len(seeds),
                    seeds,
                    [str(out_dir)] * len(seeds),
                    [timing] * len(seeds),
                )
            )
    else:
        rows = [run_one(cfg, s, out_dir, timing) for s in seeds]

    summary = {
        "mode": cfg.mode,
        "seeds": seeds,
        "num_runs": len(rows),
        "test_acc": _stats([r["test_acc"] for r in rows]),
        "val_acc": _stats([r["val_acc"] for r in rows]),
        "train_loss": _stats([r["train_loss"] for r in rows]),
        "total_flops": _stats([r["total_flops"] for r in rows]),
        "wall_ms": _stats([r["wall_ms"] for r in rows]),
    }
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2))
    write_manifest(cfg, out_dir, seeds,
                   [r["metrics_csv"] for r in rows] + ["summary.json"])
    return summary


def coarsen_inspect(cfg: ExperimentConfig, out_dir: Path,
                    weights_prefix: str | None = None) -> dict:
    """Per-level size/edge statistics and cross-scale loss gaps."""
    msio.ensure_dir(out_dir)
    data = build_dataset(cfg.dataset)
    seed = cfg.seeds[0]
    model_seed, plan_seed, _ = derive_seeds(seed)
    plan = _make_plan(cfg, plan_seed)
    hierarchy = build_hierarchy(data, plan)
    if weights_prefix:
        model = load_weights(weights_prefix)
    else:
        channels = cfg.model.channels(data.x.shape[1], data.y.num_classes)
        model = init_model(cfg.model.kind, channels,
                           np.random.default_rng(model_seed),
                           cfg.model.normalize, cfg.model.gin_eps)

    rows = []
    fine_edges = max(hierarchy[0].data.graph.num_undirected_edges, 1)
    fine_loss = None
    prev_loss = None
    prev_edges = fine_edges
    for r, level in enumerate(hierarchy.levels, start=1):
        g = level.data.graph
        logits, _ = forward(model, g, level.data.x)
        loss = nll_loss(logits, level.data.y, level.data.masks.train)
        if fine_loss is None:
            fine_loss = loss
            prev_loss = loss
        edges = g.num_undirected_edges
        rows.append(
            {
                "level": r,
                "policy": level.policy,
                "power": level.power,
                "nodes": g.num_nodes,
                "edges": edges,
                "edge_ratio_vs_parent": edges / max(prev_edges, 1),
                "edge_ratio_vs_fine": edges / fine_edges,
                "train_loss": loss,
                "gamma_vs_parent": loss_gap_gamma(loss, prev_loss)
                if prev_loss > 0 else 0.0,
                "gamma_vs_fine": loss_gap_gamma(loss, fine_loss)
                if fine_loss > 0 else 0.0,
            }
        )
        prev_loss = loss
        prev_edges = edges

    report = {"seed": seed, "plan": cfg.plan.to_dict(), "levels": rows}
    (out_dir / f"inspect_seed{seed}.json").write_text(json.dumps(report, indent=2))
    write_manifest(cfg, out_dir, [seed], [f"inspect_seed{seed}.json"])

    header = (
        f"{'level':>5} {'policy':>8} {'p':>2} {'nodes':>7} {'edges':>8} "
        f"{'e/parent':>9} {'e/fine':>8} {'loss':>12} {'gap/parent':>11} {'gap/fine':>9}"
    )
    print(header)
    for row in rows:
        print(
            f"{row['level']:>5} {row['policy']:>8} {row['power']:>2} "
            f"{row['nodes']:>7} {row['edges']:>8} "
            f"{row['edge_ratio_vs_parent']:>9.4f} {row['edge_ratio_vs_fine']:>8.4f} "
            f"{row['train_loss']:>12.6f} {row['gamma_vs_parent']:>11.4f} "
            f"{row['gamma_vs_fine']:>9.4f}"
        )
    return report


def theorem_run(cfg: ExperimentConfig, out_dir: Path) -> dict:
    msio.ensure_dir(out_dir)
    t = cfg.theorem
    artifacts = []
    last = None
    for seed in cfg.seeds:

        def factory(rng: np.random.Generator) -> LinearLSProblem:
            data = gen_sbm(
                t.n, t.blocks, t.p_in, t.p_out, t.feature_noise,
                seed=int(rng.integers(2**31)),
            )
            theta_true = rng.standard_normal((data.x.shape[1], t.target_dim))
            y = data.graph.csr @ (data.x @ theta_true)
            y = y + t.target_noise * rng.standard_normal(y.shape)
            sel = random_select(t.n, t.coarse_size, rng)
            return LinearLSProblem(data.graph, data.x, y, sel)

        report = run_theorem_trials(factory, t.epsilon, t.trials, seed=seed)
        name = f"theorem_seed{seed}.json"
        (out_dir / name).write_text(json.dumps(report, indent=2))
        artifacts.append(name)
        print(
            f"seed {seed}: trials={report['trials']} "
            f"paper_bound_rate={report['paper_bound_rate']:.3f} "
            f"factor2_bound_rate={report['factor2_bound_rate']:.3f} "
            f"max_identity_dev={report['max_identity_dev']:.3e}"
        )
        last = report
    write_manifest(cfg, out_dir, cfg.seeds, artifacts)
    return last


def flops_report(cfg: ExperimentConfig, out_dir: Path) -> dict:
    msio.ensure_dir(out_dir)
    data = build_dataset(cfg.dataset)
    seed = cfg.seeds[0]
    _, plan_seed, _ = derive_seeds(seed)
    plan = _make_plan(cfg, plan_seed)
    hierarchy = build_hierarchy(data, plan)
    channels = cfg.model.channels(data.x.shape[1], data.y.num_classes)
    model = init_model(cfg.model.kind, channels, np.random.default_rng(0),
                       cfg.model.normalize, cfg.model.gin_eps)

    levels = []
    for r, level in enumerate(hierarchy.levels, start=1):
        levels.append(
            {
                "level": r,
                "nodes": level.data.graph.num_nodes,
                "edges": level.data.graph.num_undirected_edges,
                "flops_per_pass": model_flops_per_pass(model, level.data.graph),
            }
        )
    report = {"seed": seed, "channels": channels, "levels": levels}
    if cfg.schedule is not None:
        epochs = _resolve_epochs(cfg, plan.levels)
        report["training_total"] = int(
            sum(e * lv["flops_per_pass"] for e, lv in zip(epochs, levels))
        )
        report["epochs_per_level"] = list(epochs)
        fine_budget = sum(epochs)
        report["fine_equivalent_total"] = int(fine_budget * levels[0]["flops_per_pass"])
    (out_dir / f"flops_seed{seed}.json").write_text(json.dumps(report, indent=2))
    write_manifest(cfg, out_dir, [seed], [f"flops_seed{seed}.json"])
    print(f"{'level':>5} {'nodes':>8} {'edges':>9} {'flops/pass':>12}")
    for lv in levels:
        print(
            f"{lv['level']:>5} {lv['nodes']:>8} {lv['edges']:>9} "
            f"{lv['flops_per_pass']:>12}"
        )
    if "training_total" in report:
        print(f"training total: {report['training_total']}")
    return report


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="msgnn", description="Multiscale GNN training experiments"
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("run", "inspect", "theorem", "flops"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="YAML experiment config")
        p.add_argument("--seed-override", type=int, default=None)
        p.add_argument("--out", default=None, help="output directory override")
        p.add_argument("--jobs", type=int, default=1)
        if name == "run":
            p.add_argument(
                "--timing", action="store_true",
                help="write measured wall_ms into metric CSVs "
                     "(breaks byte-reproducibility)",
            )
        if name == "inspect":
            p.add_argument("--weights", default=None,
                           help="checkpoint prefix to inspect instead of a "
                                "fresh initialization")
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.seed_override is not None:
        cfg.seeds = [args.seed_override]
    out_dir = Path(args.out) if args.out else Path(cfg.out_dir)

    try:
        if args.command == "run":
            if cfg.mode == "theorem":
                theorem_run(cfg, out_dir)
            elif cfg.mode == "flops":
                flops_report(cfg, out_dir)
            elif cfg.mode == "coarsen-inspect":
                coarsen_inspect(cfg, out_dir)
            else:
                summary = run_experiment(cfg, out_dir, args.jobs, args.timing)
                print(
                    f"{cfg.mode}: test acc "
                    f"{summary['test_acc']['mean']:.4f} "
                    f"({summary['test_acc']['std']:.4f}) over "
                    f"{summary['num_runs']} seeds; "
                    f"mean FLOPs {summary['total_flops']['mean']:.3e}"
                )
        elif args.command == "inspect":
            coarsen_inspect(cfg, out_dir, getattr(args, "weights", None))
        elif args.command == "theorem":
            if cfg.theorem is None:
                print("error: config.theorem: section required", file=sys.stderr)
                return 2
            theorem_run(cfg, out_dir)
        elif args.command == "flops":
            flops_report(cfg, out_dir)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
