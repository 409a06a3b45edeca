"""Experiment runner.

Subcommands: ``run`` (repeated seeded runs of one configuration),
``sweep`` (vary rho, B or m, all else fixed), ``outlier-demo`` (corrupt a
labeled dataset and compare square-loss vs robust clustering), and
``selftest`` (fast built-in invariant checks).

Experiments are described by a YAML config file; ``--set a.b=v`` patches
individual fields from the command line. Repeat ``r`` derives its
partition and initialization seeds as ``seed + r``, so runs are
independent but reproducible. All outputs are CSV; identical configs
produce bytewise-identical files.

Exit codes: 0 success, 2 config error, 3 numeric failure, 4 I/O error.
"""

import argparse
import csv
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
import yaml

from . import engine, metrics
from .rng import stream
from .data import (
    LabeledDataset,
    PartitionSpec,
    generate_gaussian_mixture,
    inject_outliers,
    load_csv,
    partition,
    unit_weight_shards,
)
from .engine import InitSpec, RunConfig, RunTrace
from .errors import (
    InvalidSpec,
    NoConvergence,
    NonFiniteState,
    ParseError,
    PeerclustError,
)
from .graph import TopologySpec, build_graph, read_edge_list
from .losses import LossSpec, MetricSpec

OUTPUT_DIR_ENV = "PEERCLUST_OUTPUT_DIR"

TRACE_HEADER = ["round", "J_rho", "J", "consensus_gap",
                "fixed_point_residual", "cluster_changes"]
SUMMARY_HEADER = ["sweep_value", "acc_mean", "acc_std", "ari_mean", "ari_std",
                  "gap_mean", "gap_std", "Jrho_mean", "Jrho_std",
                  "stability_round_mean"]
OUTLIER_HEADER = ["method", "center", "dist_nearest_good_mean",
                  "dist_outlier_mean", "verdict"]

SWEEPABLE = ("rho", "B", "m")


class ConfigError(PeerclustError):
    """Bad experiment config; message names the offending field."""


@dataclass
class ExperimentConfig:
    dataset: dict
    topology: dict
    run: dict
    partition: dict = field(default_factory=dict)
    seed: int = 0
    repeats: int = 1
    sweep: Optional[dict] = None
    outlier: Optional[dict] = None
    output_dir: str = "out"
    accuracy_scope: str = "global"
    jobs: int = 1
    base_dir: Path = Path(".")


_TOP_KEYS = {"dataset", "topology", "run", "partition", "seed", "repeats",
             "sweep", "outlier", "output_dir", "accuracy_scope", "jobs"}


def load_config(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a mapping")
    return raw


def dump_config(cfg: dict) -> str:
    return yaml.safe_dump(cfg, sort_keys=True)


def apply_overrides(raw: dict, overrides: Sequence[str]) -> dict:
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        node = raw
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"--set {key}: {part} is not a section")
        node[parts[-1]] = yaml.safe_load(value)
    return raw


def parse_config(raw: dict, base_dir: Path) -> ExperimentConfig:
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for required in ("dataset", "topology", "run"):
        if required not in raw:
            raise ConfigError(f"missing config section {required!r}")
    cfg = ExperimentConfig(
        dataset=dict(raw["dataset"]),
        topology=dict(raw["topology"]),
        run=dict(raw["run"]),
        partition=dict(raw.get("partition", {})),
        seed=int(raw.get("seed", 0)),
        repeats=int(raw.get("repeats", 1)),
        sweep=None if raw.get("sweep") is None else dict(raw["sweep"]),
        outlier=None if raw.get("outlier") is None else dict(raw["outlier"]),
        output_dir=str(raw.get("output_dir", "out")),
        accuracy_scope=str(raw.get("accuracy_scope", "global")),
        jobs=int(raw.get("jobs", 1)),
        base_dir=base_dir,
    )
    if cfg.repeats < 1:
        raise ConfigError(f"repeats must be >= 1, got {cfg.repeats}")
    if cfg.sweep is not None:
        param = cfg.sweep.get("parameter")
        if param not in SWEEPABLE:
            raise ConfigError(f"sweep.parameter must be one of {SWEEPABLE}, got {param!r}")
        values = cfg.sweep.get("values")
        if not values or any(v <= 0 for v in values):
            raise ConfigError("sweep.values must be a non-empty list of positive numbers")
    return cfg


def _resolve_path(cfg: ExperimentConfig, p) -> Path:
    path = Path(p)
    return path if path.is_absolute() else cfg.base_dir / path


def build_dataset(cfg: ExperimentConfig) -> LabeledDataset:
    spec = cfg.dataset
    kind = spec.get("kind")
    if kind == "csv":
        label_column = spec.get("label_column")
        return load_csv(_resolve_path(cfg, spec["path"]),
                        label_column=None if label_column is None else int(label_column),
                        normalize=spec.get("normalize", "none"))
    if kind == "gaussian_mixture":
        return generate_gaussian_mixture(
            k=int(spec["k"]), n_per=int(spec["n_per"]),
            means=np.asarray(spec["means"], dtype=np.float64),
            variance=float(spec.get("variance", 1.0)),
            seed=int(spec.get("seed", cfg.seed)))
    raise ConfigError(f"dataset.kind must be csv or gaussian_mixture, got {kind!r}")


def build_topology(cfg: ExperimentConfig, m: int) -> TopologySpec:
    topo = cfg.topology
    kind = topo.get("kind", "ring")
    edges = None
    if kind == "custom":
        edges = read_edge_list(_resolve_path(cfg, topo["edges_file"]))
    return TopologySpec(kind=kind, m=m, p=float(topo.get("p", 0.5)),
                        seed=int(topo.get("seed", cfg.seed)), edges=edges)


def build_loss(run_section: dict, cfg: ExperimentConfig) -> LossSpec:
    loss_cfg = run_section.get("loss", {"kind": "kmeans"})
    if isinstance(loss_cfg, str):
        loss_cfg = {"kind": loss_cfg}
    metric = MetricSpec()
    maha = loss_cfg.get("mahalanobis_csv")
    if maha is not None:
        matrix = np.loadtxt(_resolve_path(cfg, maha), delimiter=",", ndmin=2)
        metric = MetricSpec(kind="mahalanobis", matrix=matrix)
        print("warning: mahalanobis metric is outside the consensus guarantees; "
              "results may not reach a clustering of the full data", file=sys.stderr)
    return LossSpec(kind=loss_cfg.get("kind", "kmeans"),
                    delta=float(loss_cfg.get("delta", 1.0)),
                    eta=float(loss_cfg.get("eta", 1.0)),
                    metric=metric)


def build_run_config(cfg: ExperimentConfig, repeat: int,
                     loss: Optional[LossSpec] = None,
                     init: Optional[InitSpec] = None) -> RunConfig:
    run_cfg = cfg.run
    if loss is None:
        loss = build_loss(run_cfg, cfg)
    if init is None:
        init = InitSpec(scheme=run_cfg.get("init", "random_local_sample"),
                        seed=cfg.seed + repeat)
    alpha = run_cfg.get("alpha", "auto_theorem1")
    if not isinstance(alpha, str):
        alpha = float(alpha)
    return RunConfig(
        K=int(run_cfg["K"]), T=int(run_cfg["T"]), loss=loss,
        rho=float(run_cfg.get("rho", 1.0)), B=int(run_cfg.get("B", 1)),
        alpha=alpha, init=init, seed=cfg.seed + repeat,
        early_stop=bool(run_cfg.get("early_stop", False)),
        early_stop_tol=float(run_cfg.get("early_stop_tol", 1e-9)),
        parallel=bool(run_cfg.get("parallel", False)),
        n_threads=int(run_cfg.get("n_threads", 4)),
    )


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_trace_csv(path: Path, trace: RunTrace) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_HEADER)
        for idx in range(len(trace.J_rho)):
            writer.writerow([
                idx + 1, _fmt(float(trace.J_rho[idx])), _fmt(float(trace.J[idx])),
                _fmt(float(trace.consensus_gap[idx])),
                _fmt(float(trace.fixed_point_residual[idx])),
                int(trace.cluster_changes[idx]),
            ])


def write_centers_csv(path: Path, centers: np.ndarray) -> None:
    m, k_count, d = centers.shape
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["user", "cluster"] + [f"f{j}" for j in range(d)])
        for i in range(m):
            for k in range(k_count):
                writer.writerow([i, k] + [_fmt(float(v)) for v in centers[i, k]])


def write_assignment_csv(path: Path, trace: RunTrace, shards) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["user", "local_index", "global_index", "cluster"])
        per_user = trace.per_user_assignment()
        for i, labels in enumerate(per_user):
            gidx = shards.shards[i].global_index
            for r in range(len(labels)):
                writer.writerow([i, r, int(gidx[r]), int(labels[r])])


def write_summary_csv(path: Path, rows: List[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_HEADER)
        for row in rows:
            writer.writerow([_fmt(row[k]) for k in SUMMARY_HEADER])


def stability_round(trace: RunTrace) -> int:
    """1-based index of the last round whose assignments changed."""
    changed = np.flatnonzero(trace.cluster_changes > 0)
    return int(changed[-1] + 1) if changed.size else 1


@dataclass
class RepeatResult:
    trace: RunTrace
    acc: float
    ari: float


def _execute_repeat(cfg: ExperimentConfig, ds: LabeledDataset, repeat: int,
                    out_dir: Path, run_override: Optional[dict] = None,
                    m_override: Optional[int] = None) -> RepeatResult:
    part = cfg.partition
    m = int(m_override if m_override is not None else part.get("m", 1))
    pspec = PartitionSpec(
        scheme=part.get("scheme", "homogeneous"),
        classes_per_user=tuple(part.get("classes_per_user", (1, 1))),
        seed=cfg.seed + repeat,
    )
    shards = partition(ds, m, pspec)
    graph = build_graph(build_topology(cfg, m))

    run_cfg = build_run_config(cfg, repeat)
    if run_override:
        run_cfg = engine.replace_config(run_cfg, **run_override)
    trace = engine.run(graph, shards, run_cfg)

    write_trace_csv(out_dir / f"trace_r{repeat}.csv", trace)
    write_centers_csv(out_dir / f"centers_r{repeat}.csv", trace.final_centers)
    write_assignment_csv(out_dir / f"assignment_r{repeat}.csv", trace, shards)

    if ds.labels is not None:
        amat = None
        if run_cfg.loss.metric.kind == "mahalanobis":
            amat = run_cfg.loss.metric.matrix
        accs, aris = metrics.per_user_scores(
            ds.points, ds.labels, trace.final_centers, metric_matrix=amat,
            shards=shards, scope=cfg.accuracy_scope)
        acc, ari = float(accs.mean()), float(aris.mean())
    else:
        acc, ari = math.nan, math.nan
    return RepeatResult(trace=trace, acc=acc, ari=ari)


def _summarize(results: List[RepeatResult], sweep_value) -> dict:
    accs = np.array([r.acc for r in results])
    aris = np.array([r.ari for r in results])
    gaps = np.array([float(r.trace.consensus_gap[-1]) for r in results])
    jrhos = np.array([float(r.trace.J_rho[-1]) for r in results])
    stabs = np.array([stability_round(r.trace) for r in results], dtype=float)
    return {
        "sweep_value": sweep_value,
        "acc_mean": float(accs.mean()), "acc_std": float(accs.std()),
        "ari_mean": float(aris.mean()), "ari_std": float(aris.std()),
        "gap_mean": float(gaps.mean()), "gap_std": float(gaps.std()),
        "Jrho_mean": float(jrhos.mean()), "Jrho_std": float(jrhos.std()),
        "stability_round_mean": float(stabs.mean()),
    }


def _run_repeats(cfg: ExperimentConfig, ds: LabeledDataset, out_dir: Path,
                 run_override: Optional[dict] = None,
                 m_override: Optional[int] = None) -> List[RepeatResult]:
    out_dir.mkdir(parents=True, exist_ok=True)
    repeats = range(cfg.repeats)
    if cfg.jobs > 1:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            futures = [pool.submit(_execute_repeat, cfg, ds, r, out_dir,
                                   run_override, m_override) for r in repeats]
            return [f.result() for f in futures]
    return [_execute_repeat(cfg, ds, r, out_dir, run_override, m_override)
            for r in repeats]


def cmd_run(cfg: ExperimentConfig) -> int:
    ds = build_dataset(cfg)
    out_dir = Path(cfg.output_dir)
    results = _run_repeats(cfg, ds, out_dir)
    write_summary_csv(out_dir / "summary.csv", [_summarize(results, "")])
    print(f"wrote {cfg.repeats} run(s) to {out_dir}")
    return 0


def cmd_sweep(cfg: ExperimentConfig) -> int:
    if cfg.sweep is None:
        raise ConfigError("sweep command needs a sweep section")
    ds = build_dataset(cfg)
    param = cfg.sweep["parameter"]
    values = cfg.sweep["values"]
    out_dir = Path(cfg.output_dir)
    rows = []
    for value in values:
        sub_dir = out_dir / f"{param}_{value}"
        run_override = None
        m_override = None
        if param == "rho":
            run_override = {"rho": float(value)}
        elif param == "B":
            run_override = {"B": int(value)}
        else:
            m_override = int(value)
        results = _run_repeats(cfg, ds, sub_dir, run_override, m_override)
        rows.append(_summarize(results, value))
    write_summary_csv(out_dir / "summary.csv", rows)
    print(f"swept {param} over {values}; summary in {out_dir / 'summary.csv'}")
    return 0


def _class_means(points: np.ndarray, labels: np.ndarray, classes) -> np.ndarray:
    return np.stack([points[labels == c].mean(axis=0) for c in classes])


def cmd_outlier_demo(cfg: ExperimentConfig) -> int:
    """Corrupt a labeled dataset and compare square-loss vs robust runs.

    Follows the reference protocol: per-point weight 1, centers started at
    the good-class means plus per-user unit Gaussian noise, identical
    initialization for both methods.
    """
    if cfg.outlier is None:
        raise ConfigError("outlier-demo needs an outlier section")
    ds = build_dataset(cfg)
    if ds.labels is None:
        raise ConfigError("outlier-demo needs a labeled dataset")
    oc = cfg.outlier
    noisy = inject_outliers(
        ds, fraction=float(oc.get("fraction", 0.2)),
        noise_mean=float(oc.get("noise_mean", 11.0)),
        noise_variance=float(oc.get("noise_variance", 1.0)),
        seed=cfg.seed)
    outlier_id = int(noisy.labels.max())
    good_classes = [c for c in np.unique(noisy.labels) if c != outlier_id]
    good_means = _class_means(noisy.points, noisy.labels, good_classes)
    outlier_mean = noisy.points[noisy.labels == outlier_id].mean(axis=0)
    k_count = len(good_classes)

    part = cfg.partition
    m = int(part.get("m", 5))
    pspec = PartitionSpec(scheme=part.get("scheme", "homogeneous"), seed=cfg.seed)
    shards = unit_weight_shards(partition(noisy, m, pspec))
    graph = build_graph(build_topology(cfg, m))
    losses = {
        "kmeans": LossSpec(kind="kmeans"),
        "huber": LossSpec(kind="huber", delta=float(oc.get("huber_delta", 0.05))),
    }

    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    verdicts = {}
    for name, loss in losses.items():
        finals = []
        for r in range(cfg.repeats):
            x0 = np.empty((m, k_count, ds.dim))
            for i in range(m):
                rng = stream(cfg.seed + r, "outlier_init", i)
                x0[i] = good_means + rng.standard_normal((k_count, ds.dim))
            init = InitSpec(scheme="explicit", explicit_centers=x0)
            run_cfg = build_run_config(cfg, r, loss=loss, init=init)
            overrides = {"K": k_count}
            if "alpha" not in cfg.run:
                overrides["alpha"] = "auto_experimental"
            run_cfg = engine.replace_config(run_cfg, **overrides)
            trace = engine.run(graph, shards, run_cfg)
            write_trace_csv(out_dir / f"trace_{name}_r{r}.csv", trace)
            finals.append(trace.final_centers.mean(axis=0))
        avg_centers = np.mean(finals, axis=0)
        near_good = np.linalg.norm(
            avg_centers[:, None, :] - good_means[None, :, :], axis=2).min(axis=1)
        to_outlier = np.linalg.norm(avg_centers - outlier_mean[None, :], axis=1)
        verdict = bool(np.all(near_good < to_outlier))
        verdicts[name] = verdict
        for k in range(k_count):
            rows.append({"method": name, "center": k,
                         "dist_nearest_good_mean": float(near_good[k]),
                         "dist_outlier_mean": float(to_outlier[k]),
                         "verdict": verdict})

    with open(out_dir / "outlier_report.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(OUTLIER_HEADER)
        for row in rows:
            writer.writerow([_fmt(row[k]) for k in OUTLIER_HEADER])
    for name, verdict in verdicts.items():
        print(f"{name}: all centers nearer good-class means than outlier mean: {verdict}")
    return 0


def cmd_selftest() -> int:
    from . import selftest

    return selftest.run_all()


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="peerclust",
        description="simulated peer-to-peer clustering experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("run", "sweep", "outlier-demo"):
        p = sub.add_parser(name)
        p.add_argument("config", help="YAML experiment config")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="override a config field")
        p.add_argument("--output-dir", default=None)
    sub.add_parser("selftest")
    args = parser.parse_args(argv)

    try:
        if args.command == "selftest":
            return cmd_selftest()
        raw = load_config(args.config)
        raw = apply_overrides(raw, args.overrides)
        cfg = parse_config(raw, base_dir=Path(args.config).resolve().parent)
        env_out = os.environ.get(OUTPUT_DIR_ENV)
        if args.output_dir is not None:
            cfg.output_dir = args.output_dir
        elif env_out:
            cfg.output_dir = env_out
        if args.command == "run":
            return cmd_run(cfg)
        if args.command == "sweep":
            return cmd_sweep(cfg)
        return cmd_outlier_demo(cfg)
    except (ConfigError, InvalidSpec, ParseError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (NonFiniteState, NoConvergence) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
