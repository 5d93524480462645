"""End-to-end experiments: data, partition, federation, scoring and report files."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .config import ExperimentConfig
from .core import SeededRng, Stream
from .data import (
    Dataset,
    PartitionPlan,
    generate_blobs,
    load_csv,
    partition_dirichlet,
    partition_iid,
    partition_shards,
    stratified_split,
)
from .federation import FederationState, TrainingHistory, evaluate, make_clients, run_training
from .metrics import METRIC_NAMES, ConfusionMatrix, MetricReport
from .model import ClassifierHead, FrozenBase

log = logging.getLogger(__name__)

TIMING_FIELDS = ("elapsed_s",)


def load_dataset(cfg: ExperimentConfig, seed: Optional[int] = None) -> Dataset:
    seed = cfg.master_seed if seed is None else seed
    if cfg.data_source == "csv":
        return load_csv(cfg.csv_path)
    return generate_blobs(cfg.class_counts, cfg.input_dim, cfg.separation, cfg.noise_std,
                          SeededRng(seed, Stream.DATA))


def split_dataset(cfg: ExperimentConfig, ds: Dataset, seed: int) -> tuple[Dataset, Dataset, Dataset]:
    return stratified_split(ds, cfg.test_ratio, cfg.val_ratio, SeededRng(seed, Stream.SPLIT))


def make_partition(cfg: ExperimentConfig, train: Dataset, seed: int, distribution: str) -> PartitionPlan:
    rng = SeededRng(seed, Stream.PARTITION)
    if distribution == "iid":
        return partition_iid(train, cfg.clients, rng)
    if distribution == "dirichlet":
        return partition_dirichlet(train, cfg.clients, cfg.alpha, rng)
    return partition_shards(train, cfg.clients, cfg.shards_per_client, rng)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    history: TrainingHistory
    confusion: ConfusionMatrix
    report: MetricReport
    wall_time_s: float

    @property
    def final_accuracy(self) -> float:
        return self.report.accuracy

    def rounds_to_target(self) -> int:
        """First round whose test accuracy reaches the target, or ``rounds + 1``."""
        for rec in self.history.records:
            if rec.test_accuracy is not None and rec.test_accuracy >= self.config.target_accuracy:
                return rec.t
        return self.config.rounds + 1


def run_experiment(
    cfg: ExperimentConfig,
    aggregator: Optional[str] = None,
    distribution: Optional[str] = None,
    seed: Optional[int] = None,
) -> ExperimentResult:
    """Run one federated training job; overrides leave ``cfg`` untouched otherwise.

    Data, split and partition depend only on the seed and distribution, so
    different aggregators see identical client shards.
    """
    started = time.perf_counter()
    cfg = replace(
        cfg,
        aggregator=aggregator or cfg.aggregator,
        partition=distribution or cfg.partition,
        master_seed=cfg.master_seed if seed is None else seed,
    )
    seed = cfg.master_seed
    ds = load_dataset(cfg, seed)
    train, val, test = split_dataset(cfg, ds, seed)
    plan = make_partition(cfg, train, seed, cfg.partition)
    clients = make_clients(train, plan)

    base = FrozenBase.random(ds.input_dim, cfg.feature_dim, SeededRng(seed, Stream.BASE_INIT))
    head = ClassifierHead.initialize(cfg.feature_dim, cfg.hidden_sizes, ds.n_classes,
                                     SeededRng(seed, Stream.HEAD_INIT), std=cfg.head_init_std)
    state = FederationState.initial(base, head, val, cfg.rounds, [c.client_id for c in clients])
    history = run_training(state, clients, cfg.round_config(), cfg.rounds, SeededRng(seed), test=test)
    cm, report = evaluate(history.full_model, test)
    return ExperimentResult(cfg, history, cm, report, time.perf_counter() - started)


# -- report files -------------------------------------------------------------

def _fmt(v) -> str:
    return "undefined" if v is None else repr(float(v))


def history_lines(result: ExperimentResult) -> list[str]:
    return [json.dumps(rec.as_dict()) for rec in result.history.records]


def write_run_artifacts(result: ExperimentResult, out_dir: str | Path) -> Path:
    """history.jsonl, final_metrics.csv, confusion.csv and config_echo.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "history.jsonl").write_text("".join(line + "\n" for line in history_lines(result)), encoding="utf-8")

    with (out / "final_metrics.csv").open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scope", "averaging", *METRIC_NAMES])
        r = result.report
        w.writerow(["overall", r.averaging, *(_fmt(getattr(r, m)) for m in METRIC_NAMES)])
        for c in r.per_class:
            w.writerow([f"class_{c.label}", "one_vs_rest", *(_fmt(getattr(c, m)) for m in METRIC_NAMES)])

    with (out / "confusion.csv").open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        n = result.confusion.n_classes
        w.writerow(["actual\\predicted", *range(n)])
        for a in range(n):
            w.writerow([a, *result.confusion.counts[a].tolist()])

    echo = result.config.to_dict()
    (out / "config_echo.json").write_text(json.dumps(echo, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return out


def strip_timing(line: str) -> str:
    rec = json.loads(line)
    for key in TIMING_FIELDS:
        rec.pop(key, None)
    return json.dumps(rec)


COMPARISON_COLUMNS = ("aggregator", "distribution", "seed", "final_accuracy", "final_macro_f1", "rounds_to_target")


@dataclass
class CellResult:
    aggregator: str
    distribution: str
    seed: int
    final_accuracy: float
    final_macro_f1: Optional[float]
    rounds_to_target: int

    def row(self) -> list:
        return [self.aggregator, self.distribution, self.seed, _fmt(self.final_accuracy),
                _fmt(self.final_macro_f1), self.rounds_to_target]


def run_cell(cfg: ExperimentConfig, aggregator: str, distribution: str, seed: int,
             out_dir: Optional[Path] = None) -> CellResult:
    res = run_experiment(cfg, aggregator=aggregator, distribution=distribution, seed=seed)
    if out_dir is not None:
        write_run_artifacts(res, out_dir / f"{aggregator}_{distribution}_seed{seed}")
    return CellResult(aggregator, distribution, seed, res.final_accuracy, res.report.f1, res.rounds_to_target())


def compare_seeds(cfg: ExperimentConfig) -> list[int]:
    return [cfg.master_seed + r for r in range(cfg.seeds)]


def summarize(cells: list[CellResult]) -> list[dict]:
    """Mean and population std per (aggregator, distribution), in first-seen order."""
    groups: dict[tuple[str, str], list[CellResult]] = {}
    for c in cells:
        groups.setdefault((c.aggregator, c.distribution), []).append(c)
    rows = []
    for (agg, dist), cs in groups.items():
        acc = np.array([c.final_accuracy for c in cs])
        f1 = np.array([np.nan if c.final_macro_f1 is None else c.final_macro_f1 for c in cs])
        rtt = np.array([c.rounds_to_target for c in cs], dtype=float)
        rows.append({
            "aggregator": agg,
            "distribution": dist,
            "n": len(cs),
            "accuracy_mean": float(acc.mean()),
            "accuracy_std": float(acc.std()),
            "macro_f1_mean": float(np.nanmean(f1)) if not np.all(np.isnan(f1)) else math.nan,
            "macro_f1_std": float(np.nanstd(f1)) if not np.all(np.isnan(f1)) else math.nan,
            "rounds_to_target_mean": float(rtt.mean()),
            "rounds_to_target_std": float(rtt.std()),
        })
    return rows


def write_comparison(cells: list[CellResult], out_dir: str | Path) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    table = out / "comparison.csv"
    with table.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COMPARISON_COLUMNS)
        for c in cells:
            w.writerow(c.row())
    summary = out / "summary.csv"
    rows = summarize(cells)
    with summary.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        keys = list(rows[0]) if rows else []
        w.writerow(keys)
        for r in rows:
            w.writerow([r[k] if isinstance(r[k], (str, int)) else repr(r[k]) for k in keys])
    return table, summary
