"""Command-line entry point: ``fedfta gen-data | run | compare``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .config import ExperimentConfig, parse_config
from .data import generate_blobs, save_csv
from .core import SeededRng, Stream
from .errors import ConfigError, FedFtaError
from .federation import AGGREGATORS
from .runner import compare_seeds, run_cell, run_experiment, write_comparison, write_run_artifacts

log = logging.getLogger("fedfta")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2


def _error_record(exc: BaseException, out_dir: Optional[Path], **context) -> dict:
    rec = {"status": "error", "error": type(exc).__name__, "message": str(exc), **context}
    for attr in ("key", "client_id", "round_index", "path", "row"):
        if getattr(exc, attr, None) is not None:
            rec[attr] = getattr(exc, attr)
    print(json.dumps(rec), file=sys.stderr)
    if out_dir is not None:
        try:
            out_dir.mkdir(parents=True, exist_ok=True)
            (out_dir / "error.json").write_text(json.dumps(rec, indent=2) + "\n", encoding="utf-8")
        except OSError:
            pass
    return rec


def cmd_gen_data(cfg: ExperimentConfig, out: Optional[str] = None) -> int:
    """Write the synthetic dataset as CSV plus a JSON sidecar of generation parameters."""
    target = Path(out or cfg.data_out or Path(cfg.output_dir) / "dataset.csv")
    try:
        ds = generate_blobs(cfg.class_counts, cfg.input_dim, cfg.separation, cfg.noise_std,
                            SeededRng(cfg.master_seed, Stream.DATA))
        target.parent.mkdir(parents=True, exist_ok=True)
        save_csv(ds, target)
        sidecar = {
            "master_seed": cfg.master_seed,
            "class_counts": list(cfg.class_counts),
            "input_dim": cfg.input_dim,
            "separation": cfg.separation,
            "noise_std": cfg.noise_std,
            "rows": len(ds),
        }
        target.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as exc:
        _error_record(exc, None, path=str(target))
        return EXIT_FAILURE
    except FedFtaError as exc:
        _error_record(exc, None)
        return EXIT_FAILURE
    log.info("wrote %d rows to %s", len(ds), target)
    return EXIT_OK


def cmd_run(cfg: ExperimentConfig, out: Optional[str] = None) -> int:
    out_dir = Path(out or cfg.output_dir)
    try:
        result = run_experiment(cfg)
        write_run_artifacts(result, out_dir)
    except (FedFtaError, OSError) as exc:
        _error_record(exc, out_dir)
        return EXIT_FAILURE
    log.info("final accuracy %.4f, macro-F1 %s -> %s", result.final_accuracy, result.report.f1, out_dir)
    return EXIT_OK


def cmd_compare(cfg: ExperimentConfig, aggregators: Sequence[str], out: Optional[str] = None, jobs: int = 1) -> int:
    """Every (aggregator, distribution, seed) cell; writes comparison.csv and summary.csv."""
    out_dir = Path(out or cfg.output_dir)
    if len(aggregators) < 2:
        _error_record(ConfigError("compare needs at least two aggregators", "aggregators"), out_dir)
        return EXIT_CONFIG
    cells = [(agg, dist, seed) for dist in cfg.distributions for seed in compare_seeds(cfg) for agg in aggregators]
    cell_dir = out_dir / "cells"
    results = []
    try:
        if jobs > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                futures = [pool.submit(run_cell, cfg, a, d, s, cell_dir) for a, d, s in cells]
                for (a, d, s), f in zip(cells, futures):
                    results.append(_annotated(f.result, a, d, s))
        else:
            for a, d, s in cells:
                results.append(_annotated(lambda: run_cell(cfg, a, d, s, cell_dir), a, d, s))
        write_comparison(results, out_dir)
    except (FedFtaError, OSError) as exc:
        _error_record(exc, out_dir, cell=getattr(exc, "cell", None))
        return EXIT_FAILURE
    return EXIT_OK


def _annotated(fn, aggregator, distribution, seed):
    try:
        return fn()
    except FedFtaError as exc:
        exc.cell = {"aggregator": aggregator, "distribution": distribution, "seed": seed}
        exc.args = (f"cell {aggregator}/{distribution}/seed {seed}: {exc}",)
        raise


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fedfta", description="Federated transfer learning with fine-tuned aggregation.")
    p.add_argument("--version", action="version", version=f"fedfta {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic dataset as CSV")
    g.add_argument("--config", required=True)
    g.add_argument("--out", help="CSV destination (default: data_out or <output_dir>/dataset.csv)")

    r = sub.add_parser("run", help="train one federation and write its reports")
    r.add_argument("--config", required=True)
    r.add_argument("--out", help="output directory (default: output_dir from the config)")

    c = sub.add_parser("compare", help="aggregator x distribution x seed campaign")
    c.add_argument("--config", required=True)
    c.add_argument("--aggregators", default=",".join(AGGREGATORS))
    c.add_argument("--out")
    c.add_argument("--jobs", type=int, default=1, help="cells run in parallel processes")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = parse_config(args.config)
    except ConfigError as exc:
        _error_record(exc, None)
        return EXIT_CONFIG

    if args.command == "gen-data":
        return cmd_gen_data(cfg, args.out)
    if args.command == "run":
        return cmd_run(cfg, args.out)
    aggs = [a.strip() for a in args.aggregators.split(",") if a.strip()]
    bad = [a for a in aggs if a not in AGGREGATORS]
    if bad:
        _error_record(ConfigError(f"unknown aggregator(s) {bad}; choose from {list(AGGREGATORS)}", "aggregators"), None)
        return EXIT_CONFIG
    return cmd_compare(cfg, aggs, args.out, args.jobs)


if __name__ == "__main__":
    sys.exit(main())
