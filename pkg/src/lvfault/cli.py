"""Command-line entry point: ``lvfault <command> --config experiment.toml``.

Exit codes: 0 success, 1 invalid configuration or input, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import datetime
import json
import logging
import sys

from . import pipeline
from .config import ConfigError, ExperimentConfig, config_to_dict, load_config, loads_config, with_overrides
from .datagen import DataError
from .grid_model import GridError

log = logging.getLogger("lvfault")

COMMANDS = ("generate", "train", "eval", "transformer-detect", "app", "gridsearch", "plot")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lvfault", description="Malfunction detection testbed for LV distribution grids.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="experiment TOML file (defaults apply when omitted)")
    p.add_argument("--seed", type=int, help="master seed, overrides simulation.seed")
    p.add_argument("--workers", type=int, help="worker processes, overrides simulation.cores")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else loads_config("")
    sim = {}
    if args.seed is not None:
        sim["seed"] = args.seed
    if args.workers is not None:
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        sim.update(cores=args.workers, parallel_computing=args.workers > 1)
    if sim:
        cfg = with_overrides(cfg, "simulation", **sim)
    if args.command in ("train", "eval"):
        cfg = with_overrides(cfg, "learning", mode=args.command)
    return cfg


def _write_metadata(cfg: ExperimentConfig, command: str) -> None:
    """The only file in the results folder that carries a timestamp."""
    folder = cfg.resolve("results_folder")
    folder.mkdir(parents=True, exist_ok=True)
    meta = {
        "command": command,
        "finished": datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds"),
        "config_source": cfg.source,
        "config": config_to_dict(cfg),
    }
    (folder / "run_metadata.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def run(cfg: ExperimentConfig, command: str) -> None:
    results = cfg.resolve("results_folder")
    if command == "generate":
        out = pipeline.run_generate(cfg)
        print(f"dataset: {out.dataset_path} ({len(out.dataset)} samples, simulated={out.simulated})")
        if cfg.learning.plot_samples:
            pipeline.emit_samples(out.dataset, results)
    elif command in ("train", "eval"):
        out = pipeline.run_device_detection(cfg)
        reports = {"window": out.window, "device": out.device}
        pipeline.emit_reports(reports, results, f"device_detection_{command}")
        if out.detector.history:
            (results / f"device_detection_{command}_history.json").write_text(
                json.dumps(out.detector.history, indent=2, sort_keys=True) + "\n"
            )
        if cfg.learning.plot_samples:
            pipeline.emit_samples(out.dataset, results)
        for name, rep in reports.items():
            print(f"{name}: accuracy={rep.accuracy:.4f} f1_macro={rep.f1_macro:.4f}")
    elif command == "transformer-detect":
        out = pipeline.run_transformer_detection(cfg)
        pipeline.emit_reports({"target": out.report}, results, "transformer_detection")
        print(f"transformer detection: f1_macro={out.report.f1_macro:.4f}")
    elif command == "app":
        report = pipeline.run_detection_application(cfg)
        pipeline.emit_pipeline_report(report, results)
        for stage in report.stages:
            print(f"{stage.name}: {json.dumps(stage.metrics, sort_keys=True)}")
    elif command == "gridsearch":
        result = pipeline.run_gridsearch(cfg)
        print(f"best {result.spec.parameter} = {result.best_value} (f1_macro={result.best_report.f1_macro:.4f})")
    elif command == "plot":
        paths = pipeline.replot(cfg)
        print(f"rendered {len(paths)} plot(s)")
    _write_metadata(cfg, command)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    try:
        run(cfg, args.command)
    except (ConfigError, DataError, GridError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        log.debug("failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
