"""Transformer-level detection F1 as a function of the calibration rate.

The target grid's labelled windows are mixed into the simulated training set at
each rate of the configured grid search; the table and bar chart land in the
results folder as ``gridsearch.csv`` / ``gridsearch.svg``.

    python scripts/calibration_sweep.py --config scripts/configs/desk.toml --days 7
"""

import argparse
import logging
from pathlib import Path

from lvfault.config import load_config, with_overrides
from lvfault.pipeline import run_gridsearch


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(Path(__file__).with_name("configs") / "desk.toml"))
    ap.add_argument("--days", type=int, help="override simulation.substation_days")
    ap.add_argument("--classifier", choices=("logistic", "knn"))
    args = ap.parse_args()
    logging.basicConfig(level=logging.WARNING)

    cfg = load_config(args.config)
    cfg = with_overrides(cfg, "learning", grid_search={"parameter": "calibration_rate", "values": cfg.learning.grid_search.values})
    if args.days:
        cfg = with_overrides(cfg, "simulation", substation_days=args.days)
    if args.classifier:
        cfg = with_overrides(cfg, "learning", transformer_classifier=args.classifier)
    result = run_gridsearch(cfg)
    print(f"{'rate':>6}  {'accuracy':>8}  {'f1_macro':>8}")
    for value, report, err in result.rows:
        if report is None:
            print(f"{value:>6}  failed: {err}")
        else:
            print(f"{value:>6}  {report.accuracy:8.3f}  {report.f1_macro:8.3f}")
    print(f"best rate {result.best_value} -> {cfg.resolve('results_folder') / 'gridsearch.svg'}")


if __name__ == "__main__":
    main()
