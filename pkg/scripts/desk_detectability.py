"""How separable is a broken P(U) curve on the shipped feeders?

Simulates a year of paired correct/malfunctioning scenarios for each malfunction
choice and prints the undervoltage share, the corr(P, V)-sign rule accuracy and
the logistic-regression scores. Results also go to ``<results>/detectability.json``.

    python scripts/desk_detectability.py --config scripts/configs/desk.toml
"""

import argparse
import json
import logging
import time
from pathlib import Path

from lvfault.config import load_config, with_overrides
from lvfault.pipeline import detectability_study

CHOICES = {1: "flat", 2: "inverted"}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(Path(__file__).with_name("configs") / "desk.toml"))
    ap.add_argument("--days", type=int, help="override simulation.sim_length")
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()
    logging.basicConfig(level=logging.WARNING)

    cfg = load_config(args.config)
    if args.days:
        cfg = with_overrides(cfg, "simulation", sim_length=args.days)
    summary = {}
    for choice, name in CHOICES.items():
        t0 = time.perf_counter()
        study = detectability_study(with_overrides(cfg, "simulation", broken_control_curve_choice=choice), args.workers)
        row = {
            "undervoltage_step_share": study["undervoltage_step_share"],
            "oracle_accuracy": study["oracle_accuracy"],
            "oracle_windows": study["oracle_windows"],
            "dataset_windows": study["dataset_windows"],
            "logistic_window": study["logistic"].to_dict(),
            "logistic_device": study["logistic_device"].to_dict(),
            "seconds": round(time.perf_counter() - t0, 1),
        }
        summary[name] = row
        print(
            f"{name:>8}: undervoltage {row['undervoltage_step_share']:.3f}  "
            f"oracle {row['oracle_accuracy']:.3f} on {row['oracle_windows']} windows  "
            f"logistic F1 window {study['logistic'].f1_macro:.3f} / device {study['logistic_device'].f1_macro:.3f}  "
            f"({row['seconds']} s)"
        )
    out = cfg.resolve("results_folder")
    out.mkdir(parents=True, exist_ok=True)
    (out / "detectability.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()
