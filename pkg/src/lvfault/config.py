"""Experiment configuration: a TOML file with ``[paths]``, ``[learning]``, ``[dataset]``
and ``[simulation]`` sections. Every key is optional; an empty file yields the
defaults below. Unknown keys and wrongly typed values are rejected.
"""

from __future__ import annotations

import dataclasses
import sys
import typing
from dataclasses import dataclass, field
from pathlib import Path

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ConfigError(ValueError):
    pass


@dataclass
class PathsConfig:
    grid_data_folder: str = "raw_data_generation/input"
    raw_data_folder: str = "raw_data"
    dataset_folder: str = "datasets"
    results_folder: str = "results"


@dataclass
class GridSearchConfig:
    parameter: str = "calibration_rate"
    values: list = field(default_factory=lambda: [0, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1])


@dataclass
class LearningConfig:
    mode: str = "train"
    dataset: str = "7day_200k"
    type: str = "EV"
    # input/output dim, hidden dim, layer count, unused
    rnn_model_settings: list = field(default_factory=lambda: [1, 2, 20, 5])
    number_of_epochs: int = 20
    learning_rate: float = 1e-6
    decision_criteria: str = "majority vote"
    activation_function: str = "relu"
    mini_batch_size: int = 60
    optimizer: str = "SGD"
    k_folds: int = 5
    early_stopping: bool = True
    early_stopping_patience: int = 3
    lr_adjustment: str = "warm up"
    percent_of_epochs_for_warm_up: float = 10
    train_test_split: float = 0.3
    metrics: list = field(default_factory=lambda: ["accuracy", "precision_macro", "recall_macro", "f1_macro"])
    plot_samples: bool = True
    classifier: str = "RNN"
    save_model: bool = True
    do_grid_search: bool = True
    grid_search: GridSearchConfig = field(default_factory=GridSearchConfig)
    calibration_rate: float = 0.0
    transformer_classifier: str = "logistic"
    knn_k: int = 5
    logistic_learning_rate: float = 0.5
    logistic_epochs: int = 2000
    estimator_hidden: int = 32
    estimator_epochs: int = 200
    estimator_learning_rate: float = 0.05
    estimator_batch_size: int = 256


@dataclass
class DatasetConfig:
    raw_data_available: bool = True
    sample_length: int = 7 * 96
    number_of_samples: int = 200000
    number_of_grids: typing.Optional[int] = None
    channel: str = "P"
    substation_window: int = 1440


@dataclass
class SimulationConfig:
    parallel_computing: bool = True
    cores: int = 12
    sim_length: int = 365
    step_size: int = 15
    percentage: dict = field(default_factory=lambda: {"PV": 0, "EV": 25, "BESS": 0, "HP": 0})
    broken_control_curve_choice: int = 2
    t_start: typing.Optional[int] = None
    t_end: typing.Optional[int] = None
    seed: int = 0
    load_scale_pu: float = 0.03
    load_power_factor: float = 0.95
    household_noise: float = 0.05
    tolerance: float = 1e-8
    max_iterations: int = 100
    damping: float = 0.5
    droop_tolerance: float = 1e-7
    droop_max_iterations: int = 1000
    droop_newton_after: int = 50
    substation_days: int = 14
    substation_step: int = 1
    substation_runs: int = 3
    field_noise: float = 0.002
    measured_fraction: float = 0.5


@dataclass
class ExperimentConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    learning: LearningConfig = field(default_factory=LearningConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    simulation: SimulationConfig = field(default_factory=SimulationConfig)
    source: typing.Optional[str] = field(default=None, compare=False)

    @property
    def workers(self) -> int:
        return self.simulation.cores if self.simulation.parallel_computing else 1

    @property
    def samples_per_day(self) -> int:
        return 1440 // self.simulation.step_size

    def resolve(self, folder: str) -> Path:
        """Path of a configured folder, relative paths taken from the config file's directory."""
        p = Path(getattr(self.paths, folder))
        if not p.is_absolute() and self.source:
            p = Path(self.source).parent / p
        return p


SECTIONS = {"paths": PathsConfig, "learning": LearningConfig, "dataset": DatasetConfig, "simulation": SimulationConfig}


def _check_type(value, hint, key):
    origin = typing.get_origin(hint)
    if origin is typing.Union:
        args = [a for a in typing.get_args(hint) if a is not type(None)]
        if value is None:
            return None
        return _check_type(value, args[0], key)
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {type(value).__name__} {value!r}")
        return float(value)
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer, got {type(value).__name__} {value!r}")
        return value
    if hint in (bool, str, list, dict):
        if not isinstance(value, hint):
            raise ConfigError(f"{key}: expected {hint.__name__}, got {type(value).__name__} {value!r}")
        return value
    if dataclasses.is_dataclass(hint):
        return _build(hint, value, key)
    raise ConfigError(f"{key}: unsupported type {hint}")


def _build(cls, table, where):
    if not isinstance(table, dict):
        raise ConfigError(f"[{where}] must be a table")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(table) - names)
    if unknown:
        raise ConfigError(f"[{where}] unknown keys: {unknown}")
    kwargs = {k: _check_type(v, hints[k], f"{where}.{k}") for k, v in table.items()}
    return cls(**kwargs)


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    L, D, S = cfg.learning, cfg.dataset, cfg.simulation
    checks = [
        (L.mode in ("train", "eval"), "learning.mode must be 'train' or 'eval'"),
        (L.type in ("PV", "EV"), "learning.type must be 'PV' or 'EV'"),
        (L.classifier in ("RNN", "logistic", "knn"), "learning.classifier must be 'RNN', 'logistic' or 'knn'"),
        (L.transformer_classifier in ("logistic", "knn"), "learning.transformer_classifier must be 'logistic' or 'knn'"),
        (L.activation_function in ("relu", "tanh"), "learning.activation_function must be 'relu' or 'tanh'"),
        (L.optimizer == "SGD", "learning.optimizer: only 'SGD' is implemented"),
        (L.decision_criteria == "majority vote", "learning.decision_criteria: only 'majority vote' is implemented"),
        (L.lr_adjustment in ("warm up", "none"), "learning.lr_adjustment must be 'warm up' or 'none'"),
        (len(L.rnn_model_settings) >= 3 and all(isinstance(v, int) and v >= 1 for v in L.rnn_model_settings[:3]),
         "learning.rnn_model_settings needs [input dim, hidden dim, layers, ...] as positive integers"),
        (L.rnn_model_settings[:1] == [1], "learning.rnn_model_settings: input dim must be 1 (single channel)"),
        (L.number_of_epochs >= 1, "learning.number_of_epochs must be >= 1"),
        (L.learning_rate > 0, "learning.learning_rate must be positive"),
        (L.mini_batch_size >= 1, "learning.mini_batch_size must be >= 1"),
        (L.k_folds >= 1, "learning.k_folds must be >= 1"),
        (0 <= L.percent_of_epochs_for_warm_up <= 100, "learning.percent_of_epochs_for_warm_up must be in [0, 100]"),
        (0 < L.train_test_split < 1, "learning.train_test_split must be in (0, 1)"),
        (0 <= L.calibration_rate <= 1, "learning.calibration_rate must be in [0, 1]"),
        (len(L.grid_search.values) > 0, "learning.grid_search.values must not be empty"),
        (L.knn_k >= 1, "learning.knn_k must be >= 1"),
        (D.sample_length >= 2, "dataset.sample_length must be >= 2"),
        (D.number_of_samples >= 2 and D.number_of_samples % 2 == 0, "dataset.number_of_samples must be even and >= 2"),
        (D.number_of_grids is None or D.number_of_grids >= 1, "dataset.number_of_grids must be >= 1"),
        (D.channel in ("P", "V"), "dataset.channel must be 'P' or 'V'"),
        (D.substation_window >= 2, "dataset.substation_window must be >= 2"),
        (S.broken_control_curve_choice in (1, 2), "simulation.broken_control_curve_choice must be 1 (flat) or 2 (inverted)"),
        (S.step_size in (1, 5, 15, 60), "simulation.step_size must be one of 1, 5, 15, 60"),
        (S.substation_step in (1, 5, 15, 60), "simulation.substation_step must be one of 1, 5, 15, 60"),
        (S.sim_length >= 1 and S.substation_days >= 1, "simulation lengths must be >= 1 day"),
        (S.cores >= 1, "simulation.cores must be >= 1"),
        (S.seed >= 0, "simulation.seed must be non-negative"),
        (all(k in ("PV", "EV", "BESS", "HP") for k in S.percentage), "simulation.percentage keys must be PV, EV, BESS, HP"),
        (all(isinstance(v, (int, float)) and 0 <= v <= 100 for v in S.percentage.values()),
         "simulation.percentage values must be in [0, 100]"),
        (0 < S.damping <= 1, "simulation.damping must be in (0, 1]"),
        (S.tolerance > 0 and S.droop_tolerance > 0, "simulation tolerances must be positive"),
        (0 < S.load_power_factor <= 1, "simulation.load_power_factor must be in (0, 1]"),
        (0 <= S.measured_fraction <= 1, "simulation.measured_fraction must be in [0, 1]"),
        (S.substation_runs >= 1, "simulation.substation_runs must be >= 1"),
        (S.t_start is None or S.t_end is None or S.t_end > S.t_start, "simulation.t_end must be after t_start"),
    ]
    for ok, msg in checks:
        if not ok:
            raise ConfigError(msg)
    for key in ("grid_data_folder", "raw_data_folder", "dataset_folder", "results_folder"):
        if not getattr(cfg.paths, key):
            raise ConfigError(f"paths.{key} must not be empty")
    return cfg


def config_from_dict(doc: dict, source=None) -> ExperimentConfig:
    unknown = sorted(set(doc) - set(SECTIONS))
    if unknown:
        raise ConfigError(f"unknown sections: {unknown}")
    parts = {name: _build(cls, doc.get(name, {}), name) for name, cls in SECTIONS.items()}
    return validate(ExperimentConfig(**parts, source=str(source) if source else None))


def loads_config(text: str, source=None) -> ExperimentConfig:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{source or 'config'}: {exc}") from exc
    return config_from_dict(doc, source)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    return loads_config(path.read_text(), source=path)


def _strip_none(obj):
    if isinstance(obj, dict):
        return {k: _strip_none(v) for k, v in obj.items() if v is not None}
    return obj


def config_to_dict(cfg: ExperimentConfig) -> dict:
    return _strip_none({name: dataclasses.asdict(getattr(cfg, name)) for name in SECTIONS})


def dumps_config(cfg: ExperimentConfig) -> str:
    return tomli_w.dumps(config_to_dict(cfg))


def with_overrides(cfg: ExperimentConfig, section: str, **values) -> ExperimentConfig:
    """Copy of ``cfg`` with keys of one section replaced (type-checked like a file)."""
    doc = config_to_dict(cfg)
    doc[section].update(values)
    return config_from_dict(_strip_none(doc), cfg.source)
