"""Config-driven orchestration of the three workflows: device-level detection on
connection-point windows, transformer-level detection on substation windows, and
the detection application that estimates unmeasured loads before detecting.

Every function takes an ``ExperimentConfig``; paths are resolved through it and
all randomness is derived from ``simulation.seed``.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .analysis import components_for_variance, cut_dendrogram, hierarchical_cluster, pca_fit, pca_transform
from .config import ExperimentConfig, with_overrides
from .datagen import (
    Dataset,
    DataError,
    ScenarioSettings,
    ScenarioTask,
    SubstationTask,
    apply_scaling,
    assemble_dataset,
    build_scenarios,
    derive_seed,
    load_dataset,
    load_raw,
    load_substation,
    raw_series,
    samples_from_raw,
    save_dataset,
    save_raw,
    save_substation,
    substation_series,
    substation_windows,
)
from .evaluation import (
    SCORE_COLUMNS,
    GridSearchResult,
    GridSearchSpec,
    ScoreReport,
    grid_search,
    score_predictions,
    train_test_split,
)
from .grid_model import GridModel, placement_count, read_grid
from .learners import (
    LinearModel,
    MLPConfig,
    RecurrentModel,
    TrainConfig,
    knn_predict_many,
    load_model,
    logistic_fit,
    logistic_predict,
    majority_vote,
    mlp_fit,
    mlp_predict,
    ols_fit,
    rmse,
    rnn_train,
    save_model,
    summary_features,
)
from .plots import bar_chart_svg, line_plot_svg, write_svg
from .powerflow import ScenarioFailure, SimulationError, SolverSettings, run_parallel

log = logging.getLogger(__name__)

RAW_CSV = "raw_measurements.csv"
SUBSTATION_SIM_CSV = "substation_simulated.csv"
SUBSTATION_FIELD_CSV = "substation_field.csv"
PCA_VARIANCE = 0.95
DENDROGRAM_POINTS = 30  # per origin (simulated / target grid)
ESTIMATOR_MAX_ROWS = 50_000
SAMPLE_PLOTS_PER_CLASS = 2


class PipelineError(RuntimeError):
    pass


# --- settings derived from the config -------------------------------------------------


def solver_settings(cfg: ExperimentConfig) -> SolverSettings:
    s = cfg.simulation
    return SolverSettings(
        tolerance=s.tolerance,
        max_iterations=s.max_iterations,
        damping=s.damping,
        droop_tolerance=s.droop_tolerance,
        droop_max_iterations=s.droop_max_iterations,
        droop_newton_after=s.droop_newton_after,
    )


def scenario_settings(cfg: ExperimentConfig, days: int | None = None, step: int | None = None) -> ScenarioSettings:
    s = cfg.simulation
    substation = days is not None
    return ScenarioSettings(
        device_kind=cfg.learning.type,
        percentages=dict(s.percentage),
        malfunction_choice=s.broken_control_curve_choice,
        master_seed=s.seed,
        days=days if substation else s.sim_length,
        step_minutes=step if step is not None else s.step_size,
        t_start=None if substation else s.t_start,
        t_end=None if substation else s.t_end,
        load_scale_pu=s.load_scale_pu,
        load_power_factor=s.load_power_factor,
        household_noise=s.household_noise,
    )


def train_config(cfg: ExperimentConfig) -> TrainConfig:
    L = cfg.learning
    warm = L.percent_of_epochs_for_warm_up / 100 if L.lr_adjustment == "warm up" else 0.0
    return TrainConfig(
        epochs=L.number_of_epochs,
        learning_rate=L.learning_rate,
        batch_size=L.mini_batch_size,
        optimizer=L.optimizer,
        warmup_fraction=warm,
        early_stopping=L.early_stopping,
        patience=L.early_stopping_patience,
        k_folds=L.k_folds,
        split=L.train_test_split,
        seed=cfg.simulation.seed,
    )


def discover_grids(cfg: ExperimentConfig) -> list[GridModel]:
    """Grid documents (``*.json``) of the grid data folder in name order, capped at ``number_of_grids``."""
    folder = cfg.resolve("grid_data_folder")
    files = sorted(folder.glob("*.json")) if folder.is_dir() else []
    if not files:
        raise PipelineError(f"no grid files (*.json) in {folder}")
    if cfg.dataset.number_of_grids is not None:
        if cfg.dataset.number_of_grids > len(files):
            raise PipelineError(f"number_of_grids={cfg.dataset.number_of_grids} but only {len(files)} grids in {folder}")
        files = files[: cfg.dataset.number_of_grids]
    return [read_grid(f) for f in files]


def _run_all(tasks, workers: int) -> list:
    results = run_parallel(tasks, workers)
    failures = [r for r in results if isinstance(r, ScenarioFailure)]
    if failures:
        lines = [f"  scenario {f.index}: {f.error.splitlines()[0]}" for f in failures]
        raise SimulationError(f"{len(failures)} of {len(tasks)} scenarios failed:\n" + "\n".join(lines))
    return results


def simulate_device_scenarios(cfg: ExperimentConfig, grids: list[GridModel], workers: int | None = None):
    """Simulate every paired scenario; returns (scenarios, results) in the same order."""
    settings = scenario_settings(cfg)
    scenarios = build_scenarios(settings, grids)
    solver = solver_settings(cfg)
    tasks = [ScenarioTask(sc, grids[sc.grid_index], settings, solver) for sc in scenarios]
    log.info("simulating %d scenarios on %d grid(s) with %d worker(s)", len(tasks), len(grids), workers or cfg.workers)
    return scenarios, _run_all(tasks, workers or cfg.workers)


# --- generation -------------------------------------------------------------------------


@dataclass
class GenerateOutput:
    dataset: Dataset
    dataset_path: Path
    raw_path: Path
    simulated: bool


def _dataset_name(cfg: ExperimentConfig) -> str:
    return cfg.learning.dataset


def build_dataset(cfg: ExperimentConfig, raw) -> Dataset:
    """Balanced dataset from raw series; capped at what the rarer class can supply."""
    D = cfg.dataset
    samples = [s for r in raw for s in samples_from_raw(r, D.sample_length, D.channel)]
    counts = [sum(1 for s in samples if s.label == c) for c in (0, 1)]
    n = min(D.number_of_samples, 2 * min(counts))
    if n < D.number_of_samples:
        log.warning("only %d/%d windows available; dataset capped at %d", counts[0], counts[1], n)
    if n < 2:
        raise DataError(f"not enough windows for a dataset: {counts[0]}/{counts[1]} (correct/malfunction)")
    return assemble_dataset(
        samples,
        n,
        derive_seed(cfg.simulation.seed, 7),
        channel=D.channel,
        device_kind=cfg.learning.type,
        malfunction_choice=cfg.simulation.broken_control_curve_choice,
        step_minutes=cfg.simulation.step_size,
    )


def run_generate(cfg: ExperimentConfig, workers: int | None = None) -> GenerateOutput:
    """Simulate, extract windows, assemble and persist the dataset.

    With ``raw_data_available`` the simulation is skipped and the existing raw CSV
    (or an existing dataset container) is used instead.
    """
    raw_dir, ds_dir = cfg.resolve("raw_data_folder"), cfg.resolve("dataset_folder")
    raw_path = raw_dir / RAW_CSV
    ds_path = ds_dir / _dataset_name(cfg)
    if cfg.dataset.raw_data_available:
        manifest = ds_path.with_name(ds_path.name + ".manifest.json")
        if manifest.exists():
            log.info("raw_data_available: using existing dataset %s", manifest)
            return GenerateOutput(load_dataset(ds_path), ds_path, raw_path, simulated=False)
        if not raw_path.exists():
            raise PipelineError(
                f"raw_data_available is true but {raw_path} does not exist; "
                "set dataset.raw_data_available = false to simulate"
            )
        raw = load_raw(raw_path)
        simulated = False
    else:
        _, results = simulate_device_scenarios(cfg, discover_grids(cfg), workers)
        raw = [raw_series(r) for r in results]
        raw_dir.mkdir(parents=True, exist_ok=True)
        save_raw(raw, raw_path)
        simulated = True
    dataset = build_dataset(cfg, raw)
    ds_dir.mkdir(parents=True, exist_ok=True)
    save_dataset(dataset, ds_path)
    return GenerateOutput(dataset, ds_path, raw_path, simulated)


# --- device-level detection ---------------------------------------------------------------


@dataclass
class Detector:
    """A fitted window classifier plus the scaling it expects."""

    kind: str
    model: object
    scaling: dict
    train_X: np.ndarray | None = None  # k-NN keeps its training features
    train_y: np.ndarray | None = None
    k: int = 5
    history: dict = field(default_factory=dict)

    def features(self, windows) -> np.ndarray:
        X = np.asarray(windows, dtype=float)
        if self.kind != "RNN":
            X = summary_features(X)
        return apply_scaling(X, self.scaling)

    def predict(self, windows) -> np.ndarray:
        Z = self.features(windows)
        if self.kind == "RNN":
            return self.model.predict(Z)
        if self.kind == "logistic":
            return logistic_predict(self.model, Z)
        return knn_predict_many(self.train_X, self.train_y, self.k, Z)


def _stats(X) -> dict:
    return {"mean": X.mean(axis=0).tolist(), "std": X.std(axis=0).tolist()}


def fit_detector(cfg: ExperimentConfig, windows, labels, classifier: str | None = None) -> Detector:
    """Train the configured classifier on raw (unscaled) windows.

    The RNN sees per-position z-scored windows; logistic regression and k-NN see
    z-scored summary features. Statistics come from the training rows only.
    """
    kind = classifier or cfg.learning.classifier
    L = cfg.learning
    X = np.asarray(windows, dtype=float)
    y = np.asarray(labels, dtype=int)
    feats = X if kind == "RNN" else summary_features(X)
    scaling = _stats(feats)
    Z = apply_scaling(feats, scaling)
    if kind == "RNN":
        _, hidden, layers = L.rnn_model_settings[:3]
        init = RecurrentModel.initialized(1, hidden, layers, L.activation_function, seed=cfg.simulation.seed)
        model, hist = rnn_train(init, Z, y, train_config(cfg))
        return Detector(kind, model, scaling, history=hist.to_dict())
    if kind == "logistic":
        model = logistic_fit(Z, y, lr=L.logistic_learning_rate, epochs=L.logistic_epochs)
        return Detector(kind, model, scaling)
    if kind == "knn":
        return Detector(kind, None, scaling, Z, y, min(L.knn_k, y.size))
    raise PipelineError(f"unknown classifier {kind!r}")


def device_vote_report(provenance, y_true, y_pred, **metadata) -> ScoreReport:
    """Majority vote of window predictions per (grid, device, true label) group."""
    groups: dict[tuple, list] = {}
    for prov, t, p in zip(provenance, y_true, y_pred):
        groups.setdefault((prov[0], prov[1], int(t)), []).append(int(p))
    keys = sorted(groups)
    truth = [k[2] for k in keys]
    votes = [majority_vote(groups[k]) for k in keys]
    return score_predictions(truth, votes, level="device", n_devices=len(keys), **metadata)


def detect_windows(cfg, train_windows, train_labels, test_windows, test_labels, test_provenance, classifier=None):
    """Fit on one window set, score another; returns (window report, device report, detector)."""
    det = fit_detector(cfg, train_windows, train_labels, classifier)
    pred = det.predict(test_windows)
    meta = {"classifier": det.kind, "n_train": int(len(train_labels)), "n_test": int(len(test_labels))}
    window = score_predictions(test_labels, pred, level="window", **meta)
    device = device_vote_report(test_provenance, test_labels, pred, **meta)
    return window, device, det


def _model_path(cfg: ExperimentConfig, kind: str) -> Path:
    return cfg.resolve("results_folder") / "models" / f"{cfg.learning.dataset}_{kind}"


def _save_detector(cfg: ExperimentConfig, det: Detector) -> Path | None:
    if det.kind == "knn":
        log.info("k-NN keeps no parameters; nothing to save")
        return None
    path = _model_path(cfg, det.kind)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_model(det.model, path, config={"classifier": det.kind, "scaling": det.scaling}, seed=cfg.simulation.seed)
    return path


def _load_detector(cfg: ExperimentConfig, kind: str) -> Detector:
    path = _model_path(cfg, kind)
    if not path.with_name(path.name + ".manifest.json").exists():
        raise PipelineError(f"mode 'eval' needs a saved model at {path}.manifest.json; run 'train' first")
    model, manifest = load_model(path)
    return Detector(kind, model, manifest["config"]["scaling"])


@dataclass
class DetectionOutput:
    window: ScoreReport
    device: ScoreReport
    detector: Detector
    dataset: Dataset
    test_indices: np.ndarray
    model_path: Path | None = None


def run_device_detection(cfg: ExperimentConfig, dataset: Dataset | None = None, save: bool | None = None) -> DetectionOutput:
    """Split, train (or load in eval mode), predict and score at window and device level."""
    if dataset is None:
        path = cfg.resolve("dataset_folder") / _dataset_name(cfg)
        if not path.with_name(path.name + ".manifest.json").exists():
            raise PipelineError(f"dataset {path}.manifest.json not found; run 'generate' first")
        dataset = load_dataset(path)
    L = cfg.learning
    tr, te = train_test_split(dataset.labels, L.train_test_split, cfg.simulation.seed)
    prov = dataset.provenance
    test_prov = [prov[i] for i in te]
    if L.mode == "eval" and L.classifier != "knn":
        det = _load_detector(cfg, L.classifier)
        pred = det.predict(dataset.values[te])
        meta = {"classifier": det.kind, "n_train": 0, "n_test": int(te.size), "mode": "eval"}
        window = score_predictions(dataset.labels[te], pred, level="window", **meta)
        device = device_vote_report(test_prov, dataset.labels[te], pred, **meta)
        return DetectionOutput(window, device, det, dataset, te)
    window, device, det = detect_windows(
        cfg, dataset.values[tr], dataset.labels[tr], dataset.values[te], dataset.labels[te], test_prov
    )
    model_path = None
    if (L.save_model if save is None else save) and L.mode == "train":
        model_path = _save_detector(cfg, det)
    return DetectionOutput(window, device, det, dataset, te, model_path)


# --- transformer-level detection --------------------------------------------------------------


def generate_substation(cfg: ExperimentConfig, workers: int | None = None):
    """Simulated substation series for every grid plus noisy "field" series of the first
    (target) grid drawn from a separate seed stream. Returns (simulated, field)."""
    grids = discover_grids(cfg)
    S = cfg.simulation
    settings = scenario_settings(cfg, days=S.substation_days, step=S.substation_step)
    solver = solver_settings(cfg)
    tasks = []
    for gi, grid in enumerate(grids):
        for label in (0, 1):
            for run in range(S.substation_runs):
                seed = derive_seed(S.seed, gi, 2, 0, label, run)
                tasks.append(SubstationTask(f"{grid.name}/sim/{label}/{run}", grid, gi, label, seed, settings, 0.0, solver))
    n_sim = len(tasks)
    for label in (0, 1):
        for run in range(S.substation_runs):
            seed = derive_seed(S.seed, 0, 2, 1, label, run)
            tasks.append(
                SubstationTask(f"{grids[0].name}/field/{label}/{run}", grids[0], 0, label, seed, settings, S.field_noise, solver)
            )
    series = [substation_series(r) for r in _run_all(tasks, workers or cfg.workers)]
    return series[:n_sim], series[n_sim:]


def load_or_generate_substation(cfg: ExperimentConfig, workers: int | None = None):
    raw_dir = cfg.resolve("raw_data_folder")
    sim_path, field_path = raw_dir / SUBSTATION_SIM_CSV, raw_dir / SUBSTATION_FIELD_CSV
    if cfg.dataset.raw_data_available and sim_path.exists() and field_path.exists():
        return load_substation(sim_path), load_substation(field_path)
    sim, fld = generate_substation(cfg, workers)
    raw_dir.mkdir(parents=True, exist_ok=True)
    save_substation(sim, sim_path)
    save_substation(fld, field_path)
    return sim, fld


def substation_features(windows: np.ndarray) -> np.ndarray:
    """Summary features of each channel, concatenated: (n, 4 channels x 5 features)."""
    return np.hstack([summary_features(windows[:, c, :]) for c in range(windows.shape[1])])


def calibration_subset(labels, rate: float, seed: int) -> np.ndarray:
    """Stratified, seeded pick of round-half-up(rate * class size) indices per class."""
    labels = np.asarray(labels, dtype=int)
    rng = np.random.default_rng(seed)
    out = []
    for c in (0, 1):
        idx = np.flatnonzero(labels == c)
        n = int(np.floor(rate * idx.size + 0.5))
        out.append(idx[rng.permutation(idx.size)[:n]])
    return np.sort(np.concatenate(out)).astype(int)


@dataclass
class TransformerOutput:
    report: ScoreReport
    model: object
    dendrogram_path: Path | None = None


def transformer_detection(cfg: ExperimentConfig, simulated, field_series, rate: float, dendrogram_dir=None) -> TransformerOutput:
    """Train on simulated windows plus a ``rate`` fraction of the target grid's labeled
    calibration pool; score on held-out target-grid windows."""
    if not 0 <= rate <= 1:
        raise PipelineError(f"calibration rate must be in [0, 1], got {rate}")
    W = cfg.dataset.substation_window
    seed = cfg.simulation.seed
    sim = substation_windows(simulated, W)
    tgt = substation_windows(field_series, W)
    Fs, Ft = substation_features(sim.windows), substation_features(tgt.windows)
    pool, test = train_test_split(tgt.labels, cfg.learning.train_test_split, seed)
    calib = pool[calibration_subset(tgt.labels[pool], rate, derive_seed(seed, 5))]
    X = np.vstack([Fs, Ft[calib]])
    y = np.concatenate([sim.labels, tgt.labels[calib]])
    scaling = _stats(X)
    Z = apply_scaling(X, scaling)
    k = components_for_variance(pca_fit(Z), PCA_VARIANCE)
    pca = pca_fit(Z, k)
    Ptrain = pca_transform(pca, Z)
    Ptest = pca_transform(pca, apply_scaling(Ft[test], scaling))
    L = cfg.learning
    if L.transformer_classifier == "logistic":
        model = logistic_fit(Ptrain, y, lr=L.logistic_learning_rate, epochs=L.logistic_epochs)
        pred = logistic_predict(model, Ptest)
    else:
        model = None
        pred = knn_predict_many(Ptrain, y, min(L.knn_k, y.size), Ptest)
    report = score_predictions(
        tgt.labels[test],
        pred,
        calibration_rate=rate,
        classifier=L.transformer_classifier,
        n_components=k,
        explained_variance=float(pca.explained_variance_ratio.sum()),
        n_train_simulated=int(sim.labels.size),
        n_train_calibration=int(calib.size),
        n_test=int(test.size),
    )
    out = TransformerOutput(report, model)
    if dendrogram_dir is not None:
        out.dendrogram_path = _export_dendrogram(Path(dendrogram_dir), pca, scaling, Fs, sim.labels, Ft[test], tgt.labels[test], report)
    return out


def _export_dendrogram(folder: Path, pca, scaling, Fs, ys, Ft, yt, report) -> Path:
    n = DENDROGRAM_POINTS
    pts = np.vstack([Fs[:n], Ft[:n]])
    origin = ["simulated"] * min(n, len(Fs)) + ["target"] * min(n, len(Ft))
    labels = np.concatenate([ys[:n], yt[:n]])
    dend = hierarchical_cluster(pca_transform(pca, apply_scaling(pts, scaling)), "average")
    folder.mkdir(parents=True, exist_ok=True)
    path = folder / "dendrogram.csv"
    dend.write_csv(path)
    cut = cut_dendrogram(dend, 2)
    with open(folder / "dendrogram_leaves.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["leaf", "origin", "label", "cluster"])
        w.writerows([i, o, int(lab), int(c)] for i, (o, lab, c) in enumerate(zip(origin, labels, cut)))
    # share of target windows that land in a cluster holding simulated windows
    sim_clusters = {int(c) for c, o in zip(cut, origin) if o == "simulated"}
    tgt_cut = [int(c) for c, o in zip(cut, origin) if o == "target"]
    report.metadata["target_in_simulated_cluster"] = sum(c in sim_clusters for c in tgt_cut) / max(len(tgt_cut), 1)
    return path


def run_transformer_detection(cfg: ExperimentConfig, rate: float | None = None, workers: int | None = None, export=True):
    sim, fld = load_or_generate_substation(cfg, workers)
    folder = cfg.resolve("results_folder") if export else None
    return transformer_detection(cfg, sim, fld, cfg.learning.calibration_rate if rate is None else rate, folder)


# --- detection application -----------------------------------------------------------------------


@dataclass
class StageReport:
    name: str
    metrics: dict
    scores: ScoreReport | None = None

    def to_dict(self) -> dict:
        return {"name": self.name, "metrics": self.metrics, "scores": self.scores.to_dict() if self.scores else None}


@dataclass
class PipelineReport:
    stages: list = field(default_factory=list)
    artifacts: dict = field(default_factory=dict)

    def stage(self, name: str) -> StageReport:
        for s in self.stages:
            if s.name == name:
                return s
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {"stages": [s.to_dict() for s in self.stages], "artifacts": self.artifacts}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


@dataclass
class Estimate:
    mlp: object
    ols: LinearModel
    x_stats: dict
    y_mean: float
    y_std: float
    mlp_rmse: float
    ols_rmse: float

    def predict(self, X) -> np.ndarray:
        Z = apply_scaling(np.asarray(X, dtype=float), self.x_stats)
        return mlp_predict(self.mlp, Z) * self.y_std + self.y_mean


def estimate_loads(cfg: ExperimentConfig, X_train, y_train, X_test, y_test) -> Estimate:
    """Fit the MLP estimator and the OLS benchmark; RMSE of both on the test rows (pu)."""
    X_train, y_train = np.asarray(X_train, dtype=float), np.asarray(y_train, dtype=float)
    seed = cfg.simulation.seed
    if X_train.shape[0] > ESTIMATOR_MAX_ROWS:
        keep = np.sort(np.random.default_rng(derive_seed(seed, 13)).choice(X_train.shape[0], ESTIMATOR_MAX_ROWS, replace=False))
        X_train, y_train = X_train[keep], y_train[keep]
    ols = ols_fit(X_train, y_train)
    x_stats = _stats(X_train)
    y_mean = float(y_train.mean())
    y_std = float(y_train.std()) or 1.0
    L = cfg.learning
    mcfg = MLPConfig(
        hidden=L.estimator_hidden,
        epochs=L.estimator_epochs,
        learning_rate=L.estimator_learning_rate,
        batch_size=L.estimator_batch_size,
        seed=seed,
    )
    mlp = mlp_fit(apply_scaling(X_train, x_stats), (y_train - y_mean) / y_std, mcfg)
    est = Estimate(mlp, ols, x_stats, y_mean, y_std, 0.0, 0.0)
    est.mlp_rmse = rmse(y_test, est.predict(X_test))
    est.ols_rmse = rmse(y_test, ols.predict(X_test))
    return est


def estimator_features(result, device_slot: int, n_devices: int) -> np.ndarray:
    """Substation V, P, Q, I, time of day as (sin, cos) and a one-hot device slot, per step."""
    s = result.substation
    T = len(result)
    minutes = (result.t_start + np.arange(T)) * result.step_minutes % 1440
    angle = 2 * np.pi * minutes / 1440
    onehot = np.zeros((T, n_devices))
    onehot[:, device_slot] = 1.0
    return np.column_stack([s["V"], s["P"], s["Q"], s["I"], np.sin(angle), np.cos(angle), onehot])


def _windows(series: np.ndarray, length: int, label: int, prov_head: tuple, t_start: int):
    n = series.size // length
    return (
        [series[k * length : (k + 1) * length] for k in range(n)],
        [label] * n,
        [(*prov_head, t_start + k * length) for k in range(n)],
    )


def run_detection_application(cfg: ExperimentConfig, workers: int | None = None) -> PipelineReport:
    """Estimation, window mining and detection on the target (first) grid.

    A ``measured_fraction`` of the monitored devices have metered connection points;
    the rest get their P series from the load estimator. Scenarios are split into
    train and test sets; the estimator and the detector are trained on the train
    scenarios' ground truth and evaluated on the test scenarios.
    """
    report = PipelineReport()
    grids = discover_grids(cfg)[:1]
    seed = cfg.simulation.seed
    try:
        scenarios, results = simulate_device_scenarios(cfg, grids, workers)
    except Exception as exc:
        raise PipelineError(f"simulation for the detection application failed: {exc}") from exc
    devices = sorted({sc.monitored_device for sc in scenarios})
    slot = {d: i for i, d in enumerate(devices)}
    n_meas = placement_count(cfg.simulation.measured_fraction * 100, len(devices))
    rng = np.random.default_rng(derive_seed(seed, 11))
    measured = set(rng.choice(devices, n_meas, replace=False).tolist()) if n_meas else set()
    labels = np.array([sc.label for sc in scenarios])
    tr, te = train_test_split(labels, cfg.learning.train_test_split, seed)
    truth = [r.device_power(sc.monitored_device) for sc, r in zip(scenarios, results)]
    gaps = [int(i) for i in te if scenarios[i].monitored_device not in measured]

    def feats(i):
        return estimator_features(results[i], slot[scenarios[i].monitored_device], len(devices))

    # stage 1: estimation
    if not gaps:
        est = None
        metrics = {"identity": True, "mlp_rmse": 0.0, "ols_rmse": 0.0, "estimated_devices": 0}
    else:
        Xtr = np.vstack([feats(i) for i in tr])
        ytr = np.concatenate([truth[i] for i in tr])
        Xte = np.vstack([feats(i) for i in gaps])
        yte = np.concatenate([truth[i] for i in gaps])
        est = estimate_loads(cfg, Xtr, ytr, Xte, yte)
        metrics = {
            "identity": False,
            "mlp_rmse": est.mlp_rmse,
            "ols_rmse": est.ols_rmse,
            "estimated_devices": len({scenarios[i].monitored_device for i in gaps}),
        }
    metrics.update(measured_devices=sorted(measured), n_devices=len(devices))
    report.stages.append(StageReport("estimation", metrics))

    # stage 2: mining
    length = cfg.dataset.sample_length
    mined_w, mined_y, mined_p, from_meter = [], [], [], 0
    for i in te:
        sc, res = scenarios[i], results[i]
        series = truth[i] if i not in gaps else est.predict(feats(i))
        w, y, p = _windows(series, length, sc.label, (sc.grid, sc.monitored_device), res.t_start)
        mined_w += w
        mined_y += y
        mined_p += p
        from_meter += len(w) if i not in gaps else 0
    if not mined_w:
        report.stages.append(StageReport("mining", {"windows": 0, "coverage": 0.0}))
        raise PipelineError(f"no complete windows of length {length} could be mined")
    report.stages.append(
        StageReport(
            "mining",
            {"windows": len(mined_w), "measured_windows": from_meter, "coverage": from_meter / len(mined_w)},
        )
    )

    # stage 3: detection, trained on ground-truth windows of the train scenarios
    train_w, train_y = [], []
    for i in tr:
        sc, res = scenarios[i], results[i]
        w, y, _ = _windows(truth[i], length, sc.label, (), res.t_start)
        train_w += w
        train_y += y
    window, device, _ = detect_windows(cfg, np.array(train_w), train_y, np.array(mined_w), mined_y, mined_p)
    window.metadata["device_level"] = device.to_dict()
    report.stages.append(StageReport("detection", {"device_f1_macro": device.f1_macro}, window))
    return report


# --- reports and plots -------------------------------------------------------------------------


def _write_csv(path: Path, header, rows) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


def emit_reports(reports: dict, folder, tag: str) -> list[Path]:
    """``<tag>_<name>.json`` per report, ``<tag>.csv`` with one row per report and
    ``<tag>.svg``, a macro-F1 bar chart of the same rows."""
    folder = Path(folder)
    folder.mkdir(parents=True, exist_ok=True)
    out = []
    for name, rep in reports.items():
        p = folder / f"{tag}_{name}.json"
        p.write_text(rep.to_json() + "\n")
        out.append(p)
    csv_path = folder / f"{tag}.csv"
    csv_path.write_text(
        ",".join(SCORE_COLUMNS) + "\n" + "".join(rep.csv_row(name) + "\n" for name, rep in reports.items())
    )
    out.append(csv_path)
    out.append(_score_chart(csv_path, tag))
    return out


def _score_chart(csv_path: Path, title: str) -> Path:
    with open(csv_path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    svg = bar_chart_svg([r["param"] for r in rows], [float(r["f1_macro"]) for r in rows], title=f"{title}: macro F1")
    return write_svg(svg, csv_path.with_suffix(".svg"))


def emit_samples(dataset: Dataset, folder, per_class: int = SAMPLE_PLOTS_PER_CLASS) -> list[Path]:
    """First windows of each class as CSV plus line-plot SVG under ``<folder>/samples``."""
    folder = Path(folder) / "samples"
    folder.mkdir(parents=True, exist_ok=True)
    out = []
    for c in (0, 1):
        for j, i in enumerate(np.flatnonzero(dataset.labels == c)[:per_class]):
            stem = folder / f"sample_label{c}_{j}"
            out.append(_write_csv(stem.with_suffix(".csv"), ["step", "value"], enumerate(dataset.values[i].tolist())))
            out.append(_sample_chart(stem.with_suffix(".csv")))
    return out


def _sample_chart(csv_path: Path) -> Path:
    with open(csv_path, newline="") as fh:
        values = [float(r["value"]) for r in csv.DictReader(fh)]
    svg = line_plot_svg({csv_path.stem: values}, title=csv_path.stem, ylabel="pu")
    return write_svg(svg, csv_path.with_suffix(".svg"))


def emit_pipeline_report(report: PipelineReport, folder) -> list[Path]:
    folder = Path(folder)
    folder.mkdir(parents=True, exist_ok=True)
    p = folder / "app_report.json"
    p.write_text(report.to_json() + "\n")
    est = report.stage("estimation").metrics
    rows = [("mlp", repr(float(est["mlp_rmse"]))), ("ols", repr(float(est["ols_rmse"])))]
    c = _write_csv(folder / "app_estimation.csv", ["estimator", "rmse"], rows)
    svg = bar_chart_svg(["MLP", "OLS"], [float(v) for _, v in rows], title="load estimation RMSE", ylabel="pu")
    return [p, c, write_svg(svg, folder / "app_estimation.svg")]


# --- grid search -------------------------------------------------------------------------------


def _normalise_parameter(name: str) -> str:
    return name.strip().replace(" ", "_")


def run_gridsearch(cfg: ExperimentConfig, workers: int | None = None) -> GridSearchResult:
    """Grid search over ``learning.grid_search``. ``calibration_rate`` drives transformer
    detection; any other learning key drives device-level detection."""
    gs = cfg.learning.grid_search
    param = _normalise_parameter(gs.parameter)
    spec = GridSearchSpec(param, tuple(gs.values))
    folder = cfg.resolve("results_folder")
    best_path = folder / "models" / f"gridsearch_best_{param}"

    if param == "calibration_rate":
        sim, fld = load_or_generate_substation(cfg, workers)
        models = {}

        def evaluator(value):
            out = transformer_detection(cfg, sim, fld, float(value))
            models[value] = out.model
            return out.report

        def on_best(value, _report):
            if cfg.learning.save_model and isinstance(models.get(value), LinearModel):
                best_path.parent.mkdir(parents=True, exist_ok=True)
                save_model(models[value], best_path, config={param: value}, seed=cfg.simulation.seed)

    else:
        if not hasattr(cfg.learning, param):
            raise PipelineError(f"grid search parameter {gs.parameter!r} is not a learning setting")
        run_generate(cfg, workers)
        dataset = load_dataset(cfg.resolve("dataset_folder") / _dataset_name(cfg))
        detectors = {}

        def evaluator(value):
            out = run_device_detection(with_overrides(cfg, "learning", **{param: value}), dataset, save=False)
            detectors[value] = out.detector
            return out.window

        def on_best(value, _report):
            det = detectors[value]
            if cfg.learning.save_model and det.kind != "knn":
                best_path.parent.mkdir(parents=True, exist_ok=True)
                save_model(det.model, best_path, config={param: value, "scaling": det.scaling}, seed=cfg.simulation.seed)

    result = grid_search(spec, evaluator, on_best if cfg.learning.save_model else None)
    failed = [(v, err) for v, r, err in result.rows if r is None]
    if len(failed) == len(result.rows):
        raise PipelineError(f"every grid-search value failed; first error: {failed[0][1]}")
    emit_reports({str(v): r for v, r, _ in result.rows if r is not None}, folder, "gridsearch")
    return result


def replot(cfg: ExperimentConfig) -> list[Path]:
    """Re-render every SVG from the CSV files in the results folder."""
    folder = cfg.resolve("results_folder")
    if not folder.is_dir():
        raise PipelineError(f"results folder {folder} does not exist")
    out = []
    for path in sorted(folder.glob("*.csv")):
        with open(path, newline="") as fh:
            header = next(csv.reader(fh), [])
        if header == list(SCORE_COLUMNS):
            out.append(_score_chart(path, path.stem))
    out += [_sample_chart(p) for p in sorted((folder / "samples").glob("*.csv"))]
    return out


# --- desk-scale detectability study ------------------------------------------------------------


def detectability_study(cfg: ExperimentConfig, workers: int | None = None) -> dict:
    """Simulate the configured grids and measure how separable the malfunction is.

    Reports the share of steps with some bus below 0.95 pu (correct scenarios),
    the accuracy of the corr(P, V)-sign rule on every window (positive means
    correct; undefined counts as flagged) and a logistic-regression window report
    on a held-out split of the balanced dataset.
    """
    from .datagen import droop_signature  # local: only this study uses it

    scenarios, results = simulate_device_scenarios(cfg, discover_grids(cfg), workers)
    L = cfg.dataset.sample_length
    dips, hits, total = [], 0, 0
    for sc, res in zip(scenarios, results):
        if sc.label == 0:
            dips.append(float(np.mean(res.voltage.min(axis=0) < 0.95)))
        p = res.device_power(sc.monitored_device)
        v = res.bus_voltage(res.meta["bus_id"])
        for k in range(p.size // L):
            sig = droop_signature(p[k * L : (k + 1) * L], v[k * L : (k + 1) * L])
            pred = 0 if sig > 0 else 1  # nan compares False: flagged
            hits += pred == sc.label
            total += 1
    dataset = build_dataset(cfg, [raw_series(r) for r in results])
    tr, te = train_test_split(dataset.labels, cfg.learning.train_test_split, cfg.simulation.seed)
    window, device, _ = detect_windows(
        cfg,
        dataset.values[tr],
        dataset.labels[tr],
        dataset.values[te],
        dataset.labels[te],
        [dataset.provenance[i] for i in te],
        classifier="logistic",
    )
    return {
        "undervoltage_step_share": float(np.mean(dips)),
        "oracle_windows": total,
        "oracle_accuracy": hits / total if total else float("nan"),
        "dataset_windows": len(dataset),
        "logistic": window,
        "logistic_device": device,
    }
