"""Scenario construction, labeled window extraction, dataset assembly and persistence.

A scenario simulates one grid with one *monitored* device running either its
correct curve (label 0) or the configured malfunction (label 1); all other
devices run correctly. Device-level samples are non-overlapping windows of the
monitored device's connection-point measurements.

On-disk formats:

* raw CSV, header ``scenario_id,grid,device_id,bus_id,step,v_pu,p_pu,q_pu,label``
* substation CSV, header ``scenario_id,step,v_pu,p_pu,q_pu,i_pu,label``
* dataset container: ``<name>.manifest.json`` plus ``<name>.f64``, a row-major block
  of little-endian float64 values of shape (n_samples, sample_length)
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .control_curves import CurveVariant, correct_variant, make_malfunction
from .grid_model import GridModel, place_devices
from .powerflow import ProfileAssignment, SolverSettings, TimeSeriesResult, simulate_timeseries
from .profiles import synth_ev, synth_household, synth_pv

log = logging.getLogger(__name__)

RAW_HEADER = ["scenario_id", "grid", "device_id", "bus_id", "step", "v_pu", "p_pu", "q_pu", "label"]
SUBSTATION_HEADER = ["scenario_id", "step", "v_pu", "p_pu", "q_pu", "i_pu", "label"]
CONTAINER_FORMAT = "lvfault-dataset"
CONTAINER_VERSION = 1
CHANNELS = ("P", "V")


class DataError(ValueError):
    pass


def derive_seed(*entropy: int) -> int:
    """Deterministic 63-bit seed from a tuple of non-negative integers."""
    return int(np.random.SeedSequence(list(entropy)).generate_state(1, np.uint64)[0] >> np.uint64(1))


@dataclass(frozen=True)
class ScenarioSettings:
    device_kind: str = "EV"
    percentages: dict = field(default_factory=lambda: {"PV": 0, "EV": 25, "BESS": 0, "HP": 0})
    malfunction_choice: int = 2
    master_seed: int = 0
    days: int = 365
    step_minutes: int = 15
    t_start: int | None = None
    t_end: int | None = None
    load_scale_pu: float = 0.03
    load_power_factor: float = 0.95
    household_noise: float = 0.05


@dataclass(frozen=True)
class Scenario:
    scenario_id: str
    grid: str
    grid_index: int
    placement_seed: int
    monitored_device: str
    variant: CurveVariant
    profile_seed: int
    days: int
    step_minutes: int
    t_start: int | None = None
    t_end: int | None = None

    @property
    def label(self) -> int:
        return self.variant.label


def build_scenarios(settings: ScenarioSettings, grids: Sequence[GridModel]) -> list[Scenario]:
    """Paired (correct, malfunction) scenarios for every device of the scrutinized kind on every grid."""
    if not grids:
        raise DataError("no grids to build scenarios from")
    malfunction = make_malfunction(settings.device_kind, settings.malfunction_choice)
    correct = correct_variant(settings.device_kind)
    out = []
    for gi, grid in enumerate(grids):
        pseed = derive_seed(settings.master_seed, gi, 0)
        placed = place_devices(grid, settings.percentages, pseed)
        monitored = [d for d in placed.devices if d.kind == settings.device_kind]
        if not monitored:
            raise DataError(f"grid {grid.name!r} has no {settings.device_kind} devices after placement")
        for di, dev in enumerate(monitored):
            for vi, variant in enumerate((correct, malfunction)):
                out.append(
                    Scenario(
                        scenario_id=f"{grid.name}/{dev.id}/{variant.kind.value}",
                        grid=grid.name,
                        grid_index=gi,
                        placement_seed=pseed,
                        monitored_device=dev.id,
                        variant=variant,
                        profile_seed=derive_seed(settings.master_seed, gi, 1, di, vi),
                        days=settings.days,
                        step_minutes=settings.step_minutes,
                        t_start=settings.t_start,
                        t_end=settings.t_end,
                    )
                )
    return out


def scenario_grid(scenario: Scenario, grid: GridModel, settings: ScenarioSettings) -> GridModel:
    placed = place_devices(grid, settings.percentages, scenario.placement_seed)
    return placed.with_devices(
        d.with_variant(scenario.variant) if d.id == scenario.monitored_device else d for d in placed.devices
    )


def scenario_profiles(scenario: Scenario, grid: GridModel, settings: ScenarioSettings) -> ProfileAssignment:
    days, step = scenario.days, scenario.step_minutes
    loads = {
        b.id: synth_household(derive_seed(scenario.profile_seed, 0, i), days, step, settings.household_noise)
        for i, b in enumerate(grid.pq_buses)
    }
    avail = {}
    for i, d in enumerate(grid.devices):
        seed = derive_seed(scenario.profile_seed, 1, i)
        if d.kind == "EV":
            avail[d.id] = synth_ev(seed, days, step)
        elif d.kind == "PV":
            avail[d.id] = synth_pv(seed, days, step)
    return ProfileAssignment(loads, avail, settings.load_scale_pu, settings.load_power_factor)


@dataclass
class ScenarioTask:
    """Picklable unit of work for ``powerflow.run_parallel``."""

    scenario: Scenario
    grid: GridModel
    settings: ScenarioSettings
    solver: SolverSettings = field(default_factory=SolverSettings)

    def __call__(self) -> TimeSeriesResult:
        sc = self.scenario
        grid = scenario_grid(sc, self.grid, self.settings)
        result = simulate_timeseries(
            grid,
            scenario_profiles(sc, grid, self.settings),
            t_start=sc.t_start,
            t_end=sc.t_end,
            step_minutes=sc.step_minutes,
            settings=self.solver,
        )
        dev = grid.device(sc.monitored_device)
        result.meta.update(
            scenario_id=sc.scenario_id, grid=sc.grid, device_id=dev.id, bus_id=dev.bus, label=sc.label
        )
        return result


@dataclass
class SubstationTask:
    """Whole-grid run for transformer-level data: label 1 means every device of the
    scrutinized kind runs the malfunction. ``noise`` adds seeded Gaussian measurement
    noise (pu) to the substation channels, standing in for field metering."""

    scenario_id: str
    grid: GridModel
    grid_index: int
    label: int
    profile_seed: int
    settings: ScenarioSettings
    noise: float = 0.0
    solver: SolverSettings = field(default_factory=SolverSettings)

    def __call__(self) -> TimeSeriesResult:
        st = self.settings
        placed = place_devices(self.grid, st.percentages, derive_seed(st.master_seed, self.grid_index, 0))
        if self.label:
            bad = make_malfunction(st.device_kind, st.malfunction_choice)
            placed = placed.with_devices(d.with_variant(bad) if d.kind == st.device_kind else d for d in placed.devices)
        sc = Scenario(self.scenario_id, self.grid.name, self.grid_index, 0, "", correct_variant(st.device_kind),
                      self.profile_seed, st.days, st.step_minutes)
        result = simulate_timeseries(
            placed, scenario_profiles(sc, placed, st), step_minutes=st.step_minutes, settings=self.solver
        )
        if self.noise > 0:
            rng = np.random.default_rng(derive_seed(self.profile_seed, 99))
            for key in ("V", "P", "Q", "I"):
                result.substation[key] = result.substation[key] + rng.normal(0.0, self.noise, len(result))
        result.meta.update(scenario_id=self.scenario_id, grid=self.grid.name, label=self.label)
        return result


# --- samples and datasets -------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Sample:
    values: np.ndarray
    label: int
    provenance: tuple[str, str, int]  # (grid, device, window start step)


def extract_samples(result: TimeSeriesResult, device, sample_length: int, channel: str = "P") -> list[Sample]:
    """Non-overlapping windows of the device's P or V series; the trailing partial window is dropped."""
    if channel not in CHANNELS:
        raise DataError(f"channel must be one of {CHANNELS}, got {channel!r}")
    series = result.device_power(device.id) if channel == "P" else result.bus_voltage(device.bus)
    n = series.size // sample_length
    if n == 0:
        raise DataError(f"series of length {series.size} is shorter than one window of {sample_length}")
    grid = result.meta.get("grid", "")
    label = device.variant.label
    return [
        Sample(
            np.array(series[k * sample_length : (k + 1) * sample_length]),
            label,
            (grid, device.id, result.t_start + k * sample_length),
        )
        for k in range(n)
    ]


@dataclass(eq=False)
class Dataset:
    values: np.ndarray  # (n_samples, sample_length)
    labels: np.ndarray  # int, (n_samples,)
    provenance: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim == 1 and self.values.size == 0:
            self.values = self.values.reshape(0, int(self.metadata.get("sample_length", 0)))
        self.labels = np.asarray(self.labels, dtype=int)
        if self.values.shape[0] != self.labels.shape[0]:
            raise DataError("values and labels disagree on the sample count")
        if not np.isin(self.labels, (0, 1)).all():
            raise DataError("labels must be 0 or 1")

    def __len__(self):
        return self.labels.size

    @property
    def sample_length(self) -> int:
        return self.values.shape[1]

    def subset(self, idx) -> Dataset:
        idx = np.asarray(idx, dtype=int)
        prov = [self.provenance[i] for i in idx] if self.provenance else []
        return Dataset(self.values[idx], self.labels[idx], prov, dict(self.metadata))

    def samples(self):
        for i in range(len(self)):
            yield Sample(self.values[i], int(self.labels[i]), tuple(self.provenance[i]) if self.provenance else ())


def assemble_dataset(samples: Sequence[Sample], number_of_samples: int, seed: int, **metadata) -> Dataset:
    """Strictly balanced, seeded-shuffled dataset of ``number_of_samples`` samples."""
    if number_of_samples % 2:
        raise DataError(f"number_of_samples must be even for a 50/50 balance, got {number_of_samples}")
    labels = np.array([s.label for s in samples], dtype=int)
    per_class = number_of_samples // 2
    counts = [int((labels == c).sum()) for c in (0, 1)]
    if min(counts) < per_class:
        raise DataError(
            f"insufficient samples for {number_of_samples}: need {per_class} per class, "
            f"available {counts[0]}/{counts[1]} (correct/malfunction)"
        )
    rng = np.random.default_rng(seed)
    picked = np.concatenate(
        [np.sort(rng.choice(np.flatnonzero(labels == c), size=per_class, replace=False)) for c in (0, 1)]
    )
    picked = picked[rng.permutation(picked.size)]
    length = samples[picked[0]].values.size if picked.size else int(metadata.get("sample_length", 0))
    values = np.empty((picked.size, length))
    for row, i in enumerate(picked):
        values[row] = samples[i].values
    grids = sorted({samples[i].provenance[0] for i in picked})
    meta = {
        "sample_length": length,
        "number_of_samples": int(picked.size),
        "number_of_grids": len(grids),
        "grids": grids,
        **metadata,
    }
    return Dataset(values, labels[picked], [list(samples[i].provenance) for i in picked], meta)


def apply_scaling(values: np.ndarray, stats: dict) -> np.ndarray:
    mean = np.asarray(stats["mean"])
    std = np.asarray(stats["std"])
    safe = np.where(std < 1e-12, 1.0, std)
    out = (values - mean) / safe
    out[..., std < 1e-12] = 0.0
    return out


def scale(dataset: Dataset, train_indices) -> Dataset:
    """Per-position z-score using statistics of the training rows only."""
    train_indices = np.asarray(train_indices, dtype=int)
    if train_indices.size == 0:
        raise DataError("scaling needs at least one training sample")
    train = dataset.values[train_indices]
    stats = {"mean": train.mean(axis=0).tolist(), "std": train.std(axis=0).tolist()}
    meta = dict(dataset.metadata, scaling=stats)
    return Dataset(apply_scaling(dataset.values, stats), dataset.labels.copy(), list(dataset.provenance), meta)


# --- raw measurement CSV ----------------------------------------------------------


@dataclass(eq=False)
class RawSeries:
    scenario_id: str
    grid: str
    device_id: str
    bus_id: str
    steps: np.ndarray
    v: np.ndarray
    p: np.ndarray
    q: np.ndarray
    label: int

    def __eq__(self, other):
        if not isinstance(other, RawSeries):
            return NotImplemented
        return (
            (self.scenario_id, self.grid, self.device_id, self.bus_id, self.label)
            == (other.scenario_id, other.grid, other.device_id, other.bus_id, other.label)
            and all(np.array_equal(getattr(self, a), getattr(other, a)) for a in ("steps", "v", "p", "q"))
        )


def raw_series(result: TimeSeriesResult) -> RawSeries:
    m = result.meta
    i = result.device_ids.index(m["device_id"])
    return RawSeries(
        m["scenario_id"],
        m["grid"],
        m["device_id"],
        m["bus_id"],
        np.arange(result.t_start, result.t_start + len(result)),
        np.array(result.bus_voltage(m["bus_id"])),
        np.array(result.device_p[i]),
        np.array(result.device_q[i]),
        int(m["label"]),
    )


def save_raw(results, path) -> None:
    """Write the monitored-device measurements of each result (or RawSeries) as CSV."""
    with open(path, "w", newline="") as fh:
        fh.write(",".join(RAW_HEADER) + "\n")
        for res in results:
            r = res if isinstance(res, RawSeries) else raw_series(res)
            head = f"{r.scenario_id},{r.grid},{r.device_id},{r.bus_id},"
            fh.writelines(
                f"{head}{s},{v!r},{p!r},{q!r},{r.label}\n"
                for s, v, p, q in zip(r.steps.tolist(), r.v.tolist(), r.p.tolist(), r.q.tolist())
            )


def _read_rows(path, header):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            first = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if first != header:
            raise DataError(f"{path}: header {first} does not match expected {header}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise DataError(f"{path}: line {lineno}: expected {len(header)} columns, got {len(row)}")
            yield lineno, row


def load_raw(path) -> list[RawSeries]:
    groups: dict[str, dict] = {}
    for lineno, row in _read_rows(path, RAW_HEADER):
        sid, grid, dev, bus, step, v, p, q, label = row
        try:
            vals = (int(step), float(v), float(p), float(q), int(label))
        except ValueError as exc:
            raise DataError(f"{path}: line {lineno}: {exc}") from exc
        g = groups.get(sid)
        if g is None:
            g = groups[sid] = {"meta": (grid, dev, bus, vals[4]), "rows": []}
        g["rows"].append(vals[:4])
    out = []
    for sid, g in groups.items():
        arr = np.array(g["rows"], dtype=float)
        grid, dev, bus, label = g["meta"]
        out.append(RawSeries(sid, grid, dev, bus, arr[:, 0].astype(int), arr[:, 1], arr[:, 2], arr[:, 3], label))
    return out


def samples_from_raw(series: RawSeries, sample_length: int, channel: str = "P") -> list[Sample]:
    data = series.p if channel == "P" else series.v
    n = data.size // sample_length
    if n == 0:
        raise DataError(f"series {series.scenario_id} shorter than one window of {sample_length}")
    return [
        Sample(
            data[k * sample_length : (k + 1) * sample_length].copy(),
            series.label,
            (series.grid, series.device_id, int(series.steps[k * sample_length])),
        )
        for k in range(n)
    ]


# --- substation data ----------------------------------------------------------------


@dataclass(eq=False)
class SubstationSeries:
    scenario_id: str
    grid: str
    steps: np.ndarray
    channels: np.ndarray  # (4, T) rows V, P, Q, I
    label: int


def substation_series(result: TimeSeriesResult) -> SubstationSeries:
    s = result.substation
    return SubstationSeries(
        result.meta["scenario_id"],
        result.meta.get("grid", ""),
        np.arange(result.t_start, result.t_start + len(result)),
        np.vstack([s["V"], s["P"], s["Q"], s["I"]]),
        int(result.meta["label"]),
    )


def save_substation(series: Sequence[SubstationSeries], path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(SUBSTATION_HEADER) + "\n")
        for s in series:
            # grid name travels inside the scenario id: "<grid>/<...>"
            for step, v, p, q, i in zip(s.steps.tolist(), *(c.tolist() for c in s.channels)):
                fh.write(f"{s.scenario_id},{step},{v!r},{p!r},{q!r},{i!r},{s.label}\n")


def load_substation(path) -> list[SubstationSeries]:
    groups: dict[str, dict] = {}
    for lineno, row in _read_rows(path, SUBSTATION_HEADER):
        sid = row[0]
        try:
            step, label = int(row[1]), int(row[6])
            vals = [float(x) for x in row[2:6]]
        except ValueError as exc:
            raise DataError(f"{path}: line {lineno}: {exc}") from exc
        g = groups.setdefault(sid, {"label": label, "steps": [], "vals": []})
        g["steps"].append(step)
        g["vals"].append(vals)
    return [
        SubstationSeries(sid, sid.split("/")[0], np.array(g["steps"]), np.array(g["vals"]).T, g["label"])
        for sid, g in groups.items()
    ]


@dataclass(eq=False)
class SubstationDataset:
    windows: np.ndarray  # (n, 4, window) channels V, P, Q, I
    labels: np.ndarray
    provenance: list  # (scenario_id, grid, start)


def substation_windows(series: Sequence[SubstationSeries], window: int) -> SubstationDataset:
    wins, labels, prov = [], [], []
    for s in series:
        n = s.channels.shape[1] // window
        for k in range(n):
            wins.append(s.channels[:, k * window : (k + 1) * window])
            labels.append(s.label)
            prov.append((s.scenario_id, s.grid, int(s.steps[k * window])))
    if not wins:
        raise DataError("no complete substation windows")
    return SubstationDataset(np.array(wins), np.array(labels, dtype=int), prov)


# --- dataset container -----------------------------------------------------------------


def _container_paths(path):
    path = Path(path)
    base = path.parent / path.name.removesuffix(".manifest.json").removesuffix(".f64")
    return base.with_name(base.name + ".manifest.json"), base.with_name(base.name + ".f64")


def save_dataset(dataset: Dataset, path) -> tuple[Path, Path]:
    manifest_path, block_path = _container_paths(path)
    manifest = {
        "format": CONTAINER_FORMAT,
        "version": CONTAINER_VERSION,
        "dtype": "<f8",
        "order": "row-major",
        "n_samples": len(dataset),
        "sample_length": int(dataset.values.shape[1]) if dataset.values.ndim == 2 else 0,
        "labels": dataset.labels.tolist(),
        "provenance": [list(p) for p in dataset.provenance],
        "metadata": dataset.metadata,
    }
    block_path.write_bytes(np.ascontiguousarray(dataset.values, dtype="<f8").tobytes())
    manifest_path.write_text(json.dumps(manifest, sort_keys=True, separators=(",", ":")))
    return manifest_path, block_path


def load_dataset(path) -> Dataset:
    manifest_path, block_path = _container_paths(path)
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format") != CONTAINER_FORMAT:
        raise DataError(f"{manifest_path}: not a dataset manifest")
    if manifest.get("version") != CONTAINER_VERSION:
        raise DataError(f"{manifest_path}: version {manifest.get('version')} != supported {CONTAINER_VERSION}")
    n, length = manifest["n_samples"], manifest["sample_length"]
    raw = block_path.read_bytes()
    if len(raw) != n * length * 8:
        raise DataError(
            f"{block_path}: block holds {len(raw)} bytes, manifest implies {n}x{length}x8 = {n * length * 8}"
        )
    if len(manifest["labels"]) != n:
        raise DataError(f"{manifest_path}: {len(manifest['labels'])} labels for {n} samples")
    values = np.frombuffer(raw, dtype="<f8").reshape(n, length).astype(float)
    return Dataset(values, manifest["labels"], [tuple(p) for p in manifest["provenance"]], manifest["metadata"])


def droop_signature(p: np.ndarray, v: np.ndarray) -> float:
    """corr(P, V) over the steps where the device is drawing power; nan when undefined.

    Under the correct EV curve consumption rises with voltage inside the ramp (positive
    correlation); under the inverted curve it falls (negative).
    """
    active = np.abs(p) > 0
    if active.sum() < 2:
        return float("nan")
    pa, va = p[active], v[active]
    if pa.std() < 1e-12 or va.std() < 1e-12:
        return float("nan")
    return float(np.corrcoef(pa, va)[0, 1])
