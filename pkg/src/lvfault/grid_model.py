"""Radial low-voltage grid models, the JSON grid document, and device placement.

All electrical quantities are per-unit on the grid's single power base. Bus ``base_kv``
and the document's ``base_mva`` are informational only.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field, replace
from fractions import Fraction
from functools import cached_property
from importlib import resources
from pathlib import Path

import numpy as np

from .control_curves import DEVICE_KINDS, CurveVariant, correct_variant, variant_from_doc

BUS_KINDS = ("slack", "pq")

# Default device ratings in pu of a 100 kVA base.
DEFAULT_RATED_PU = {"EV": 0.11, "PV": 0.08, "BESS": 0.05, "HP": 0.03}


class GridError(ValueError):
    """A grid document or model that violates the radial-grid invariants."""


@dataclass(frozen=True)
class Bus:
    id: str
    kind: str = "pq"
    base_kv: float = 0.4

    def __post_init__(self):
        if self.kind not in BUS_KINDS:
            raise GridError(f"bus {self.id!r}: kind must be one of {BUS_KINDS}, got {self.kind!r}")


@dataclass(frozen=True)
class Line:
    from_bus: str
    to_bus: str
    r_pu: float
    x_pu: float

    def __post_init__(self):
        if not (self.r_pu >= 0 and self.x_pu >= 0):
            raise GridError(f"line {self.from_bus}-{self.to_bus}: impedance must be non-negative")

    @property
    def impedance(self) -> complex:
        return complex(self.r_pu, self.x_pu)


@dataclass(frozen=True)
class Device:
    id: str
    bus: str
    kind: str
    rated_pu: float
    variant: CurveVariant

    def __post_init__(self):
        if self.kind not in DEVICE_KINDS:
            raise GridError(f"device {self.id!r}: kind must be one of {DEVICE_KINDS}")
        if not self.rated_pu > 0:
            raise GridError(f"device {self.id!r}: rated power must be positive")

    @property
    def sign(self) -> float:
        """+1 for consumers, -1 for PV (generation is negative consumption)."""
        return -1.0 if self.kind == "PV" else 1.0

    def with_variant(self, variant: CurveVariant) -> Device:
        return replace(self, variant=variant)


@dataclass(frozen=True)
class Topology:
    """Breadth-first ordering rooted at the slack; ``parent[order[0]] == -1``."""

    order: np.ndarray
    parent: np.ndarray
    impedance: np.ndarray  # impedance of the line feeding each bus (0 at the slack)
    slack: int


@dataclass(frozen=True)
class GridModel:
    name: str
    buses: tuple[Bus, ...]
    lines: tuple[Line, ...]
    devices: tuple[Device, ...] = ()
    base_mva: float = 0.1
    meta: dict = field(default_factory=dict, compare=False, hash=False)

    @cached_property
    def bus_index(self) -> dict[str, int]:
        return {b.id: i for i, b in enumerate(self.buses)}

    @property
    def slack(self) -> Bus:
        return next(b for b in self.buses if b.kind == "slack")

    @property
    def pq_buses(self) -> list[Bus]:
        return [b for b in self.buses if b.kind == "pq"]

    def device(self, device_id: str) -> Device:
        for d in self.devices:
            if d.id == device_id:
                return d
        raise KeyError(device_id)

    def with_devices(self, devices) -> GridModel:
        return replace(self, devices=tuple(devices))

    @cached_property
    def topology(self) -> Topology:
        n = len(self.buses)
        idx = self.bus_index
        adj: list[list[tuple[int, complex]]] = [[] for _ in range(n)]
        for ln in self.lines:
            a, b = idx[ln.from_bus], idx[ln.to_bus]
            adj[a].append((b, ln.impedance))
            adj[b].append((a, ln.impedance))
        root = idx[self.slack.id]
        parent = np.full(n, -1)
        z = np.zeros(n, dtype=complex)
        seen = np.zeros(n, dtype=bool)
        seen[root] = True
        order = []
        queue = deque([root])
        while queue:
            i = queue.popleft()
            order.append(i)
            for j, zij in adj[i]:
                if not seen[j]:
                    seen[j] = True
                    parent[j] = i
                    z[j] = zij
                    queue.append(j)
        if len(order) != n:
            raise GridError(f"grid {self.name!r} is not connected")
        return Topology(np.array(order), parent, z, root)


def validate_radial(grid: GridModel) -> list[str]:
    """Return a list of violations; an empty list means the grid is a valid radial feeder."""
    problems = []
    ids = [b.id for b in grid.buses]
    dupes = sorted({i for i in ids if ids.count(i) > 1})
    if dupes:
        problems.append(f"duplicate bus ids: {dupes}")
    slacks = [b.id for b in grid.buses if b.kind == "slack"]
    if len(slacks) != 1:
        problems.append(f"expected exactly one slack bus, found {len(slacks)}")
    known = set(ids)
    adj: dict[str, list[str]] = {i: [] for i in ids}
    for ln in grid.lines:
        missing = [e for e in (ln.from_bus, ln.to_bus) if e not in known]
        if missing:
            problems.append(f"line {ln.from_bus}-{ln.to_bus} references unknown bus {missing[0]!r}")
            continue
        if ln.from_bus == ln.to_bus:
            problems.append(f"self-loop line at bus {ln.from_bus!r}")
            continue
        adj[ln.from_bus].append(ln.to_bus)
        adj[ln.to_bus].append(ln.from_bus)
    if len(grid.lines) != len(grid.buses) - 1:
        problems.append(
            f"not radial: {len(grid.lines)} lines for {len(grid.buses)} buses "
            f"(a radial feeder has {len(grid.buses) - 1})"
        )
    if ids:
        start = slacks[0] if slacks else ids[0]
        seen = {start}
        queue = deque([start])
        while queue:
            for nxt in adj[queue.popleft()]:
                if nxt not in seen:
                    seen.add(nxt)
                    queue.append(nxt)
        isolated = [i for i in ids if i not in seen]
        if isolated:
            problems.append(f"not connected: buses {isolated} unreachable from {start!r}")
    for d in grid.devices:
        if d.bus not in known:
            problems.append(f"device {d.id!r} placed at unknown bus {d.bus!r}")
    dev_ids = [d.id for d in grid.devices]
    if len(set(dev_ids)) != len(dev_ids):
        problems.append("duplicate device ids")
    return problems


_TOP_FIELDS = {"name", "base_mva", "buses", "lines", "devices"}
_BUS_FIELDS = {"id", "kind", "base_kv"}
_LINE_FIELDS = {"from", "to", "r_pu", "x_pu"}
_DEVICE_FIELDS = {"id", "bus", "kind", "rated_pu", "variant"}


def _check_fields(obj, allowed, required, where):
    if not isinstance(obj, dict):
        raise GridError(f"{where}: expected an object, got {type(obj).__name__}")
    unknown = set(obj) - allowed
    if unknown:
        raise GridError(f"{where}: unknown fields {sorted(unknown)}")
    missing = set(required) - set(obj)
    if missing:
        raise GridError(f"{where}: missing fields {sorted(missing)}")


def grid_from_dict(doc: dict) -> GridModel:
    _check_fields(doc, _TOP_FIELDS, {"name", "buses", "lines"}, "grid")
    buses = []
    for i, b in enumerate(doc["buses"]):
        _check_fields(b, _BUS_FIELDS, {"id", "kind"}, f"buses[{i}]")
        buses.append(Bus(str(b["id"]), b["kind"], float(b.get("base_kv", 0.4))))
    lines = []
    for i, ln in enumerate(doc["lines"]):
        _check_fields(ln, _LINE_FIELDS, _LINE_FIELDS, f"lines[{i}]")
        lines.append(Line(str(ln["from"]), str(ln["to"]), float(ln["r_pu"]), float(ln["x_pu"])))
    devices = []
    for i, d in enumerate(doc.get("devices", [])):
        _check_fields(d, _DEVICE_FIELDS, {"id", "bus", "kind", "rated_pu"}, f"devices[{i}]")
        try:
            variant = variant_from_doc(d["kind"], d.get("variant"))
        except ValueError as exc:
            raise GridError(f"devices[{i}]: {exc}") from exc
        devices.append(Device(str(d["id"]), str(d["bus"]), d["kind"], float(d["rated_pu"]), variant))
    return GridModel(
        name=str(doc["name"]),
        buses=tuple(buses),
        lines=tuple(lines),
        devices=tuple(devices),
        base_mva=float(doc.get("base_mva", 0.1)),
    )


def load_grid(document: str) -> GridModel:
    """Parse and validate a grid document (JSON text)."""
    try:
        doc = json.loads(document)
    except json.JSONDecodeError as exc:
        raise GridError(f"grid document is not valid JSON: {exc}") from exc
    grid = grid_from_dict(doc)
    problems = validate_radial(grid)
    if problems:
        raise GridError(f"grid {grid.name!r} invalid: " + "; ".join(problems))
    return grid


def read_grid(path) -> GridModel:
    return load_grid(Path(path).read_text())


def grid_to_dict(grid: GridModel) -> dict:
    doc = {
        "name": grid.name,
        "base_mva": grid.base_mva,
        "buses": [{"id": b.id, "kind": b.kind, "base_kv": b.base_kv} for b in grid.buses],
        "lines": [
            {"from": ln.from_bus, "to": ln.to_bus, "r_pu": ln.r_pu, "x_pu": ln.x_pu} for ln in grid.lines
        ],
    }
    if grid.devices:
        doc["devices"] = [
            {"id": d.id, "bus": d.bus, "kind": d.kind, "rated_pu": d.rated_pu, "variant": d.variant.to_dict()}
            for d in grid.devices
        ]
    return doc


def export_grid(grid: GridModel) -> str:
    return json.dumps(grid_to_dict(grid), indent=2) + "\n"


def placement_count(percent, eligible: int) -> int:
    """round(percent/100 * eligible), ties upward, in exact arithmetic."""
    x = Fraction(percent) * eligible / 100
    return int(x + Fraction(1, 2)) if x >= 0 else 0


def place_devices(grid: GridModel, percentages: dict, seed: int, rated_pu: dict | None = None) -> GridModel:
    """Place devices of each kind on a seeded random subset of the pq buses.

    Every placed device starts with its correct curve. Kinds are independent draws,
    so one bus may host e.g. both a PV unit and an EV charger.
    """
    ratings = {**DEFAULT_RATED_PU, **(rated_pu or {})}
    eligible = [b.id for b in grid.pq_buses]
    devices = list(grid.devices)
    for kind in DEVICE_KINDS:
        pct = percentages.get(kind, 0)
        if not 0 <= pct <= 100:
            raise ValueError(f"percentage for {kind} must be in [0, 100], got {pct}")
        count = placement_count(pct, len(eligible))
        if count == 0:
            continue
        rng = np.random.default_rng([seed, DEVICE_KINDS.index(kind)])
        chosen = sorted(rng.choice(len(eligible), size=count, replace=False))
        for i in chosen:
            devices.append(Device(f"{kind}_{eligible[i]}", eligible[i], kind, ratings[kind], correct_variant(kind)))
    placed = grid.with_devices(devices)
    problems = validate_radial(placed)
    if problems:
        raise GridError("; ".join(problems))
    return placed


def random_radial_grid(n_buses: int, seed: int, r_range=(0.005, 0.05), x_range=(0.002, 0.02), name=None) -> GridModel:
    """Random tree feeder: bus k attaches to a uniformly drawn earlier bus."""
    if n_buses < 1:
        raise ValueError("need at least one bus")
    rng = np.random.default_rng(seed)
    buses = [Bus("b0", "slack")] + [Bus(f"b{k}") for k in range(1, n_buses)]
    lines = []
    for k in range(1, n_buses):
        parent = int(rng.integers(0, k))
        lines.append(Line(f"b{parent}", f"b{k}", float(rng.uniform(*r_range)), float(rng.uniform(*x_range))))
    return GridModel(name or f"random_{n_buses}_{seed}", tuple(buses), tuple(lines))


def fixture_names() -> list[str]:
    root = resources.files("lvfault") / "data" / "grids"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def load_fixture(name: str) -> GridModel:
    """Load one of the feeders shipped with the package (see ``fixture_names``)."""
    path = resources.files("lvfault") / "data" / "grids" / f"{name}.json"
    return load_grid(path.read_text())
