"""Radial AC load flow by backward-forward sweep, P(U) droop resolution, and
profile-driven time-series simulation.

Every solver works on a batch of independent snapshots at once: complex powers
are arrays of shape ``(n_bus, n_snapshots)`` and each column converges on its
own (columns that have converged are frozen). A column's result therefore does
not depend on what else is in the batch, which keeps a single snapshot solve
bit-identical to the same snapshot inside a year-long run.
"""

from __future__ import annotations

import concurrent.futures as cf
import traceback
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .control_curves import eval_curve
from .grid_model import Device, GridModel, Topology, validate_radial
from .profiles import Profile


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SolverSettings:
    tolerance: float = 1e-8
    max_iterations: int = 100
    damping: float = 0.5
    droop_tolerance: float = 1e-7
    droop_max_iterations: int = 1000
    droop_newton_after: int = 50
    slack_voltage: complex = 1.0 + 0.0j

    def __post_init__(self):
        if not self.tolerance > 0 or not self.droop_tolerance > 0:
            raise ValueError("tolerances must be positive")
        if self.max_iterations < 1 or self.droop_max_iterations < 1 or self.droop_newton_after < 0:
            raise ValueError("iteration limits must be >= 1")
        if not 0 < self.damping <= 1:
            raise ValueError(f"damping must be in (0, 1], got {self.damping}")


@dataclass(frozen=True)
class Injection:
    bus: str
    power: complex  # consumption positive


@dataclass
class PowerFlowResult:
    bus_ids: tuple[str, ...]
    voltages: np.ndarray  # complex, aligned with bus_ids
    iterations: int
    converged: bool
    diagnostic: str = ""

    def voltage(self, bus_id: str) -> complex:
        return complex(self.voltages[self.bus_ids.index(bus_id)])


@dataclass
class DroopResult:
    flow: PowerFlowResult
    device_power: dict[str, complex]
    outer_iterations: int
    converged: bool


@dataclass
class TimeSeriesResult:
    step_minutes: int
    t_start: int
    bus_ids: tuple[str, ...]
    voltage: np.ndarray  # |V| per bus, shape (n_bus, T)
    device_ids: tuple[str, ...]
    device_p: np.ndarray  # (n_dev, T)
    device_q: np.ndarray
    substation: dict[str, np.ndarray] = field(default_factory=dict)  # keys V, P, Q, I
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return self.voltage.shape[1]

    def bus_voltage(self, bus_id: str) -> np.ndarray:
        return self.voltage[self.bus_ids.index(bus_id)]

    def device_power(self, device_id: str) -> np.ndarray:
        return self.device_p[self.device_ids.index(device_id)]


def _sweep(topo: Topology, S: np.ndarray, v_slack: complex, tol: float, max_iter: int):
    """Backward-forward sweep over the columns of ``S`` (consumption, pu).

    Returns voltages, per-column iteration counts, and a converged mask.
    Columns whose iterate becomes non-finite are reported as not converged.
    """
    n, T = S.shape
    order, parent, z, root = topo.order, topo.parent, topo.impedance, topo.slack
    V = np.full((n, T), v_slack, dtype=complex)
    iters = np.zeros(T, dtype=int)
    active = np.ones(T, dtype=bool)
    failed = np.zeros(T, dtype=bool)
    with np.errstate(all="ignore"):
        for it in range(1, max_iter + 1):
            idx = np.flatnonzero(active)
            if idx.size == 0:
                break
            full = idx.size == T
            Va = V if full else V[:, idx]
            I = np.conj((S if full else S[:, idx]) / Va)
            for b in order[:0:-1]:
                I[parent[b]] += I[b]
            Vn = np.empty_like(Va)
            Vn[root] = v_slack
            for b in order[1:]:
                Vn[b] = Vn[parent[b]] - z[b] * I[b]
            dv = np.max(np.abs(Vn - Va), axis=0)
            if full:
                V = Vn
            else:
                V[:, idx] = Vn
            iters[idx] = it
            bad = ~np.isfinite(dv)
            stop = bad | (dv < tol)
            active[idx[stop]] = False
            failed[idx[bad]] = True
    return V, iters, ~active & ~failed


def _branch_currents(topo: Topology, S: np.ndarray, V: np.ndarray) -> np.ndarray:
    """Current flowing into each bus from its parent; row ``slack`` holds the total feeder current."""
    I = np.conj(S / V)
    for b in topo.order[:0:-1]:
        I[topo.parent[b]] += I[b]
    return I


def _injection_vector(grid: GridModel, injections) -> np.ndarray:
    S = np.zeros(len(grid.buses), dtype=complex)
    items = injections.items() if isinstance(injections, Mapping) else ((i.bus, i.power) for i in injections)
    for bus, power in items:
        if bus not in grid.bus_index:
            raise ValueError(f"injection at unknown bus {bus!r}")
        if not np.isfinite(power):
            raise ValueError(f"non-finite injection at bus {bus!r}")
        S[grid.bus_index[bus]] += power
    return S


def _require_radial(grid: GridModel):
    problems = validate_radial(grid)
    if problems:
        raise ValueError(f"grid {grid.name!r} is not a valid radial feeder: " + "; ".join(problems))


def solve_snapshot(grid: GridModel, injections, settings: SolverSettings = SolverSettings()) -> PowerFlowResult:
    """Solve one load-flow snapshot. ``injections`` is a {bus: complex} mapping or a list of Injection."""
    _require_radial(grid)
    S = _injection_vector(grid, injections)[:, None]
    V, iters, conv = _sweep(grid.topology, S, settings.slack_voltage, settings.tolerance, settings.max_iterations)
    diag = ""
    if not conv[0]:
        diag = (
            "voltage collapse: non-finite iterate"
            if not np.all(np.isfinite(V))
            else f"no convergence within {settings.max_iterations} iterations"
        )
    return PowerFlowResult(tuple(b.id for b in grid.buses), V[:, 0], int(iters[0]), bool(conv[0]), diag)


def _targets(topo, S_base, p, dev_bus, dev_curves, dev_sign, avail, settings):
    """Load flow with device powers ``p`` added, then the curve setpoints at the resulting voltages."""
    S = S_base.copy()
    for d in range(len(dev_bus)):
        S[dev_bus[d]] += p[d]
    V, _, conv = _sweep(topo, S, settings.slack_voltage, settings.tolerance, settings.max_iterations)
    target = np.empty_like(p)
    for d in range(len(dev_bus)):
        target[d] = dev_sign[d] * eval_curve(dev_curves[d], np.abs(V[dev_bus[d]])) * avail[d]
    return V, target, conv


def _newton_steps(topo, S_base, pa, delta, dev_bus, dev_curves, dev_sign, avail, settings):
    """Newton update for F(p) = target(p) - p with a forward-difference Jacobian.

    Columns whose (I - J) is singular fall back to the damped step.
    """
    D, m = pa.shape
    h = 1e-7
    _, base, _ = _targets(topo, S_base, pa, dev_bus, dev_curves, dev_sign, avail, settings)
    J = np.empty((m, D, D))
    for j in range(D):
        bumped = pa.copy()
        bumped[j] += h
        _, tj, _ = _targets(topo, S_base, bumped, dev_bus, dev_curves, dev_sign, avail, settings)
        J[:, :, j] = ((tj - base) / h).T
    A = np.eye(D)[None] - J
    step = settings.damping * delta
    ok = np.abs(np.linalg.det(A)) > 1e-10
    if ok.any():
        step[:, ok] = np.linalg.solve(A[ok], delta[:, ok].T[:, :, None])[:, :, 0].T
    return step


def _droop_batch(topo, S_base, dev_bus, dev_curves, dev_sign, avail, settings: SolverSettings):
    """Fixed point between device P(U) curves and the load flow, per column.

    Damped iteration first; columns still unresolved after ``droop_newton_after``
    outer iterations also try Newton steps, which matters when many devices share a
    feeder and the loop gain approaches one. The damped iteration only settles on
    stable equilibria, and Newton steps are screened so they do not pull a column
    toward an unstable one. Device powers stay inside the
    range their curves can produce.

    ``avail`` (n_dev, T) is each device's available power magnitude before the curve.
    Returns voltages, device active powers, outer iteration counts, converged mask.
    """
    n, T = S_base.shape
    D = len(dev_bus)
    v0 = abs(settings.slack_voltage)
    p = np.empty((D, T))
    lo = np.empty((D, T))
    hi = np.empty((D, T))
    for d in range(D):
        p[d] = dev_sign[d] * eval_curve(dev_curves[d], np.full(T, v0)) * avail[d]
        f = dev_curves[d].factors
        ends = dev_sign[d] * avail[d] * np.array([[min(f)], [max(f)]])
        lo[d], hi[d] = ends.min(axis=0), ends.max(axis=0)
    V = np.empty((n, T), dtype=complex)
    outer = np.zeros(T, dtype=int)
    active = np.ones(T, dtype=bool)
    failed = np.zeros(T, dtype=bool)
    for it in range(1, settings.droop_max_iterations + 1):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        pa = p[:, idx]
        Va, target, conv = _targets(topo, S_base[:, idx], pa, dev_bus, dev_curves, dev_sign, avail[:, idx], settings)
        V[:, idx] = Va
        outer[idx] = it
        delta = target - pa
        change = np.max(np.abs(delta), axis=0) if D else np.zeros(idx.size)
        bad = ~conv | ~np.isfinite(change)
        done = bad | (change < settings.droop_tolerance)
        step = ~done
        cols = idx[step]
        damped = np.clip(pa[:, step] + settings.damping * delta[:, step], lo[:, cols], hi[:, cols])
        if it > settings.droop_newton_after and step.any():
            inc = _newton_steps(
                topo, S_base[:, cols], pa[:, step], delta[:, step], dev_bus, dev_curves, dev_sign, avail[:, cols], settings
            )
            newton = np.clip(pa[:, step] + inc, lo[:, cols], hi[:, cols])
            # Keep a Newton step only when it heads the way the damped iteration does.
            # Opposing directions mean the nearby fixed point is unstable (loop gain
            # above one), and chasing it against the curve limits stalls the column.
            aligned = np.sum((newton - pa[:, step]) * delta[:, step], axis=0) > 0
            p[:, cols] = np.where(aligned, newton, damped)
        else:
            p[:, cols] = damped
        active[idx[done]] = False
        failed[idx[bad]] = True
    return V, p, outer, ~active & ~failed


def _device_arrays(grid: GridModel, devices: Sequence[Device]):
    dev_bus = np.array([grid.bus_index[d.bus] for d in devices], dtype=int)
    curves = [d.variant.curve for d in devices]
    signs = np.array([d.sign for d in devices])
    return dev_bus, curves, signs


def solve_with_droop(
    grid: GridModel,
    base_injections,
    devices: Sequence[Device] | None = None,
    settings: SolverSettings = SolverSettings(),
    availability: Mapping[str, float] | None = None,
) -> DroopResult:
    """Resolve device powers p = sign * p_factor(|V|) * rated * availability together with the load flow."""
    _require_radial(grid)
    devices = list(grid.devices if devices is None else devices)
    availability = availability or {}
    S = _injection_vector(grid, base_injections)[:, None]
    dev_bus, curves, signs = _device_arrays(grid, devices)
    avail = np.array([[d.rated_pu * availability.get(d.id, 1.0)] for d in devices]).reshape(len(devices), 1)
    V, p, outer, conv = _droop_batch(grid.topology, S, dev_bus, curves, signs, avail, settings)
    flow = PowerFlowResult(
        tuple(b.id for b in grid.buses),
        V[:, 0],
        0,
        bool(conv[0]),
        "" if conv[0] else f"droop fixed point not reached in {settings.droop_max_iterations} outer iterations",
    )
    # inner iteration count of the final solve
    S_fin = S.copy()
    for d in range(len(devices)):
        S_fin[dev_bus[d]] += p[d]
    _, iters, _ = _sweep(grid.topology, S_fin, settings.slack_voltage, settings.tolerance, settings.max_iterations)
    flow.iterations = int(iters[0])
    powers = {d.id: complex(p[i, 0]) for i, d in enumerate(devices)}
    return DroopResult(flow, powers, int(outer[0]), bool(conv[0]))


@dataclass(frozen=True)
class ProfileAssignment:
    """Which profile drives what.

    ``bus_loads`` maps a bus to its household profile (scaled by ``load_scale_pu``,
    reactive share from ``load_power_factor``); ``device_availability`` maps a device
    id to a profile in [0, 1] multiplying its rated power. Devices without an entry
    run at full availability.
    """

    bus_loads: Mapping[str, Profile]
    device_availability: Mapping[str, Profile] = field(default_factory=dict)
    load_scale_pu: float = 0.03
    load_power_factor: float = 0.95


def simulate_timeseries(
    grid: GridModel,
    assignment: ProfileAssignment,
    devices: Sequence[Device] | None = None,
    t_start: int | None = None,
    t_end: int | None = None,
    step_minutes: int = 15,
    settings: SolverSettings = SolverSettings(),
) -> TimeSeriesResult:
    """One droop-resolved snapshot per step over [t_start, t_end) (step indices).

    Without explicit bounds the horizon is the shortest assigned profile.
    """
    _require_radial(grid)
    devices = list(grid.devices if devices is None else devices)
    profiles = list(assignment.bus_loads.values()) + list(assignment.device_availability.values())
    if not profiles:
        raise SimulationError("no profiles assigned; cannot infer the horizon")
    for prof in profiles:
        if prof.step_minutes != step_minutes:
            raise SimulationError(
                f"profile step {prof.step_minutes} min does not match simulation step {step_minutes} min"
            )
    shortest = min(len(p) for p in profiles)
    t0 = 0 if t_start is None else int(t_start)
    t1 = shortest if t_end is None else int(t_end)
    if t1 <= t0:
        raise SimulationError(f"empty horizon: t_start={t0}, t_end={t1}")
    if t0 < 0 or t1 > shortest:
        raise SimulationError(f"horizon [{t0}, {t1}) not covered by profiles of length {shortest}")
    T = t1 - t0

    n = len(grid.buses)
    tan_phi = np.tan(np.arccos(assignment.load_power_factor))
    S_base = np.zeros((n, T), dtype=complex)
    for bus, prof in assignment.bus_loads.items():
        p = assignment.load_scale_pu * prof.values[t0:t1]
        S_base[grid.bus_index[bus]] += p + 1j * p * tan_phi

    avail = np.empty((len(devices), T))
    for i, d in enumerate(devices):
        prof = assignment.device_availability.get(d.id)
        avail[i] = d.rated_pu * (1.0 if prof is None else prof.values[t0:t1])
    dev_bus, curves, signs = _device_arrays(grid, devices)
    V, p, _, conv = _droop_batch(grid.topology, S_base, dev_bus, curves, signs, avail, settings)
    if not conv.all():
        k = int(np.flatnonzero(~conv)[0])
        raise SimulationError(f"load flow did not converge at step {t0 + k} of grid {grid.name!r}")

    S_tot = S_base.copy()
    for d in range(len(devices)):
        S_tot[dev_bus[d]] += p[d]
    I = _branch_currents(grid.topology, S_tot, V)
    root = grid.topology.slack
    s_slack = V[root] * np.conj(I[root])
    v_slack = np.abs(V[root])
    substation = {"V": v_slack, "P": s_slack.real, "Q": s_slack.imag, "I": np.abs(s_slack) / v_slack}
    return TimeSeriesResult(
        step_minutes=step_minutes,
        t_start=t0,
        bus_ids=tuple(b.id for b in grid.buses),
        voltage=np.abs(V),
        device_ids=tuple(d.id for d in devices),
        device_p=p,
        device_q=np.zeros_like(p),
        substation=substation,
    )


@dataclass
class ScenarioFailure:
    index: int
    error: str

    def __bool__(self):
        return False


def _run_one(args):
    index, task = args
    try:
        return task()
    except Exception as exc:  # reported per scenario, the batch carries on
        return ScenarioFailure(index, f"{type(exc).__name__}: {exc}\n{traceback.format_exc(limit=3)}")


def run_parallel(scenarios: Sequence[Callable[[], TimeSeriesResult]], worker_count: int = 1) -> list:
    """Run zero-argument scenario callables, results in input order.

    Failed scenarios come back as ``ScenarioFailure`` entries. Scenarios must be
    picklable when ``worker_count > 1``.
    """
    if worker_count < 1:
        raise ValueError(f"worker_count must be >= 1, got {worker_count}")
    jobs = list(enumerate(scenarios))
    if not jobs:
        return []
    if worker_count == 1 or len(jobs) == 1:
        return [_run_one(job) for job in jobs]
    with cf.ProcessPoolExecutor(max_workers=min(worker_count, len(jobs))) as pool:
        return list(pool.map(_run_one, jobs))
