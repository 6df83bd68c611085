"""Deterministic synthetic load/generation profiles and profile CSV ingestion.

Random draws come from numpy's PCG64 generator seeded through ``SeedSequence``
with an entropy tuple ``(seed, stream_tag)``, which is reproducible across
platforms for a fixed numpy version.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

VALID_STEPS = (1, 5, 15, 60)

_HOUSEHOLD, _PV, _EV = 1, 2, 3


class ProfileError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Profile:
    step_minutes: int
    values: np.ndarray
    kind: str = "load"

    def __post_init__(self):
        if self.step_minutes not in VALID_STEPS:
            raise ProfileError(f"step size must be one of {VALID_STEPS} minutes, got {self.step_minutes}")
        vals = np.array(self.values, dtype=float)
        if vals.ndim != 1 or vals.size < 1:
            raise ProfileError("profile needs at least one value")
        if not np.all(np.isfinite(vals)):
            raise ProfileError("profile values must be finite")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    def __len__(self):
        return self.values.size

    def __eq__(self, other):
        if not isinstance(other, Profile):
            return NotImplemented
        return (
            self.step_minutes == other.step_minutes
            and self.kind == other.kind
            and np.array_equal(self.values, other.values)
        )

    @property
    def steps_per_day(self) -> int:
        return 1440 // self.step_minutes


def _check(days, step_minutes):
    if step_minutes not in VALID_STEPS:
        raise ProfileError(f"step size must be one of {VALID_STEPS} minutes, got {step_minutes}")
    if days < 1:
        raise ProfileError(f"days must be >= 1, got {days}")
    return days * 1440 // step_minutes


def hour_of_day(n_steps: int, step_minutes: int) -> np.ndarray:
    return (np.arange(n_steps) * step_minutes % 1440) / 60.0


def household_shape(h):
    """Noise-free double-peak household demand at hour-of-day ``h``."""
    h = np.asarray(h, dtype=float)
    return 0.2 + 0.3 * np.exp(-(((h - 7.5) / 1.5) ** 2)) + 0.5 * np.exp(-(((h - 19.0) / 2.0) ** 2))


def pv_shape(h, clearness=1.0):
    h = np.asarray(h, dtype=float)
    return clearness * np.maximum(0.0, np.sin(math.pi * (h - 6.0) / 12.0)) ** 1.2


def synth_household(seed: int, days: int, step_minutes: int = 15, noise_sigma: float = 0.05) -> Profile:
    n = _check(days, step_minutes)
    rng = np.random.default_rng([seed, _HOUSEHOLD])
    noise = rng.uniform(-1.0, 1.0, size=n)
    p = household_shape(hour_of_day(n, step_minutes)) + noise_sigma * noise
    return Profile(step_minutes, np.maximum(p, 0.0), "household")


def synth_pv(seed: int, days: int, step_minutes: int = 15) -> Profile:
    n = _check(days, step_minutes)
    rng = np.random.default_rng([seed, _PV])
    clearness = np.repeat(rng.uniform(0.3, 1.0, size=days), 1440 // step_minutes)
    return Profile(step_minutes, pv_shape(hour_of_day(n, step_minutes), clearness), "PV")


def ev_sessions(arrivals_min, durations_min, days: int, step_minutes: int) -> np.ndarray:
    """Demand of 1.0 from each day's (snapped) arrival for the (snapped) duration.

    Sessions running past midnight spill into the next day and are cut at the horizon end.
    """
    per_day = 1440 // step_minutes
    out = np.zeros(days * per_day)
    for day, (arr, dur) in enumerate(zip(arrivals_min, durations_min)):
        start = day * per_day + int(round(arr / step_minutes))
        width = max(1, int(round(dur / step_minutes)))
        out[start : start + width] = 1.0
    return out


def synth_ev(seed: int, days: int, step_minutes: int = 15) -> Profile:
    _check(days, step_minutes)
    rng = np.random.default_rng([seed, _EV])
    arrivals = rng.uniform(17 * 60, 21 * 60, size=days)
    durations = rng.uniform(120, 240, size=days)
    return Profile(step_minutes, ev_sessions(arrivals, durations, days, step_minutes), "EV")


def load_profile_csv(path) -> Profile:
    """Read ``# step_minutes=<int>`` then one value per line (optional leading timestamp column)."""
    lines = Path(path).read_text().splitlines()
    if not lines or not any(ln.strip() for ln in lines):
        raise ProfileError(f"{path}: empty profile file")
    header = lines[0].strip()
    if not header.startswith("#") or "step_minutes=" not in header:
        raise ProfileError(f"{path}: first line must be '# step_minutes=<int>'")
    try:
        step = int(header.split("step_minutes=", 1)[1].strip())
    except ValueError as exc:
        raise ProfileError(f"{path}: bad step size in header {header!r}") from exc
    if step <= 0:
        raise ProfileError(f"{path}: step size must be positive, got {step}")
    values = []
    for lineno, raw in enumerate(lines[1:], start=2):
        raw = raw.strip()
        if not raw:
            continue
        cell = raw.split(",")[-1].strip()
        try:
            v = float(cell)
        except ValueError as exc:
            raise ProfileError(f"{path}: line {lineno}: not a number: {cell!r}") from exc
        if not math.isfinite(v):
            raise ProfileError(f"{path}: line {lineno}: non-finite value {cell!r}")
        values.append(v)
    if not values:
        raise ProfileError(f"{path}: no values")
    kind = Path(path).stem
    return Profile(step, np.array(values), kind)


def save_profile_csv(profile: Profile, path) -> None:
    body = "\n".join(repr(float(v)) for v in profile.values)
    Path(path).write_text(f"# step_minutes={profile.step_minutes}\n{body}\n")
