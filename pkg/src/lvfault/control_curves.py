"""Voltage-dependent active power control laws, P(U), and their malfunction variants.

A curve maps the local voltage magnitude (pu) to a factor in [0, 1] that scales the
device's available active power. A malfunctioning device runs either a flat curve
(no droop at all) or the inverted curve (factor sequence reversed on the same
voltage breakpoints).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

DROOP_KINDS = ("EV", "PV")
DEVICE_KINDS = ("PV", "EV", "BESS", "HP")

# EV limits consumption when the voltage sags, PV curtails generation when it rises.
_DEFAULT_BREAKPOINTS = {
    "EV": ((0.90, 0.1), (0.95, 1.0)),
    "PV": ((1.05, 1.0), (1.10, 0.1)),
}


@dataclass(frozen=True)
class PiecewiseLinearCurve:
    """Sorted (u, p_factor) breakpoints, clamped to the end values outside their span."""

    breakpoints: tuple[tuple[float, float], ...]

    def __post_init__(self) -> None:
        pts = tuple((float(u), float(p)) for u, p in self.breakpoints)
        if not pts:
            raise ValueError("curve needs at least one breakpoint")
        for (u0, _), (u1, _) in zip(pts, pts[1:]):
            if not u1 > u0:
                raise ValueError(f"breakpoint voltages must be strictly increasing, got {u0} then {u1}")
        for u, p in pts:
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"p_factor {p} at u={u} outside [0, 1]")
        object.__setattr__(self, "breakpoints", pts)

    @property
    def voltages(self) -> np.ndarray:
        return np.array([u for u, _ in self.breakpoints])

    @property
    def factors(self) -> np.ndarray:
        return np.array([p for _, p in self.breakpoints])

    def __call__(self, u):
        return eval_curve(self, u)

    def to_dict(self) -> dict:
        return {"breakpoints": [[u, p] for u, p in self.breakpoints]}

    @classmethod
    def from_dict(cls, doc: dict) -> PiecewiseLinearCurve:
        return cls(tuple((u, p) for u, p in doc["breakpoints"]))


FLAT_CURVE = PiecewiseLinearCurve(((1.0, 1.0),))


class VariantKind(str, enum.Enum):
    CORRECT = "correct"
    FLAT = "flat"
    INVERTED = "inverted"


@dataclass(frozen=True)
class CurveVariant:
    kind: VariantKind
    curve: PiecewiseLinearCurve

    @property
    def is_malfunction(self) -> bool:
        return self.kind is not VariantKind.CORRECT

    @property
    def label(self) -> int:
        return int(self.is_malfunction)

    def to_dict(self) -> dict:
        return {"name": self.kind.value, **self.curve.to_dict()}


def default_curve(kind: str) -> PiecewiseLinearCurve:
    """Correct P(U) curve for a device kind; BESS and HP have no droop model."""
    if kind not in _DEFAULT_BREAKPOINTS:
        raise ValueError(f"no droop model for device kind {kind!r}; expected one of {DROOP_KINDS}")
    return PiecewiseLinearCurve(_DEFAULT_BREAKPOINTS[kind])


def eval_curve(curve: PiecewiseLinearCurve, u):
    """Interpolate the curve at voltage(s) ``u``. Scalars in, float out; arrays in, arrays out."""
    if len(curve.breakpoints) == 1:
        p = curve.breakpoints[0][1]
        return p if np.isscalar(u) else np.full(np.shape(u), p)
    out = np.interp(u, curve.voltages, curve.factors)
    return float(out) if np.isscalar(u) else out


def invert(curve: PiecewiseLinearCurve) -> PiecewiseLinearCurve:
    """Keep the voltage breakpoints, reverse the factor sequence."""
    us = [u for u, _ in curve.breakpoints]
    ps = [p for _, p in curve.breakpoints][::-1]
    return PiecewiseLinearCurve(tuple(zip(us, ps)))


def correct_variant(kind: str) -> CurveVariant:
    if kind in _DEFAULT_BREAKPOINTS:
        return CurveVariant(VariantKind.CORRECT, default_curve(kind))
    if kind in DEVICE_KINDS:
        # constant-power placeholder
        return CurveVariant(VariantKind.CORRECT, FLAT_CURVE)
    raise ValueError(f"unknown device kind {kind!r}")


def make_malfunction(kind: str, choice: int) -> CurveVariant:
    """Malfunction variant: choice 1 is the flat curve, 2 the inverted curve."""
    if choice == 1:
        default_curve(kind)  # rejects kinds without droop
        return CurveVariant(VariantKind.FLAT, FLAT_CURVE)
    if choice == 2:
        return CurveVariant(VariantKind.INVERTED, invert(default_curve(kind)))
    raise ValueError(f"broken control curve choice must be 1 (flat) or 2 (inverted), got {choice!r}")


def variant_from_doc(kind: str, doc) -> CurveVariant:
    """Parse a variant from a grid document: a name string or {name, breakpoints}."""
    if doc is None:
        return correct_variant(kind)
    if isinstance(doc, str):
        name = VariantKind(doc)
        if name is VariantKind.CORRECT:
            return correct_variant(kind)
        return make_malfunction(kind, 1 if name is VariantKind.FLAT else 2)
    if isinstance(doc, dict):
        extra = set(doc) - {"name", "breakpoints"}
        if extra:
            raise ValueError(f"unknown curve fields {sorted(extra)}")
        name = VariantKind(doc.get("name", "correct"))
        if "breakpoints" not in doc:
            return variant_from_doc(kind, name.value)
        return CurveVariant(name, PiecewiseLinearCurve.from_dict(doc))
    raise ValueError(f"cannot parse curve variant from {doc!r}")
