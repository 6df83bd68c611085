import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lvfault.control_curves import (
    FLAT_CURVE,
    PiecewiseLinearCurve,
    VariantKind,
    correct_variant,
    default_curve,
    eval_curve,
    invert,
    make_malfunction,
    variant_from_doc,
)

EV = default_curve("EV")
PV = default_curve("PV")


@st.composite
def curves(draw):
    n = draw(st.integers(1, 6))
    us = sorted(draw(st.sets(st.floats(0.8, 1.2, allow_nan=False).map(lambda x: round(x, 4)), min_size=n, max_size=n)))
    ps = draw(st.lists(st.floats(0.0, 1.0), min_size=n, max_size=n))
    return PiecewiseLinearCurve(tuple(zip(us, ps)))


def test_default_breakpoints():
    assert EV.breakpoints == ((0.90, 0.1), (0.95, 1.0))
    assert PV.breakpoints == ((1.05, 1.0), (1.10, 0.1))


@pytest.mark.parametrize(
    "curve, u, expected",
    [(EV, 1.00, 1.0), (EV, 0.925, 0.55), (EV, 0.80, 0.1), (EV, 0.94, 0.82), (PV, 1.10, 0.1), (PV, 1.0, 1.0)],
)
def test_eval_examples(curve, u, expected):
    assert eval_curve(curve, u) == pytest.approx(expected, abs=1e-12)


def test_eval_vectorised_matches_scalar():
    us = np.linspace(0.85, 1.0, 31)
    np.testing.assert_array_equal(eval_curve(EV, us), [eval_curve(EV, float(u)) for u in us])
    assert isinstance(eval_curve(EV, 0.9), float)


def test_flat_curve_is_constant():
    assert eval_curve(FLAT_CURVE, 0.5) == 1.0
    np.testing.assert_array_equal(eval_curve(FLAT_CURVE, np.array([0.8, 1.3])), [1.0, 1.0])


def test_malfunction_variants():
    flat = make_malfunction("EV", 1)
    assert flat.kind is VariantKind.FLAT and flat.curve == FLAT_CURVE
    inv = make_malfunction("EV", 2)
    assert inv.kind is VariantKind.INVERTED
    assert inv.curve.breakpoints == ((0.90, 1.0), (0.95, 0.1))
    assert inv.label == flat.label == 1
    assert correct_variant("EV").label == 0
    with pytest.raises(ValueError, match="1 \\(flat\\) or 2"):
        make_malfunction("EV", 3)


def test_no_droop_for_storage_and_heat_pumps():
    with pytest.raises(ValueError):
        default_curve("BESS")
    assert correct_variant("HP").curve == FLAT_CURVE


def test_invert_examples():
    assert invert(EV).breakpoints == ((0.90, 1.0), (0.95, 0.1))
    assert invert(FLAT_CURVE) == FLAT_CURVE


@pytest.mark.parametrize("bad", [((0.9, 0.1), (0.9, 1.0)), ((0.95, 0.1), (0.90, 1.0)), ((1.0, 1.5),), ()])
def test_invalid_breakpoints_rejected(bad):
    with pytest.raises(ValueError):
        PiecewiseLinearCurve(bad)


@given(curves())
def test_invert_is_an_involution(c):
    assert invert(invert(c)) == c


@given(curves(), st.floats(0.7, 1.3))
def test_eval_within_factor_range(c, u):
    v = eval_curve(c, u)
    assert c.factors.min() - 1e-12 <= v <= c.factors.max() + 1e-12


@given(curves())
def test_eval_continuous_and_monotone_between_breakpoints(c):
    bps = c.breakpoints
    for (u0, p0), (u1, p1) in zip(bps, bps[1:]):
        grid = np.linspace(u0, u1, 25)
        vals = eval_curve(c, grid)
        diffs = np.diff(vals)
        assert np.all(diffs >= -1e-12) or np.all(diffs <= 1e-12)
        assert vals[0] == pytest.approx(p0) and vals[-1] == pytest.approx(p1)
    # continuity across every breakpoint: a 1e-9 nudge moves the value by at most slope * 1e-9
    steepest = max((abs(p1 - p0) / (u1 - u0) for (u0, p0), (u1, p1) in zip(bps, bps[1:])), default=0.0)
    tol = steepest * 1e-9 * (1 + 1e-6) + 1e-12
    for u, p in bps:
        assert abs(eval_curve(c, u - 1e-9) - p) <= tol
        assert abs(eval_curve(c, u + 1e-9) - p) <= tol


def test_inverted_consumes_more_wherever_correct_is_limited():
    inv = invert(EV)
    us = np.linspace(0.85, 1.0, 1000)
    correct, broken = eval_curve(EV, us), eval_curve(inv, us)
    limited = correct < 1.0
    assert limited.any()
    # the two ramps cross at the midpoint 0.925 (both 0.55): the fault over-consumes
    # below it and under-consumes between the midpoint and the top of the ramp
    below_mid = limited & (us < 0.925 - 1e-9)
    assert np.all(broken[below_mid] > correct[below_mid])
    upper_ramp = (us > 0.925 + 1e-9) & (us < 0.95)
    assert np.all(broken[upper_ramp] < correct[upper_ramp])
    assert eval_curve(inv, 0.925) == pytest.approx(eval_curve(EV, 0.925))


def test_endpoint_symmetry():
    inv = invert(EV)
    for u in (0.90, 0.95):
        assert eval_curve(EV, u) + eval_curve(inv, u) == pytest.approx(0.1 + 1.0)


def test_variant_from_doc_forms():
    assert variant_from_doc("EV", None) == correct_variant("EV")
    assert variant_from_doc("EV", "inverted") == make_malfunction("EV", 2)
    custom = variant_from_doc("EV", {"name": "inverted", "breakpoints": [[0.9, 1.0], [0.95, 0.1]]})
    assert custom.curve == invert(EV)
    assert PiecewiseLinearCurve.from_dict(EV.to_dict()) == EV
