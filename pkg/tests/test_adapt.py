import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from cbara.adapt import MechanismKind, UpdateMechanism, clip_bound, next_theta, perfect_squares
from cbara.policy import ModelCoefficients, ZERO_COEFFS

ETA = ModelCoefficients(1.0, -2.0, 0.5, 0.25, 3.0, -1.0)


def _dist(a: ModelCoefficients, b: ModelCoefficients) -> float:
    return math.sqrt(sum((u - v) ** 2 for u, v in zip(a.as_array(), b.as_array())))


def test_perfect_squares_membership():
    hits = [n for n in range(1, 150) if perfect_squares(n)]
    assert hits == [1, 4, 9, 16, 25, 36, 49, 64, 81, 100, 121, 144]


def test_direct_mechanism_tracks_the_fit():
    mech = UpdateMechanism.direct()
    assert mech.kind is MechanismKind.DIRECT
    assert next_theta(mech, 7, ZERO_COEFFS, ETA) == ETA


def test_rare_mechanism_updates_only_on_schedule():
    mech = UpdateMechanism.iru()
    assert next_theta(mech, 3, ZERO_COEFFS, ETA) == ZERO_COEFFS
    assert next_theta(mech, 4, ZERO_COEFFS, ETA) == ETA


def test_rare_mechanism_accepts_custom_schedule():
    mech = UpdateMechanism.iru(schedule=lambda n: n % 5 == 0)
    assert next_theta(mech, 5, ZERO_COEFFS, ETA) == ETA
    assert next_theta(mech, 6, ZERO_COEFFS, ETA) == ZERO_COEFFS


def test_clip_bound_decays():
    mech = UpdateMechanism.clipped(1.0, 0.5)
    assert clip_bound(mech, 4) == pytest.approx(0.5)
    assert clip_bound(mech, 100) == pytest.approx(0.1)
    faster = UpdateMechanism.clipped(2.0, 1.0)
    assert clip_bound(faster, 8) == pytest.approx(0.25)


def test_clipped_short_move_lands_on_target():
    mech = UpdateMechanism.clipped(100.0, 0.5)
    assert next_theta(mech, 4, ZERO_COEFFS, ETA) == ETA


def test_clipped_long_move_stops_at_the_bound():
    mech = UpdateMechanism.clipped(1.0, 0.5)
    out = next_theta(mech, 4, ZERO_COEFFS, ETA)
    bound = clip_bound(mech, 4)
    assert _dist(ZERO_COEFFS, out) == pytest.approx(bound, rel=1e-12)
    # clipped point stays on the segment toward the fit
    scale = bound / _dist(ZERO_COEFFS, ETA)
    for got, want in zip(out.as_array(), ETA.as_array()):
        assert got == pytest.approx(want * scale, rel=1e-12)


def test_mechanism_validation():
    with pytest.raises(ValueError):
        UpdateMechanism.clipped(0.0, 0.5)
    with pytest.raises(ValueError):
        UpdateMechanism.clipped(1.0, 0.0)
    with pytest.raises(ValueError):
        UpdateMechanism.clipped(1.0, 1.2)
    UpdateMechanism.clipped(1.0, 1.0)  # closed right endpoint


coeff_st = st.builds(ModelCoefficients, *[st.floats(-20, 20) for _ in range(6)])


@given(coeff_st, coeff_st, st.integers(1, 10**6), st.floats(0.1, 5), st.floats(0.1, 1))
def test_clipped_never_overshoots(prev, eta, n, c0, exponent):
    mech = UpdateMechanism.clipped(c0, exponent)
    out = next_theta(mech, n, prev, eta)
    assert _dist(prev, out) <= clip_bound(mech, n) + 1e-9
    assert _dist(out, eta) <= _dist(prev, eta) + 1e-9
