import numpy as np
import pytest

from frontspeed.fronts import (
    NonPositiveLinearization, SpeedBelowMinimal, kpp_minimal_speed,
    kpp_profile, shoot_front,
)
from frontspeed.media import build_medium


@pytest.fixture(scope="module")
def bistable_quarter():
    return build_medium({"N": 1, "A": "1", "q": "0", "f": "u*(1-u)*(u-0.25)"})


@pytest.fixture(scope="module")
def logistic():
    return build_medium({"N": 1, "A": "1", "q": "0", "f": "u*(1-u)"})


def test_cubic_bistable_closed_form_residual():
    # phi(z) = 1/(1+exp(z/sqrt 2)), c = (1-2 theta)/sqrt 2 solves the front ODE
    theta = 0.25
    c = (1 - 2 * theta) / np.sqrt(2)
    z = np.linspace(-20, 20, 4001)
    phi = 1.0 / (1.0 + np.exp(z / np.sqrt(2)))
    dphi = -phi * (1 - phi) / np.sqrt(2)
    d2phi = -(1 - 2 * phi) * dphi / np.sqrt(2)
    f = phi * (1 - phi) * (phi - theta)
    assert np.max(np.abs(d2phi + c * dphi + f)) <= 1e-12


def test_bistable_shooting_speed(bistable_quarter):
    fp = shoot_front(bistable_quarter)
    assert fp.c == pytest.approx((1 - 0.5) / np.sqrt(2), abs=1e-6)
    assert fp.meta["c_lo"] <= fp.c <= fp.meta["c_hi"]  # bisection sandwich
    assert fp.residual <= 1e-6
    assert fp.c > 0  # positive-mass bistable front moves forward


def test_bistable_profile_matches_closed_form(bistable_quarter):
    fp = shoot_front(bistable_quarter)
    zz = np.linspace(-15, 15, 3001)
    exact = 1.0 / (1.0 + np.exp(zz / np.sqrt(2)))
    assert np.max(np.abs(fp.value_at(zz) - exact)) <= 1e-6


def test_profile_shape_invariants(bistable_quarter):
    fp = shoot_front(bistable_quarter)
    assert fp.phi[0] >= 1 - 1e-4
    assert fp.phi[-1] <= 1e-4
    assert fp.value_at(0.0) == pytest.approx(0.5, abs=1e-9)
    diffs = np.diff(fp.phi)
    assert np.all(diffs <= 0)
    core = (fp.phi[:-1] > 1e-9) & (fp.phi[:-1] < 1 - 1e-9)
    assert np.all(diffs[core] < 0)


def test_zero_mass_bistable_speed_zero():
    with pytest.warns(UserWarning):
        m = build_medium({"N": 1, "A": "1", "q": "0", "f": "u*(1-u)*(u-0.5)"})
        fp = shoot_front(m, tol=1e-10)
    assert abs(fp.c) <= 1e-8


def test_ignition_front_positive_speed():
    m = build_medium({"N": 1, "A": "1", "q": "0",
                      "f": "max(0, u-0.3)*(1-u)"})
    fp = shoot_front(m)
    assert fp.c > 0.1
    assert fp.residual <= 1e-6
    assert np.all(np.diff(fp.phi) <= 0)


def test_kpp_minimal_speed(logistic):
    assert kpp_minimal_speed(logistic) == pytest.approx(2.0, abs=1e-12)
    m4 = build_medium({"N": 1, "A": "1", "q": "0", "f": "4*u*(1-u)"})
    assert kpp_minimal_speed(m4) == pytest.approx(4.0, abs=1e-12)


def test_kpp_degenerate_linearization_rejected():
    m = build_medium({"N": 1, "A": "1", "q": "0", "f": "u^2*(1-u)"})
    with pytest.raises(NonPositiveLinearization):
        kpp_minimal_speed(m)


def test_kpp_profile_at_minimal_speed(logistic):
    fp = kpp_profile(logistic, 2.0)
    assert fp.residual <= 1e-6
    assert fp.value_at(0.0) == pytest.approx(0.5, abs=1e-9)
    assert np.all(np.diff(fp.phi) <= 0)


def test_kpp_supercritical_decay_rate(logistic):
    fp = kpp_profile(logistic, 3.0)
    mask = (fp.phi < 1e-2) & (fp.phi > 1e-4)
    slope = np.polyfit(fp.z[mask], np.log(fp.phi[mask]), 1)[0]
    lam_slow = (3 - np.sqrt(9 - 4)) / 2
    assert abs(-slope - lam_slow) / lam_slow <= 0.05


def test_kpp_speed_below_minimal(logistic):
    with pytest.raises(SpeedBelowMinimal):
        kpp_profile(logistic, 1.0)


def test_shoot_front_rejects_kpp(logistic):
    with pytest.raises(ValueError):
        shoot_front(logistic)
