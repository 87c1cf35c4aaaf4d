import numpy as np
import pytest

from frontspeed.analysis import (
    CrossingNotFound, EmptyInput, InsufficientCrossings, extract_level_set,
    hausdorff, measure_speed, profile_error, ray_crossing,
    rescaled_convergence,
)
from frontspeed.fronts import kpp_profile
from frontspeed.media import build_medium
from frontspeed.simulate import SnapshotSeries


def _circle(radius, n=4000):
    ts = np.linspace(0, 2 * np.pi, n, endpoint=False)
    return radius * np.stack([np.cos(ts), np.sin(ts)], axis=1)


def test_extract_1d_single_crossing():
    x = np.linspace(0, 20, 201)
    u = 1.0 / (1.0 + np.exp(x - 7.3))    # crosses 0.5 exactly at 7.3
    snap = extract_level_set(u, (x,), 0.5)
    assert len(snap.points) == 1
    assert snap.points[0, 0] == pytest.approx(7.3, abs=0.1)


def test_extract_empty_level_set():
    x = np.linspace(0, 10, 101)
    snap = extract_level_set(np.zeros_like(x), (x,), 0.5)
    assert snap.empty
    assert snap.points.shape == (0, 1)


def test_extract_level_validation():
    x = np.linspace(0, 1, 11)
    with pytest.raises(ValueError):
        extract_level_set(np.zeros_like(x), (x,), 1.5)


def test_extract_2d_radial_within_dx():
    x = np.linspace(-10, 10, 201)
    X, Y = np.meshgrid(x, x, indexing="ij")
    u = 1.0 / (1.0 + np.exp(np.sqrt(X ** 2 + Y ** 2) - 5.0))
    snap = extract_level_set(u, (x, x), 0.5)
    radii = np.linalg.norm(snap.points, axis=1)
    assert np.max(np.abs(radii - 5.0)) <= 0.1
    assert len(snap.segments) > 0


def test_extract_interpolation_invariant():
    rng = np.random.default_rng(5)
    x = np.linspace(-3, 3, 61)
    u = rng.uniform(0, 1, size=(61, 61))
    snap = extract_level_set(u, (x, x), 0.5)
    from frontspeed.analysis import _bilinear
    vals = _bilinear(u, (x, x), snap.points)
    assert np.max(np.abs(vals - 0.5)) <= 1e-6


def test_saddle_cells_resolved():
    ax = np.array([0.0, 1.0])
    u = np.array([[1.0, 0.0], [0.0, 1.0]])
    snap = extract_level_set(u, (ax, ax), 0.5)
    assert len(snap.points) == 4
    assert len(snap.segments) == 2
    assert np.all(snap.segments >= 0)


def _translating_series(speed, times, x=None, offset=3.0):
    if x is None:
        x = np.linspace(-50, 150, 2001)
    fields = [1.0 / (1.0 + np.exp(x - speed * t - offset)) for t in times]
    return SnapshotSeries(axes=(x,), times=np.asarray(times, float),
                          fields=fields)


def test_measure_speed_exact_translation():
    series = _translating_series(1.5, np.arange(0.0, 10.5, 1.0))
    fit = measure_speed(series, [1.0], 0.5)
    assert fit.speed == pytest.approx(1.5, abs=1e-6)
    assert fit.residual <= 1e-8


def test_measure_speed_time_shift_invariant():
    t1 = np.arange(0.0, 10.5, 1.0)
    s1 = measure_speed(_translating_series(1.5, t1), [1.0], 0.5)
    series2 = _translating_series(1.5, t1)
    shifted = SnapshotSeries(axes=series2.axes, times=series2.times + 7.0,
                             fields=series2.fields)
    s2 = measure_speed(shifted, [1.0], 0.5, window=(7.0 + 5.0, np.inf))
    assert s2.speed == pytest.approx(s1.speed, abs=1e-9)


def test_measure_speed_rescaling_equivariant():
    t = np.arange(0.0, 10.5, 1.0)
    base = _translating_series(1.5, t)
    scaled = SnapshotSeries(axes=(base.axes[0] * 2.0,), times=base.times,
                            fields=base.fields)
    s_base = measure_speed(base, [1.0], 0.5)
    s_scaled = measure_speed(scaled, [1.0], 0.5)
    assert s_scaled.speed == pytest.approx(2.0 * s_base.speed, rel=1e-6)


def test_measure_speed_insufficient():
    series = _translating_series(1.0, [0.0, 1.0])
    with pytest.raises(InsufficientCrossings):
        measure_speed(series, [1.0], 0.5)


def test_ray_crossing_2d():
    x = np.linspace(-10, 10, 401)
    X, Y = np.meshgrid(x, x, indexing="ij")
    u = 1.0 / (1.0 + np.exp(np.sqrt(X ** 2 + Y ** 2) - 5.0))
    for theta in (0.0, 0.7, 2.5):
        e = [np.cos(theta), np.sin(theta)]
        pos = ray_crossing(u, (x, x), e, 0.5)
        assert pos == pytest.approx(5.0, abs=0.05)


def test_hausdorff_identical_zero():
    P = _circle(2.0, 500)
    assert hausdorff(P, P) == 0.0


def test_hausdorff_square_vs_disk():
    ss = np.linspace(-1, 1, 4001)
    ones = np.ones_like(ss)
    square = np.vstack([np.stack([ss, ones], 1), np.stack([ss, -ones], 1),
                        np.stack([ones, ss], 1), np.stack([-ones, ss], 1)])
    disk = _circle(1.0, 20000)
    assert hausdorff(square, disk) == pytest.approx(np.sqrt(2) - 1, abs=1e-3)


def test_hausdorff_dilation_bound():
    rng = np.random.default_rng(9)
    Q = rng.uniform(-5, 5, size=(300, 2))
    r = 0.3
    shift = rng.normal(size=(300, 2))
    shift *= r * rng.uniform(0, 1, size=(300, 1)) \
        / np.linalg.norm(shift, axis=1, keepdims=True)
    P = Q + shift
    diff = P[:, None, :] - Q[None, :, :]
    directed = np.max(np.min(np.linalg.norm(diff, axis=2), axis=1))
    assert directed <= r + 1e-12


def test_hausdorff_metric_properties():
    rng = np.random.default_rng(12)
    A, B, C = (rng.uniform(-3, 3, size=(40, 2)) for _ in range(3))
    assert hausdorff(A, B) == pytest.approx(hausdorff(B, A), abs=1e-12)
    assert hausdorff(A, C) <= hausdorff(A, B) + hausdorff(B, C) + 1e-9
    assert hausdorff(A, A) == 0.0


def test_hausdorff_empty_input():
    with pytest.raises(EmptyInput):
        hausdorff(np.empty((0, 2)), _circle(1.0, 10))


def test_hausdorff_kdtree_path_matches_brute_force():
    rng = np.random.default_rng(3)
    P = rng.uniform(-1, 1, size=(150, 2))
    Q = rng.uniform(-1, 1, size=(11_000, 2))  # beyond the brute-force limit
    tree_val = hausdorff(P, Q)
    sub = hausdorff(P, Q[:9000])
    assert tree_val <= sub + 1e-12  # denser target can only be closer


def test_rescaled_convergence_exact_scaling():
    x = np.linspace(-40, 40, 801)
    X, Y = np.meshgrid(x, x, indexing="ij")
    R = np.sqrt(X ** 2 + Y ** 2)
    times = [5.0, 10.0, 15.0]
    fields = [1.0 / (1.0 + np.exp(R - 2.0 * t)) for t in times]
    series = SnapshotSeries(axes=(x, x), times=np.array(times), fields=fields)
    t_out, d_out, final, tail_ok = rescaled_convergence(
        series, 0.5, _circle(2.0, 8000))
    assert len(d_out) == 3
    assert final <= 0.05
    assert np.all(d_out <= 0.06)


def test_rescaled_convergence_window_mask():
    x = np.linspace(-40, 40, 801)
    X, Y = np.meshgrid(x, x, indexing="ij")
    fields = [1.0 / (1.0 + np.exp(np.sqrt(X ** 2 + Y ** 2) - 2.0 * t))
              for t in (10.0,)]
    series = SnapshotSeries(axes=(x, x), times=np.array([10.0]), fields=fields)
    mask = lambda pts: pts[:, 0] > 0.5
    _, d_out, _, _ = rescaled_convergence(series, 0.5, _circle(2.0, 8000),
                                          window_mask=mask)
    assert d_out[0] <= 0.05


def test_profile_error_on_translated_profile():
    logistic = build_medium({"N": 1, "A": "1", "q": "0", "f": "u*(1-u)"})
    front = kpp_profile(logistic, 2.0)
    x = np.linspace(-50, 150, 4001)
    times = np.array([10.0, 20.0])
    fields = [np.interp(x - 2.0 * t - 5.0, front.z, front.phi) for t in times]
    series = SnapshotSeries(axes=(x,), times=times, fields=fields)
    _, errors = profile_error(series, [1.0], front, level=0.5, halfwidth=10.0)
    assert np.max(errors) <= 1e-3


def test_profile_error_reports_early_mismatch_without_failure():
    logistic = build_medium({"N": 1, "A": "1", "q": "0", "f": "u*(1-u)"})
    front = kpp_profile(logistic, 2.0)
    x = np.linspace(-50, 50, 2001)
    u = 0.9 / (1.0 + np.exp(5.0 * (x - 10.0)))  # wrong amplitude and steepness
    series = SnapshotSeries(axes=(x,), times=np.array([1.0]), fields=[u])
    _, errors = profile_error(series, [1.0], front, level=0.5)
    assert errors[0] > 0.1  # large error reported, no exception


def test_profile_error_crossing_not_found():
    logistic = build_medium({"N": 1, "A": "1", "q": "0", "f": "u*(1-u)"})
    front = kpp_profile(logistic, 2.0)
    x = np.linspace(-50, 50, 2001)
    series = SnapshotSeries(axes=(x,), times=np.array([1.0]),
                            fields=[np.zeros_like(x)])
    with pytest.raises(CrossingNotFound):
        profile_error(series, [1.0], front)
