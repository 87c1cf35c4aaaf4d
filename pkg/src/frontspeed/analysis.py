"""Measurements on simulation snapshots and comparison to predictions.

Level sets E_lambda(t) = { u(t, .) > lambda } are extracted as the set of
grid-edge crossings with linear interpolation (1-D: sign changes; 2-D:
marching squares with the ambiguous saddle cells resolved by the
cell-average rule).  From them:

  * `measure_speed` fits the farthest crossing along a ray against time by
    least squares over a late-time window (transients decay like o(t)/t,
    so the default window is the last half of the run);
  * `hausdorff` is the symmetric point-set distance, brute force for small
    sets and KD-tree accelerated above 10^4 points;
  * `rescaled_convergence` tracks d_H(E_lambda(t)/t, boundary of the
    predicted spreading set) over snapshots;
  * `profile_error` compares the moving 1-D front against a computed
    planar-front profile around the level crossing.
"""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.spatial import cKDTree

from .fronts import FrontProfile
from .simulate import SnapshotSeries
from .speeds import WulffShape

__all__ = ["LevelSetSnapshot", "SpeedFit", "EmptyInput",
           "InsufficientCrossings", "CrossingNotFound", "extract_level_set",
           "ray_crossing", "measure_speed", "hausdorff",
           "rescaled_convergence", "profile_error"]

_BRUTE_FORCE_LIMIT = 10_000


class EmptyInput(Exception):
    pass


class InsufficientCrossings(Exception):
    pass


class CrossingNotFound(Exception):
    pass


@dataclass(frozen=True)
class LevelSetSnapshot:
    t: float
    level: float
    points: np.ndarray          # (m, N) boundary points of { u > level }
    segments: np.ndarray        # (s, 2) indices into points (2-D), else (0, 2)
    empty: bool

    def rescaled(self):
        if self.t <= 0:
            raise ValueError("rescaling requires t > 0")
        return self.points / self.t


@dataclass(frozen=True)
class SpeedFit:
    speed: float
    intercept: float
    residual: float             # rms of the linear fit residuals
    times: np.ndarray
    positions: np.ndarray


# ---------------------------------------------------------------------------
# Level-set extraction
# ---------------------------------------------------------------------------

def extract_level_set(u, axes, level, t=0.0) -> LevelSetSnapshot:
    """Boundary points of { u > level } by edge-crossing interpolation."""
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    u = np.asarray(u)
    if u.ndim == 1:
        points = _crossings_1d(u, axes[0], level)
        return LevelSetSnapshot(t=t, level=level, points=points,
                                segments=np.empty((0, 2), dtype=int),
                                empty=points.size == 0)
    points, segments = _marching_squares(u, axes, level)
    return LevelSetSnapshot(t=t, level=level, points=points,
                            segments=segments, empty=points.size == 0)


def _crossings_1d(u, x, level):
    s = u - level
    hits = []
    exact = np.nonzero(s == 0.0)[0]
    hits.extend(x[exact])
    idx = np.nonzero(s[:-1] * s[1:] < 0.0)[0]
    frac = s[idx] / (s[idx] - s[idx + 1])
    hits.extend(x[idx] + frac * (x[idx + 1] - x[idx]))
    return np.array(sorted(hits)).reshape(-1, 1)


# marching-squares connectivity: corner bits (c0, c1, c2, c3) at
# (i,j), (i+1,j), (i+1,j+1), (i,j+1); edges a=(c0,c1), b=(c1,c2),
# c=(c3,c2), d=(c0,c3); saddle cases 5 and 10 are resolved at runtime
_MS_TABLE = {
    1: [("a", "d")], 2: [("a", "b")], 3: [("b", "d")], 4: [("b", "c")],
    6: [("a", "c")], 7: [("c", "d")], 8: [("c", "d")], 9: [("a", "c")],
    11: [("b", "c")], 12: [("b", "d")], 13: [("a", "b")], 14: [("a", "d")],
}


def _marching_squares(u, axes, level):
    x0, x1 = axes
    above = u > level
    s = u - level

    # crossing points on axis-0 edges (i -> i+1, j) and axis-1 edges (i, j -> j+1)
    cross0 = above[:-1, :] != above[1:, :]
    cross1 = above[:, :-1] != above[:, 1:]
    pts = []
    idx0 = np.full(cross0.shape, -1, dtype=int)
    ii, jj = np.nonzero(cross0)
    frac = s[ii, jj] / (s[ii, jj] - s[ii + 1, jj])
    idx0[ii, jj] = np.arange(len(ii))
    pts.append(np.stack([x0[ii] + frac * (x0[ii + 1] - x0[ii]), x1[jj]], axis=1))
    idx1 = np.full(cross1.shape, -1, dtype=int)
    ii, jj = np.nonzero(cross1)
    frac = s[ii, jj] / (s[ii, jj] - s[ii, jj + 1])
    idx1[ii, jj] = len(pts[0]) + np.arange(len(ii))
    pts.append(np.stack([x0[ii], x1[jj] + frac * (x1[jj + 1] - x1[jj])], axis=1))
    points = np.vstack(pts) if pts else np.empty((0, 2))

    code = (above[:-1, :-1].astype(int) + 2 * above[1:, :-1]
            + 4 * above[1:, 1:] + 8 * above[:-1, 1:])
    segments = []

    def edge_ids(ci, cj, which):
        return {"a": idx0[ci, cj], "b": idx1[ci + 1, cj],
                "c": idx0[ci, cj + 1], "d": idx1[ci, cj]}[which]

    for case, pairs in _MS_TABLE.items():
        ci, cj = np.nonzero(code == case)
        for e1, e2 in pairs:
            segments.append(np.stack([edge_ids(ci, cj, e1),
                                      edge_ids(ci, cj, e2)], axis=1))
    for case in (5, 10):
        ci, cj = np.nonzero(code == case)
        if ci.size == 0:
            continue
        avg = 0.25 * (u[ci, cj] + u[ci + 1, cj] + u[ci + 1, cj + 1]
                      + u[ci, cj + 1])
        # the arcs hug the pair of corners on the minority side of the cell
        # average: segments {(a,b),(c,d)} hug c1 and c3, {(a,d),(b,c)} hug
        # c0 and c2
        ab_cd = (avg > level) if case == 5 else (avg <= level)
        ea = edge_ids(ci, cj, "a")
        eb = edge_ids(ci, cj, "b")
        ec = edge_ids(ci, cj, "c")
        ed = edge_ids(ci, cj, "d")
        segments.append(np.stack([ea, np.where(ab_cd, eb, ed)], axis=1))
        segments.append(np.stack([np.where(ab_cd, ec, eb),
                                  np.where(ab_cd, ed, ec)], axis=1))
    seg = np.vstack(segments) if segments else np.empty((0, 2), dtype=int)
    return points, seg


# ---------------------------------------------------------------------------
# Ray crossings and speed fits
# ---------------------------------------------------------------------------

def ray_crossing(u, axes, direction, level, step_factor=0.5):
    """Farthest crossing of u = level along { s * direction : s > 0 }.

    Samples the field along the ray with spacing step_factor * dx by linear
    interpolation and returns the interpolated crossing position, or None.
    """
    direction = np.asarray(direction, dtype=float)
    direction = direction / np.linalg.norm(direction)
    dx = float(axes[0][1] - axes[0][0])
    if len(axes) == 1:
        s_max = float(axes[0][-1]) if direction[0] > 0 else -float(axes[0][0])
    else:
        s_max = min((axes[d][-1] if direction[d] > 0 else -axes[d][0])
                    / abs(direction[d]) if direction[d] != 0 else np.inf
                    for d in range(len(axes)))
    s_grid = np.arange(0.0, s_max, step_factor * dx)
    if len(axes) == 1:
        vals = np.interp(s_grid * direction[0], axes[0], u)
    else:
        vals = _bilinear(u, axes, np.outer(s_grid, direction))
    diff = vals - level
    sign_change = np.nonzero(diff[:-1] * diff[1:] < 0.0)[0]
    if sign_change.size == 0:
        return None
    i = sign_change[-1]
    frac = diff[i] / (diff[i] - diff[i + 1])
    return float(s_grid[i] + frac * (s_grid[i + 1] - s_grid[i]))


def _bilinear(u, axes, points):
    x0, x1 = axes
    dx0 = x0[1] - x0[0]
    dx1 = x1[1] - x1[0]
    f0 = np.clip((points[:, 0] - x0[0]) / dx0, 0, len(x0) - 1 - 1e-12)
    f1 = np.clip((points[:, 1] - x1[0]) / dx1, 0, len(x1) - 1 - 1e-12)
    i0 = f0.astype(int)
    i1 = f1.astype(int)
    t0 = f0 - i0
    t1 = f1 - i1
    return ((1 - t0) * (1 - t1) * u[i0, i1] + t0 * (1 - t1) * u[i0 + 1, i1]
            + (1 - t0) * t1 * u[i0, i1 + 1] + t0 * t1 * u[i0 + 1, i1 + 1])


def measure_speed(series: SnapshotSeries, direction, level=0.5,
                  window=None) -> SpeedFit:
    """Least-squares slope of the farthest level crossing along a ray.

    `window` is a (t_min, t_max) pair; the default keeps the last half of
    the run, discarding transients.  Needs at least 4 usable snapshots.
    """
    times, positions = [], []
    for t, u in zip(series.times, series.fields):
        pos = ray_crossing(u, series.axes, direction, level)
        if pos is not None:
            times.append(t)
            positions.append(pos)
    times = np.asarray(times)
    positions = np.asarray(positions)
    if window is None:
        t_end = float(series.times[-1])
        window = (t_end / 2.0, np.inf)
    keep = (times >= window[0]) & (times <= window[1])
    times, positions = times[keep], positions[keep]
    if len(times) < 4:
        raise InsufficientCrossings(
            f"only {len(times)} crossings in window {window}")
    slope, intercept = np.polyfit(times, positions, 1)
    fit_res = positions - (slope * times + intercept)
    return SpeedFit(speed=float(slope), intercept=float(intercept),
                    residual=float(np.sqrt(np.mean(fit_res ** 2))),
                    times=times, positions=positions)


# ---------------------------------------------------------------------------
# Hausdorff distance
# ---------------------------------------------------------------------------

def _directed(P, Q):
    if len(P) * len(Q) <= _BRUTE_FORCE_LIMIT ** 2 \
            and len(P) * len(Q) <= 4_000_000:
        diff = P[:, None, :] - Q[None, :, :]
        return float(np.max(np.min(np.sqrt(np.sum(diff * diff, axis=2)),
                                   axis=1)))
    tree = cKDTree(Q)
    dist, _ = tree.query(P, k=1)
    return float(np.max(dist))


def hausdorff(P, Q, *, spacing=None) -> float:
    """Symmetric Hausdorff distance between point sets.

    Q may be a WulffShape, in which case its boundary is densified with the
    given `spacing`.
    """
    if isinstance(Q, WulffShape):
        if spacing is None:
            raise ValueError("spacing is required to densify a shape boundary")
        Q = Q.boundary_points(spacing)
    P = np.atleast_2d(np.asarray(P, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    if P.size == 0 or Q.size == 0:
        raise EmptyInput("hausdorff needs two nonempty point sets")
    return max(_directed(P, Q), _directed(Q, P))


def rescaled_convergence(series: SnapshotSeries, level, predicted,
                         window_mask: Optional[Callable] = None,
                         spacing: Optional[float] = None):
    """d_H(E_level(t)/t, predicted boundary) per snapshot.

    `predicted` is a WulffShape or a boundary point array (already in
    rescaled coordinates).  `window_mask`, when given, maps an (m, N) array
    of rescaled points to a boolean keep-mask applied to both sets.  Returns
    (times, distances, final, nonincreasing_tail) with the tail judged on
    the last three snapshots.
    """
    dx = series.dx
    out_t, out_d = [], []
    for t, u in zip(series.times, series.fields):
        if t <= 0:
            continue
        snap = extract_level_set(u, series.axes, level, t=t)
        if snap.empty:
            continue
        rescaled = snap.rescaled()
        if isinstance(predicted, WulffShape):
            target = predicted.boundary_points(spacing if spacing else dx / t)
        else:
            target = np.asarray(predicted, dtype=float)
        if window_mask is not None:
            rescaled = rescaled[window_mask(rescaled)]
            target = target[window_mask(target)]
        if len(rescaled) == 0 or len(target) == 0:
            raise EmptyInput(f"window mask left no points at t={t}")
        out_t.append(t)
        out_d.append(hausdorff(rescaled, target))
    out_t = np.asarray(out_t)
    out_d = np.asarray(out_d)
    tail_ok = bool(len(out_d) >= 3 and np.all(np.diff(out_d[-3:]) <= 1e-12))
    final = float(out_d[-1]) if len(out_d) else np.nan
    return out_t, out_d, final, tail_ok


# ---------------------------------------------------------------------------
# Profile comparison
# ---------------------------------------------------------------------------

def profile_error(series: SnapshotSeries, direction, front: FrontProfile,
                  level=0.5, halfwidth=10.0):
    """Sup-norm gap between the moving 1-D front and a planar profile.

    For each snapshot, the front position m(t) is the farthest level
    crossing along `direction`; the comparison window is |z| <= halfwidth
    around it, with the profile shifted so that phi(0) = level.  Returns
    (times, errors).
    """
    if len(series.axes) != 1:
        raise ValueError("profile comparison is defined for 1-D runs")
    sign = 1.0 if np.atleast_1d(direction)[0] > 0 else -1.0
    z_ref, phi_ref = front.shifted_to_level(level)
    x = series.axes[0]
    dx = series.dx
    z_grid = np.arange(-halfwidth, halfwidth + 0.5 * dx, 0.5 * dx)
    phi_vals = np.interp(sign * z_grid, z_ref, phi_ref)
    times, errors = [], []
    for t, u in zip(series.times, series.fields):
        pos = ray_crossing(u, series.axes, [sign], level)
        if pos is None:
            raise CrossingNotFound(f"no {level}-crossing at t={t}")
        m_t = sign * pos
        u_vals = np.interp(m_t + z_grid, x, u)
        times.append(t)
        errors.append(float(np.max(np.abs(u_vals - phi_vals))))
    return np.asarray(times), np.asarray(errors)
