"""Directional front speeds and the convex asymptotic spreading set.

Three layers, all driven by the periodic principal eigenvalue k(z):

  * c*(e)  = min_{lambda > 0} k(lambda e) / lambda, the critical speed of
    fronts in direction e, found by a log-spaced bracket scan refined with
    golden section (valid for KPP-classified media only);
  * w(e)   = min over unit directions xi with xi.e > 0 of c*(xi) / (xi.e),
    the spreading speed of compactly supported data in direction e;
  * W      = intersection of the half-planes { x . e <= c*(e) }, the Wulff
    shape of the speed envelope: a convex polygon in 2-D (an interval in
    1-D) containing the origin.

The half-plane construction makes every polygon edge lie on a supporting
line x . e_i = c*(e_i), so the edge-midpoint identity z . nu = c*(nu)
(`regular_fg_check`) doubles as a consistency check of the polygon normals
and the direction interpolation of c*.
"""

import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .eigen import NoConvergence, NonPositiveEigenfunction, k_of
from .media import MediumSpec

__all__ = ["SpeedTable", "FGSpeed", "WulffShape", "BracketFailure",
           "DegenerateShape", "KPPRequired", "cstar", "build_speed_table",
           "fg_speed", "wulff", "regular_fg_check"]

GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


class BracketFailure(Exception):
    """The lambda scan produced no usable values."""


class DegenerateShape(Exception):
    """Half-plane intersection is empty or does not contain the origin."""


class KPPRequired(Exception):
    """Eigenvalue-based speeds are valid only for KPP-classified media."""


@dataclass(frozen=True)
class SpeedTable:
    N: int
    directions: np.ndarray      # (n, N) unit vectors
    cstar: np.ndarray           # (n,)
    lambda_min: np.ndarray      # (n,)
    M: int
    medium_hash: str
    angles: Optional[np.ndarray] = None   # (n,) in 2-D, ascending in [0, 2pi)
    empirical_lipschitz: Optional[float] = None

    def interp_cstar(self, direction):
        """c* at an arbitrary unit direction (2-D: periodic linear in angle)."""
        direction = np.asarray(direction, dtype=float)
        if self.N == 1:
            return float(self.cstar[0] if direction[0] > 0 else self.cstar[1])
        theta = float(np.arctan2(direction[1], direction[0])) % (2 * np.pi)
        ext_angles = np.concatenate([self.angles, [self.angles[0] + 2 * np.pi]])
        ext_c = np.concatenate([self.cstar, [self.cstar[0]]])
        return float(np.interp(theta, ext_angles, ext_c))


@dataclass(frozen=True)
class FGSpeed:
    w: float
    xi: np.ndarray              # refined minimizing direction
    minimizers: np.ndarray      # (m, N) grid minimizers within 1e-4 relative


@dataclass(frozen=True)
class WulffShape:
    N: int
    vertices: Optional[np.ndarray] = None   # (m, 2) counterclockwise, 2-D
    interval: Optional[tuple] = None        # (lo, hi), 1-D
    table: Optional[SpeedTable] = None

    def support(self, direction):
        direction = np.asarray(direction, dtype=float)
        if self.N == 1:
            lo, hi = self.interval
            return max(lo * direction[0], hi * direction[0])
        return float(np.max(self.vertices @ direction))

    def boundary_points(self, spacing):
        """Boundary densified to at most `spacing` between samples."""
        if self.N == 1:
            return np.array([[self.interval[0]], [self.interval[1]]])
        pts = []
        verts = self.vertices
        for i in range(len(verts)):
            a, b = verts[i], verts[(i + 1) % len(verts)]
            steps = max(1, int(np.ceil(np.linalg.norm(b - a) / spacing)))
            for s in range(steps):
                pts.append(a + (b - a) * (s / steps))
        return np.asarray(pts)

    def contains(self, points, tol=0.0):
        """Membership test for an array of points (2-D)."""
        verts = self.vertices
        edges = np.roll(verts, -1, axis=0) - verts
        normals = np.stack([edges[:, 1], -edges[:, 0]], axis=1)
        normals /= np.linalg.norm(normals, axis=1, keepdims=True)
        offsets = np.einsum("ij,ij->i", normals, verts)
        return np.all(np.asarray(points) @ normals.T <= offsets + tol, axis=-1)


# ---------------------------------------------------------------------------
# Critical speed c*(e)
# ---------------------------------------------------------------------------

def _require_kpp(medium):
    rc = medium.reaction_class
    if rc is None or rc.tag != "KPP":
        raise KPPRequired(
            f"eigenvalue speeds need a KPP medium, got "
            f"{'unclassified' if rc is None else rc.tag}")


def _golden_min(fn, lo, hi, rel_tol):
    a, b = lo, hi
    scale = max(abs(lo), abs(hi), 1e-12)
    x1 = b - GOLDEN * (b - a)
    x2 = a + GOLDEN * (b - a)
    f1, f2 = fn(x1), fn(x2)
    while (b - a) > rel_tol * scale:
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - GOLDEN * (b - a)
            f1 = fn(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + GOLDEN * (b - a)
            f2 = fn(x2)
    x = 0.5 * (a + b)
    return x, fn(x)


def cstar(medium: MediumSpec, e, M: int, *, lambda_bounds=(1e-2, 1e2),
          n_scan: int = 41, rel_tol: float = 1e-6, k_tol: float = 1e-10):
    """Critical directional speed: minimize g(lambda) = k(lambda e)/lambda.

    Log-spaced bracket scan over `lambda_bounds`, then golden-section
    refinement of every interior bracket to relative tolerance `rel_tol`;
    returns (speed, minimizing lambda).  A boundary minimum is returned with
    a warning: it signals k(0) <= 0 or pathological media.
    """
    _require_kpp(medium)
    e = np.asarray(e, dtype=float)
    e = e / np.linalg.norm(e)
    lams = np.logspace(np.log10(lambda_bounds[0]), np.log10(lambda_bounds[1]),
                       n_scan)

    def g(lam):
        try:
            return k_of(medium, lam * e, M, tol=k_tol) / lam
        except (NoConvergence, NonPositiveEigenfunction) as exc:
            # extreme tilts can exceed the mesh Peclet limit of the centered
            # stencil; such scan points are recorded as unusable
            warnings.warn(f"eigensolve unusable at lambda={lam:.3g}: {exc}")
            return np.inf

    # scan left to right; k is convex, so g is unimodal and the scan can stop
    # once the objective has clearly turned upward (three strict rises past a
    # 1.5x margin over the running minimum)
    vals_list = []
    rises = 0
    for lam in lams:
        vals_list.append(g(lam))
        if len(vals_list) > 1:
            rises = rises + 1 if vals_list[-1] > vals_list[-2] else 0
            running_min = min(vals_list)
            if rises >= 3 and np.isfinite(running_min) \
                    and vals_list[-1] > 1.5 * running_min:
                break
    vals = np.array(vals_list)
    if not np.any(np.isfinite(vals)):
        raise BracketFailure("no usable eigenvalue along the lambda scan")

    brackets = [i for i in range(1, len(vals) - 1)
                if vals[i] <= vals[i - 1] and vals[i] <= vals[i + 1]
                and np.isfinite(vals[i])]
    if not brackets:
        i = int(np.nanargmin(vals))
        warnings.warn("lambda scan found only a boundary minimum; "
                      "k(0) <= 0 or pathological medium")
        return float(vals[i]), float(lams[i])

    best = (np.inf, None)
    for i in brackets:
        lam, val = _golden_min(g, lams[i - 1], lams[i + 1], rel_tol)
        if val < best[0]:
            best = (val, lam)
    return float(best[0]), float(best[1])


def build_speed_table(medium: MediumSpec, M: int, n_dir: int = 360, *,
                      jobs: int = 1, **cstar_kw) -> SpeedTable:
    """c* on the direction grid: {+1,-1} in 1-D, n_dir uniform angles in 2-D."""
    if medium.N == 1:
        dirs = np.array([[1.0], [-1.0]])
        angles = None
    elif medium.N == 2:
        angles = 2 * np.pi * np.arange(n_dir) / n_dir
        dirs = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    else:
        raise ValueError("speed tables cover N <= 2 only")

    def solve(i):
        return cstar(medium, dirs[i], M, **cstar_kw)

    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(solve, range(len(dirs))))
    else:
        results = [solve(i) for i in range(len(dirs))]
    speeds = np.array([r[0] for r in results])
    lam_min = np.array([r[1] for r in results])
    if np.any(speeds <= 0):
        raise BracketFailure("nonpositive c* in the table")

    lipschitz = None
    if medium.N == 2:
        dtheta = 2 * np.pi / n_dir
        lipschitz = float(np.max(np.abs(np.diff(
            np.concatenate([speeds, speeds[:1]])))) / dtheta)
    return SpeedTable(N=medium.N, directions=dirs, cstar=speeds,
                      lambda_min=lam_min, M=M, medium_hash=medium.content_hash,
                      angles=angles, empirical_lipschitz=lipschitz)


# ---------------------------------------------------------------------------
# Spreading speed w(e) and the shape
# ---------------------------------------------------------------------------

def fg_speed(table: SpeedTable, e, *, delta: float = 0.05,
             refine: bool = True,
             cstar_fn: Optional[Callable] = None) -> FGSpeed:
    """Directional spreading speed w(e) = min_{xi.e >= delta} c*(xi)/(xi.e).

    The cone cutoff `delta` is safe because c* is bounded below by a positive
    constant, so the objective diverges as xi.e -> 0+.  Grid minimizers
    within 1e-4 relative of the optimum are all reported (corner detection);
    the best one is refined by golden section in angle.  Always w(e) <=
    c*(e), witnessed by the candidate xi = e.
    """
    e = np.asarray(e, dtype=float)
    e = e / np.linalg.norm(e)
    if table.N == 1:
        w = table.interp_cstar(e)
        return FGSpeed(w=w, xi=e.copy(), minimizers=e[None, :].copy())

    proj = table.directions @ e
    admissible = proj >= delta
    if not np.any(admissible):
        raise ValueError("no admissible direction in the cone xi.e >= delta")
    obj = np.where(admissible, table.cstar / np.where(admissible, proj, 1.0),
                   np.inf)
    w_grid = float(np.min(obj))
    near = np.nonzero(obj <= w_grid * (1 + 1e-4))[0]
    # tie-break toward the smallest angle to e
    best_idx = near[int(np.argmin(-proj[near]))]
    minimizers = table.directions[near].copy()

    c_of = cstar_fn if cstar_fn is not None else (
        lambda theta: table.interp_cstar(np.array([np.cos(theta), np.sin(theta)])))
    theta_e = float(np.arctan2(e[1], e[0]))
    theta_best = float(np.arctan2(table.directions[best_idx, 1],
                                  table.directions[best_idx, 0]))
    w, xi = w_grid, table.directions[best_idx].copy()
    if refine:
        dtheta = 2 * np.pi / len(table.directions)

        def obj_theta(theta):
            cos_gap = np.cos(theta - theta_e)
            if cos_gap < delta:
                return np.inf
            return c_of(theta) / cos_gap

        theta_opt, val = _golden_min(obj_theta, theta_best - dtheta,
                                     theta_best + dtheta, 1e-9)
        if val < w:
            w = float(val)
            xi = np.array([np.cos(theta_opt), np.sin(theta_opt)])

    # xi = e is always admissible, so w never exceeds c*(e)
    c_at_e = table.interp_cstar(e)
    if w > c_at_e:
        w, xi = c_at_e, e.copy()
    return FGSpeed(w=w, xi=xi, minimizers=minimizers)


def _clip_halfplane(vertices, normal, offset):
    """Sutherland-Hodgman clip of a convex polygon by { x . normal <= offset }."""
    if len(vertices) == 0:
        return vertices
    dist = offset - vertices @ normal
    out = []
    n = len(vertices)
    for i in range(n):
        j = (i + 1) % n
        di, dj = dist[i], dist[j]
        if di >= 0:
            out.append(vertices[i])
        if (di > 0 > dj) or (di < 0 < dj):
            t = di / (di - dj)
            out.append(vertices[i] + t * (vertices[j] - vertices[i]))
    return np.asarray(out) if out else np.empty((0, 2))


def wulff(table: SpeedTable) -> WulffShape:
    """Intersect the half-planes x . e_i <= c*(e_i) (interval in 1-D)."""
    if table.N == 1:
        plus = float(table.cstar[np.argmax(table.directions[:, 0])])
        minus = float(table.cstar[np.argmin(table.directions[:, 0])])
        if plus <= 0 or minus <= 0:
            raise DegenerateShape("interval does not contain the origin")
        return WulffShape(N=1, interval=(-minus, plus), table=table)

    bound = 2.0 * float(np.max(table.cstar))
    verts = np.array([[-bound, -bound], [bound, -bound],
                      [bound, bound], [-bound, bound]])
    for direction, speed in zip(table.directions, table.cstar):
        verts = _clip_halfplane(verts, direction, speed)
        if len(verts) == 0:
            raise DegenerateShape("half-plane intersection is empty")
    verts = _dedupe_vertices(verts)
    if len(verts) < 3:
        raise DegenerateShape("half-plane intersection degenerated")
    edges = np.roll(verts, -1, axis=0) - verts
    cross = edges[:, 0] * np.roll(edges, -1, axis=0)[:, 1] \
        - edges[:, 1] * np.roll(edges, -1, axis=0)[:, 0]
    if np.any(cross < -1e-12 * bound * bound):
        raise DegenerateShape("clipped polygon is not convex")
    normals = np.stack([edges[:, 1], -edges[:, 0]], axis=1)
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    origin_margin = np.einsum("ij,ij->i", normals, verts)
    if np.min(origin_margin) <= 0:
        raise DegenerateShape("origin is not strictly inside the shape")
    return WulffShape(N=2, vertices=verts, table=table)


def _dedupe_vertices(verts, tol_rel=1e-9):
    scale = float(np.max(np.abs(verts))) or 1.0
    keep = []
    for v in verts:
        if not keep or np.linalg.norm(v - keep[-1]) > tol_rel * scale:
            keep.append(v)
    if len(keep) > 1 and np.linalg.norm(keep[0] - keep[-1]) <= tol_rel * scale:
        keep.pop()
    return np.asarray(keep)


def regular_fg_check(shape: WulffShape,
                     cstar_fn: Optional[Callable] = None) -> dict:
    """Relative mismatch |z.nu - c*(nu)| / c*(nu) over edge midpoints z.

    `cstar_fn` maps a unit direction to c*; defaults to interpolation of the
    table the shape was built from.  In 1-D the interval endpoints satisfy
    the identity exactly.
    """
    if cstar_fn is None:
        table = shape.table
        cstar_fn = table.interp_cstar
    if shape.N == 1:
        lo, hi = shape.interval
        mismatches = [abs(hi - cstar_fn(np.array([1.0])))
                      / cstar_fn(np.array([1.0])),
                      abs(-lo - cstar_fn(np.array([-1.0])))
                      / cstar_fn(np.array([-1.0]))]
        return {"max_rel_mismatch": float(max(mismatches)),
                "per_edge": [float(m) for m in mismatches]}
    verts = shape.vertices
    nxt = np.roll(verts, -1, axis=0)
    mids = 0.5 * (verts + nxt)
    edges = nxt - verts
    normals = np.stack([edges[:, 1], -edges[:, 0]], axis=1)
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    rel = []
    for z, nu in zip(mids, normals):
        c_nu = cstar_fn(nu)
        rel.append(abs(float(z @ nu) - c_nu) / c_nu)
    return {"max_rel_mismatch": float(np.max(rel)),
            "per_edge": [float(r) for r in rel]}
