"""Problem assembly: diffusion matrix, drift, reaction, and their hypotheses.

A medium is the triple (A, q, f) on the unit periodicity cell (0,1)^N:
symmetric positive definite A(x), divergence-free mean-zero drift q(x), and
a reaction f(x,u) with f(x,0) = f(x,1) = 0 that is nonincreasing in u on
some [S,1].  All hypotheses are certified by sampling on a deterministic
grid plus seeded random points; violations raise ValidationError with the
witness point.  The reaction is classified into the taxonomy

    KPP  c  Monostable,   Ignition,   Bistable (homogeneous f only),

where KPP additionally requires f(x,s) <= d_u f(x,0) * s.  Media whose
reaction fits none of these are still usable for simulation, but the
eigenvalue-based speed pipeline refuses them.

The clamped reaction used by the simulator is exactly zero outside (0,1).
MediumSpec is immutable after build and safe to share across workers.
"""

import hashlib
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .fieldlang import (CoefficientField, NotDifferentiable, derivative_u,
                        parse_expr, validate_periodicity)

__all__ = ["MediumSpec", "ReactionClass", "ValidationReport", "CheckResult",
           "ValidationError", "Unclassifiable", "build_medium",
           "classify_reaction"]

HYP_TOL = 1e-8          # sampling tolerance for the standing hypotheses
_DIV_FD_STEP = 1e-6     # centered-difference step for div q


class ValidationError(Exception):
    """A standing hypothesis failed at the reported witness point."""

    def __init__(self, check, residual, witness):
        super().__init__(f"hypothesis {check!r} violated: residual {residual:.3e} "
                         f"at x={witness}")
        self.check = check
        self.residual = residual
        self.witness = witness


class Unclassifiable(Exception):
    """No reaction-taxonomy tag matches the sampled behavior."""


@dataclass(frozen=True)
class CheckResult:
    name: str
    residual: float
    tol: float
    passed: bool
    witness: Optional[tuple] = None

    def to_dict(self):
        return {"name": self.name, "residual": self.residual, "tol": self.tol,
                "passed": self.passed,
                "witness": None if self.witness is None else list(self.witness)}


@dataclass
class ValidationReport:
    checks: list = field(default_factory=list)
    notes: dict = field(default_factory=dict)

    def add(self, name, residual, tol, witness=None):
        self.checks.append(CheckResult(name, float(residual), tol,
                                       bool(residual <= tol), witness))
        return self.checks[-1]

    def require(self, name, residual, tol, witness=None):
        check = self.add(name, residual, tol, witness)
        if not check.passed:
            raise ValidationError(name, check.residual, witness)

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def to_dict(self):
        return {"checks": [c.to_dict() for c in self.checks],
                "notes": dict(self.notes), "passed": self.passed}


@dataclass(frozen=True)
class ReactionClass:
    tag: str                      # KPP | Monostable | Ignition | Bistable-homogeneous
    S: float
    theta: Optional[float] = None
    integral_f: Optional[float] = None

    def to_dict(self):
        return {"tag": self.tag, "S": self.S, "theta": self.theta,
                "integral_f": self.integral_f}


@dataclass(frozen=True)
class MediumSpec:
    """Validated problem instance; the single source of truth downstream."""
    N: int
    A: CoefficientField
    q: CoefficientField
    f: CoefficientField
    df: Optional[object]          # d_u f as an Expr, None when not differentiable
    S: float
    reaction_class: Optional[ReactionClass]
    params: dict
    report: ValidationReport
    content_hash: str

    def fu0(self, x):
        """Linearization d_u f(x, 0) on coordinate arrays x."""
        if self.df is None:
            raise NotDifferentiable("reaction has no closed-form u-derivative")
        out = np.asarray(self.df.evaluate(x, 0.0), dtype=float)
        shape = np.shape(x[0])
        if out.shape != shape:
            out = np.broadcast_to(out, shape).copy()
        return out

    def reaction(self, x, s):
        """Clamped reaction: exactly 0 for s <= 0 and s >= 1."""
        s = np.asarray(s, dtype=float)
        inside = (s > 0.0) & (s < 1.0)
        vals = np.asarray(self.f.entry().evaluate(x, np.clip(s, 0.0, 1.0)),
                          dtype=float)
        return np.where(inside, vals, 0.0)

    def a_entry(self, i, j):
        return self.A.entry(i, j)

    def q_entry(self, d):
        return self.q.entry(d)


# ---------------------------------------------------------------------------
# Sampling helpers
# ---------------------------------------------------------------------------

def _sample_points(n_dim, grid_m, n_random, seed):
    """Deterministic cell grid plus seeded random points, as coordinate arrays."""
    axes = [np.arange(grid_m) / grid_m for _ in range(n_dim)]
    mesh = np.meshgrid(*axes, indexing="ij")
    coords = np.stack([m.ravel() for m in mesh], axis=-1)
    rng = np.random.default_rng(seed)
    rand = rng.uniform(0.0, 1.0, size=(n_random, n_dim))
    pts = np.vstack([coords, rand])
    return tuple(pts[:, k] for k in range(n_dim))


def _default_grid_m(n_dim, grid_m):
    if grid_m is not None:
        return grid_m
    # keep the structured sample bounded for generic N
    return max(4, int(round(32768 ** (1.0 / n_dim)))) if n_dim > 2 else 64


def _eval_f_matrix(f_field, x, u_grid):
    """f on the tensor product of sample points and u values, shape (P, U)."""
    cols = tuple(np.asarray(c)[:, None] for c in x)
    vals = f_field.entry().evaluate(cols, u_grid[None, :])
    return np.broadcast_to(np.asarray(vals, dtype=float),
                           (cols[0].shape[0], u_grid.size))


def _monotone_tail_start(f_mat, u_grid, tol):
    """Smallest grid u from which f(x, .) is nonincreasing for every sample."""
    diffs = np.max(f_mat[:, 1:] - f_mat[:, :-1], axis=0)  # worst increase per step
    ok = diffs <= tol
    # last index s such that ok[s:] is all True
    bad = np.nonzero(~ok)[0]
    start = 0 if bad.size == 0 else bad[-1] + 1
    if start >= u_grid.size - 1:
        return None
    return start


# ---------------------------------------------------------------------------
# Classification
# ---------------------------------------------------------------------------

def classify_reaction(f: CoefficientField, params=None, *, S=None, seed=42,
                      grid_m=None, n_u=256, n_random=1000,
                      tol=HYP_TOL) -> ReactionClass:
    """Most specific taxonomy tag whose sampled conditions hold.

    Raises Unclassifiable when none applies (heterogeneous sign-changing
    reactions, or pure-diffusion f == 0).
    """
    n_dim = f.n_vars
    grid_m = _default_grid_m(n_dim, grid_m)
    x = _sample_points(n_dim, grid_m, n_random, seed)
    u_grid = np.linspace(0.0, 1.0, n_u)
    f_mat = _eval_f_matrix(f, x, u_grid)

    if S is None:
        start = _monotone_tail_start(f_mat, u_grid, tol)
        if start is None:
            raise Unclassifiable("no monotone tail [S,1] found")
        S = float(u_grid[max(start, 1)])

    interior = slice(1, n_u - 1)
    min_x = f_mat.min(axis=0)[interior]
    max_x = f_mat.max(axis=0)[interior]
    u_int = u_grid[interior]
    x_dependent = float(np.max(f_mat.max(axis=0) - f_mat.min(axis=0))) > tol \
        and _field_depends_on_x(f)

    has_negative = np.any(min_x < -tol)
    if has_negative:
        if x_dependent:
            raise Unclassifiable("sign-changing reaction with x-dependence")
        return _classify_bistable(f, u_int, min_x, max_x, S, tol)

    # zero plateau [0, theta]: contiguous leading range with f == 0 for all x
    absmax = np.abs(f_mat).max(axis=0)
    nonzero = np.nonzero(absmax > tol)[0]
    if nonzero.size == 0:
        raise Unclassifiable("reaction vanishes identically on samples")
    theta_idx = nonzero[0]
    if theta_idx > 1:
        theta = _declared_theta(params, float(u_grid[theta_idx - 1]))
        beyond = u_int > theta
        if np.all(min_x[beyond] >= -tol) and np.all(max_x[beyond] > tol):
            return ReactionClass("Ignition", S=S, theta=theta)
        raise Unclassifiable("zero plateau without positive continuation")

    if np.all(min_x >= -tol) and np.all(max_x > tol):
        if _kpp_bound_holds(f, x, u_grid, f_mat, tol):
            return ReactionClass("KPP", S=S)
        return ReactionClass("Monostable", S=S)
    raise Unclassifiable("no taxonomy tag matches the sampled reaction")


def _field_depends_on_x(f):
    return any(e.max_var_index() > 0 for e in f.entries)


def _declared_theta(params, detected):
    declared = None if params is None else params.get("theta")
    if declared is not None and abs(float(declared) - detected) > 0.02:
        warnings.warn(f"declared theta={declared} differs from detected "
                      f"plateau edge {detected:.4f}; using declared value")
    return float(declared) if declared is not None else detected


def _classify_bistable(f, u_int, min_x, max_x, S, tol):
    neg = np.nonzero(max_x < -tol)[0]
    pos = np.nonzero(min_x > tol)[0]
    if neg.size == 0 or pos.size == 0 or neg[-1] > pos[0]:
        raise Unclassifiable("sign pattern is not f<0 then f>0")
    lo, hi = u_int[neg[-1]], u_int[pos[0]]
    expr = f.entry()
    origin = (0.0,) * f.n_vars
    for _ in range(80):  # bisect the sign change; f is homogeneous here
        mid = 0.5 * (lo + hi)
        if float(expr.evaluate(origin, mid)) > 0:
            hi = mid
        else:
            lo = mid
    theta = 0.5 * (lo + hi)
    s_quad = np.linspace(0.0, 1.0, 10_000)
    integral = float(np.trapezoid(
        np.asarray(expr.evaluate((np.zeros_like(s_quad),) * f.n_vars, s_quad)),
        s_quad))
    if integral < -tol:
        raise Unclassifiable(f"bistable pattern with negative mass {integral:.3e}")
    if integral <= tol:
        warnings.warn("bistable reaction has (numerically) zero mass; the unique "
                      "front speed is 0 and invasion from compact data fails")
    return ReactionClass("Bistable-homogeneous", S=S, theta=float(theta),
                         integral_f=integral)


def _kpp_bound_holds(f, x, u_grid, f_mat, tol):
    try:
        df = derivative_u(f.entry())
    except NotDifferentiable:
        return False
    slope = np.asarray(df.evaluate(tuple(np.asarray(c) for c in x), 0.0),
                       dtype=float)
    slope = np.broadcast_to(slope, (len(x[0]),))
    bound = slope[:, None] * u_grid[None, :]
    return bool(np.all(f_mat <= bound + tol))


# ---------------------------------------------------------------------------
# Medium construction
# ---------------------------------------------------------------------------

_MEDIUM_KEYS = {"N", "A", "q", "f", "params", "S", "theta"}


def _parse_field(kind, spec_value, n_dim, params, allow_u=False):
    if isinstance(spec_value, str):
        sources = [spec_value]
    else:
        sources = list(spec_value)
    count = {"scalar": 1, "vector": n_dim, "matrix": n_dim * (n_dim + 1) // 2}[kind]
    if kind == "matrix" and len(sources) == 1 and count > 1:
        # single expression means an isotropic matrix a(x) * I
        diag = sources[0]
        sources = []
        for i in range(n_dim):
            for j in range(i, n_dim):
                sources.append(diag if i == j else "0")
    if kind == "vector" and len(sources) == 1 and count > 1:
        raise ValueError(f"vector field needs {count} component expressions")
    if len(sources) != count:
        raise ValueError(f"{kind} field needs {count} expressions, got {len(sources)}")
    entries = tuple(parse_expr(s, n_dim, allow_u=allow_u, params=params)
                    for s in sources)
    return CoefficientField(kind, n_dim, entries, declared_periodic=True,
                            sources=tuple(sources))


def _medium_hash(n_dim, A, q, f, params, S, theta):
    payload = {
        "N": n_dim,
        "A": [str(e) for e in A.entries],
        "q": [str(e) for e in q.entries],
        "f": [str(e) for e in f.entries],
        "params": {k: params[k] for k in sorted(params)},
        "S": S, "theta": theta,
    }
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def build_medium(fragment: dict, *, seed=42, grid_m=None, n_u=256,
                 n_random=1000, tol=HYP_TOL) -> MediumSpec:
    """Parse, validate, and classify one problem instance.

    `fragment` is the medium section of a config: N, A, q, f, optional params
    / S / theta.  Every standing hypothesis is checked on the deterministic
    grid plus `n_random` seeded points; the first failure raises
    ValidationError.  An unclassifiable reaction is recorded (simulation
    remains possible) rather than raised.
    """
    unknown = set(fragment) - _MEDIUM_KEYS
    if unknown:
        raise ValueError(f"unknown medium keys: {sorted(unknown)}")
    n_dim = int(fragment["N"])
    if n_dim < 1:
        raise ValueError("N must be >= 1")
    params = dict(fragment.get("params", {}))

    A = _parse_field("matrix", fragment.get("A", "1"), n_dim, params)
    q = _parse_field("vector", fragment.get("q", ["0"] * n_dim), n_dim, params)
    f = _parse_field("scalar", fragment["f"], n_dim, params, allow_u=True)

    report = ValidationReport()
    grid_m = _default_grid_m(n_dim, grid_m)
    report.notes["sample_grid"] = {"grid_m": grid_m, "n_u": n_u,
                                   "n_random": n_random, "seed": seed}
    # the taxonomy writes the ignition threshold as theta; the weak-stability
    # condition writes delta for the same role -- recorded once as theta here
    report.notes["theta_equals_delta"] = True

    for name, fld in (("A", A), ("q", q), ("f", f)):
        mismatch = validate_periodicity(fld, seed=seed, strict=False)
        report.require(f"periodicity[{name}]", mismatch, 1e-10)

    x = _sample_points(n_dim, grid_m, n_random, seed)
    pts = np.stack(x, axis=-1)

    # A symmetric positive definite (min sampled eigenvalue > 0)
    a_vals = np.empty((n_dim, n_dim, len(x[0])))
    for i in range(n_dim):
        for j in range(i, n_dim):
            v = np.asarray(A.entry(i, j).evaluate(x), dtype=float)
            a_vals[i, j] = a_vals[j, i] = np.broadcast_to(v, (len(x[0]),))
    eig_min = _sym_eig_min(a_vals)
    worst = float(eig_min.min())
    spd_residual = 0.0 if worst > 0.0 else max(abs(worst), np.finfo(float).tiny)
    report.require("A_spd", spd_residual, 0.0,
                   witness=tuple(pts[int(eig_min.argmin())]))
    report.notes["A_min_eigenvalue"] = worst

    # div q = 0 pointwise, mean q = 0 over the cell
    div = np.zeros(len(x[0]))
    for d in range(n_dim):
        xp = list(np.asarray(c, dtype=float).copy() for c in x)
        xm = list(np.asarray(c, dtype=float).copy() for c in x)
        xp[d] = xp[d] + _DIV_FD_STEP
        xm[d] = xm[d] - _DIV_FD_STEP
        qd_p = np.asarray(q.entry(d).evaluate(tuple(xp)), dtype=float)
        qd_m = np.asarray(q.entry(d).evaluate(tuple(xm)), dtype=float)
        div += np.broadcast_to((qd_p - qd_m) / (2 * _DIV_FD_STEP), (len(x[0]),))
    worst_div = float(np.abs(div).max())
    report.require("q_divergence_free", worst_div, tol,
                   witness=tuple(pts[int(np.abs(div).argmax())]))

    grid_only = tuple(c[: grid_m ** n_dim] for c in x)
    mean_q = [float(np.mean(np.broadcast_to(
        np.asarray(q.entry(d).evaluate(grid_only), dtype=float),
        (grid_m ** n_dim,)))) for d in range(n_dim)]
    report.require("q_mean_zero", max(abs(m) for m in mean_q), tol,
                   witness=tuple(mean_q))

    # f(x,0) = f(x,1) = 0
    for s_val, label in ((0.0, "f_at_0"), (1.0, "f_at_1")):
        vals = np.broadcast_to(np.asarray(
            f.entry().evaluate(x, s_val), dtype=float), (len(x[0]),))
        worst_f = float(np.abs(vals).max())
        report.require(label, worst_f, tol,
                       witness=tuple(pts[int(np.abs(vals).argmax())]))

    # monotone tail [S, 1]
    u_grid = np.linspace(0.0, 1.0, n_u)
    f_mat = _eval_f_matrix(f, x, u_grid)
    declared_S = fragment.get("S")
    if declared_S is not None:
        S = float(declared_S)
        tail = u_grid >= S - 1e-12
        rise = float(np.max(np.diff(f_mat[:, tail], axis=1))) if tail.sum() > 1 else 0.0
        report.require("f_nonincreasing_on_[S,1]", rise, tol, witness=(S,))
    else:
        start = _monotone_tail_start(f_mat, u_grid, tol)
        if start is None:
            raise ValidationError("f_nonincreasing_on_[S,1]", math.inf, None)
        S = float(u_grid[max(start, 1)])
        report.add("f_nonincreasing_on_[S,1]", 0.0, tol, witness=(S,))
    report.notes["S"] = S

    try:
        df = derivative_u(f.entry())
    except NotDifferentiable:
        df = None
    reaction_class = None
    try:
        reaction_class = classify_reaction(
            f, params={**params, **({"theta": fragment["theta"]}
                                    if "theta" in fragment else {})},
            S=S, seed=seed, grid_m=grid_m, n_u=n_u, n_random=n_random, tol=tol)
        report.notes["reaction_class"] = reaction_class.to_dict()
    except Unclassifiable as exc:
        report.notes["reaction_class"] = None
        report.notes["unclassifiable_reason"] = str(exc)

    content = _medium_hash(n_dim, A, q, f, params, fragment.get("S"),
                           fragment.get("theta"))
    return MediumSpec(N=n_dim, A=A, q=q, f=f, df=df, S=S,
                      reaction_class=reaction_class, params=params,
                      report=report, content_hash=content)


def _sym_eig_min(a_vals):
    n_dim = a_vals.shape[0]
    if n_dim == 1:
        return a_vals[0, 0]
    if n_dim == 2:
        tr_half = 0.5 * (a_vals[0, 0] + a_vals[1, 1])
        rad = np.sqrt((0.5 * (a_vals[0, 0] - a_vals[1, 1])) ** 2
                      + a_vals[0, 1] ** 2)
        return tr_half - rad
    mats = np.moveaxis(a_vals, -1, 0)
    return np.linalg.eigvalsh(mats)[:, 0]
