"""Direct time integration of the reaction-diffusion equation on a box.

The full problem  u_t = div(A(x) grad u) + q(x) . grad u + f(x, u)  is
stepped by explicit Euler on a uniform grid over [-R, R]^N (N = 1 or 2)
with homogeneous Dirichlet data on the truncation boundary:

  * diffusion in conservative form, A averaged to cell faces,
  * centered differences for the drift,
  * the clamped reaction evaluated nodewise.

The explicit step obeys the diffusion CFL dt <= 0.9 dx^2 / (2 N max
lambda_max(A)) and the advection CFL dt <= dx / max|q|; under these the
scheme is monotone at the resolutions used here, which is what the
comparison-principle tests rely on.  States stay in [0, 1]: overshoot
beyond 1e-12 raises StabilityError rather than being clamped silently.

Truncation is monitored: solutions ahead of the front decay rapidly, so
the outermost five-cell frame must stay below 1e-4; when it does not, the
run raises TruncationInvalid.  Unbounded initial supports (cones) touch
the boundary by construction and require the monitor to be disabled
explicitly; the Dirichlet mismatch then stays confined to an O(1) boundary
layer because the invaded state is stable.
"""

import struct
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .fieldlang import parse_expr
from .media import MediumSpec

__all__ = ["SimConfig", "SimState", "SimResult", "SnapshotSeries",
           "Simulation", "SupportTooLarge", "StabilityError",
           "TruncationInvalid", "init", "step", "run", "save_snapshot",
           "load_snapshot"]

CFL_SAFETY = 0.9
MONITOR_WIDTH = 5
MONITOR_TOL = 1e-4
OVERSHOOT_TOL = 1e-12


class SupportTooLarge(Exception):
    pass


class StabilityError(Exception):
    pass


class TruncationInvalid(Exception):
    def __init__(self, t, frame_max):
        super().__init__(f"boundary frame reached {frame_max:.3e} at t={t:.4g}; "
                         "the truncated domain is too small for this run")
        self.t = t
        self.frame_max = frame_max


@dataclass(frozen=True)
class SimState:
    t: float
    u: np.ndarray
    boundary_flag: bool = False


@dataclass(frozen=True)
class SnapshotSeries:
    axes: tuple                 # one coordinate array per axis
    times: np.ndarray
    fields: list                # one grid array per time

    @property
    def dx(self):
        return float(self.axes[0][1] - self.axes[0][0])


@dataclass(frozen=True)
class SimResult:
    config: "SimConfig"
    snapshots: list             # SimState, in time order
    axes: tuple
    invasion: bool
    steps: int
    dt: float

    def series(self) -> SnapshotSeries:
        return SnapshotSeries(axes=self.axes,
                              times=np.array([s.t for s in self.snapshots]),
                              fields=[s.u for s in self.snapshots])


@dataclass
class SimConfig:
    medium: MediumSpec
    R_dom: float
    dx: float
    T_final: float
    snapshot_times: Sequence[float]
    dt: Optional[float] = None          # None: largest stable step
    initial: dict = field(default_factory=lambda: {
        "type": "ball", "center": None, "radius": 5.0, "height": 1.0})
    boundary_monitor: bool = True
    monitor_tol: float = MONITOR_TOL

    def __post_init__(self):
        n_cells = self.R_dom * 2 / self.dx
        if abs(n_cells - round(n_cells)) > 1e-9:
            raise ValueError("2*R_dom must be an integer multiple of dx")
        bound = self.dt_bound()
        if self.dt is not None and self.dt > bound * (1 + 1e-12):
            raise ValueError(f"dt={self.dt} violates the CFL bound {bound:.3e}")

    def dt_bound(self):
        lam_max, q_max = _coefficient_bounds(self.medium)
        bound = CFL_SAFETY * self.dx ** 2 / (2 * self.medium.N * lam_max)
        if q_max > 0:
            bound = min(bound, self.dx / q_max)
        return bound


def _coefficient_bounds(medium, grid_m=64):
    axes = [np.arange(grid_m) / grid_m] * medium.N
    mesh = tuple(np.meshgrid(*axes, indexing="ij"))
    shape = mesh[0].shape
    if medium.N == 1:
        lam_max = float(np.max(np.broadcast_to(
            np.asarray(medium.a_entry(0, 0).evaluate(mesh), float), shape)))
    else:
        a11 = np.broadcast_to(np.asarray(
            medium.a_entry(0, 0).evaluate(mesh), float), shape)
        a22 = np.broadcast_to(np.asarray(
            medium.a_entry(1, 1).evaluate(mesh), float), shape)
        a12 = np.broadcast_to(np.asarray(
            medium.a_entry(0, 1).evaluate(mesh), float), shape)
        lam_max = float(np.max(0.5 * (a11 + a22)
                               + np.sqrt((0.5 * (a11 - a22)) ** 2 + a12 ** 2)))
    q_max = 0.0
    for d in range(medium.N):
        q_d = np.broadcast_to(np.asarray(
            medium.q_entry(d).evaluate(mesh), float), shape)
        q_max = max(q_max, float(np.max(np.abs(q_d))))
    return lam_max, q_max


# ---------------------------------------------------------------------------
# Initial data
# ---------------------------------------------------------------------------

def _build_initial(config, mesh):
    spec = dict(config.initial)
    kind = spec.pop("type")
    n_dim = config.medium.N
    if kind == "ball":
        center = np.asarray(spec.get("center") or np.zeros(n_dim), float)
        radius = float(spec["radius"])
        height = float(spec.get("height", 1.0))
        if np.max(np.abs(center)) + radius >= config.R_dom - 2 * config.dx:
            raise SupportTooLarge(
                f"ball of radius {radius} at {center} does not fit strictly "
                f"inside [-{config.R_dom}, {config.R_dom}]^{n_dim}")
        r2 = sum((mesh[d] - center[d]) ** 2 for d in range(n_dim))
        return np.where(r2 <= radius * radius, height, 0.0)
    if kind == "cone":
        if config.boundary_monitor:
            raise ValueError("cone initial data reaches the boundary; "
                             "set boundary_monitor=False explicitly")
        apex = np.asarray(spec.get("apex") or np.zeros(n_dim), float)
        axis = np.asarray(spec["axis"], float)
        axis = axis / np.linalg.norm(axis)
        half_angle = float(spec["half_angle"])
        height = float(spec.get("height", 1.0))
        rel = [mesh[d] - apex[d] for d in range(n_dim)]
        norm = np.sqrt(sum(r * r for r in rel))
        dot = sum(rel[d] * axis[d] for d in range(n_dim))
        with np.errstate(invalid="ignore", divide="ignore"):
            cos_angle = np.where(norm > 0, dot / np.where(norm > 0, norm, 1.0), 1.0)
        return np.where(cos_angle >= np.cos(half_angle), height, 0.0)
    if kind == "expression":
        expr = parse_expr(spec["source"], n_dim)
        u0 = np.asarray(expr.evaluate(mesh), dtype=float)
        u0 = np.broadcast_to(u0, mesh[0].shape).copy()
        if u0.min() < -1e-12 or u0.max() > 1 + 1e-12:
            raise ValueError("initial expression must take values in [0, 1]")
        return np.clip(u0, 0.0, 1.0)
    raise ValueError(f"unknown initial datum type {kind!r}")


# ---------------------------------------------------------------------------
# Engine
# ---------------------------------------------------------------------------

class Simulation:
    """Precomputes coefficient grids for one config and steps the state."""

    def __init__(self, config: SimConfig):
        self.config = config
        medium = config.medium
        n_dim = medium.N
        n_nodes = int(round(2 * config.R_dom / config.dx)) + 1
        self.axes = tuple(np.linspace(-config.R_dom, config.R_dom, n_nodes)
                          for _ in range(n_dim))
        self.mesh = tuple(np.meshgrid(*self.axes, indexing="ij"))
        shape = self.mesh[0].shape

        def sample(expr):
            return np.broadcast_to(np.asarray(expr.evaluate(self.mesh), float),
                                   shape).copy()

        if n_dim == 1:
            a00 = sample(medium.a_entry(0, 0))
            self.a_face = (0.5 * (a00[1:] + a00[:-1]),)
            self.a_cross = None
            self.q = (sample(medium.q_entry(0)),)
        else:
            a00 = sample(medium.a_entry(0, 0))
            a11 = sample(medium.a_entry(1, 1))
            a01 = sample(medium.a_entry(0, 1))
            self.a_face = (0.5 * (a00[1:, :] + a00[:-1, :]),
                           0.5 * (a11[:, 1:] + a11[:, :-1]))
            self.a_cross = a01 if np.any(a01 != 0.0) else None
            self.q = (sample(medium.q_entry(0)), sample(medium.q_entry(1)))
        self.q_active = tuple(np.any(qd != 0.0) for qd in self.q)
        self.medium = medium

    def initial_state(self) -> SimState:
        u0 = _build_initial(self.config, self.mesh)
        return SimState(t=0.0, u=u0, boundary_flag=False)

    def _frame_max(self, u):
        w = MONITOR_WIDTH
        if self.medium.N == 1:
            return float(max(u[:w].max(), u[-w:].max()))
        return float(max(u[:w, :].max(), u[-w:, :].max(),
                         u[:, :w].max(), u[:, -w:].max()))

    def step_once(self, state: SimState, dt: float) -> SimState:
        u = state.u
        dx = self.config.dx
        dx2 = dx * dx
        rate = np.zeros_like(u)
        if self.medium.N == 1:
            flux = self.a_face[0] * (u[1:] - u[:-1])
            rate[1:-1] += (flux[1:] - flux[:-1]) / dx2
            if self.q_active[0]:
                rate[1:-1] += self.q[0][1:-1] * (u[2:] - u[:-2]) / (2 * dx)
        else:
            flux0 = self.a_face[0] * (u[1:, :] - u[:-1, :])
            rate[1:-1, :] += (flux0[1:, :] - flux0[:-1, :]) / dx2
            flux1 = self.a_face[1] * (u[:, 1:] - u[:, :-1])
            rate[:, 1:-1] += (flux1[:, 1:] - flux1[:, :-1]) / dx2
            if self.a_cross is not None:
                du1 = (u[:, 2:] - u[:, :-2]) / (2 * dx)
                g = self.a_cross[:, 1:-1] * du1
                rate[1:-1, 1:-1] += (g[2:, :] - g[:-2, :]) / (2 * dx)
                du0 = (u[2:, :] - u[:-2, :]) / (2 * dx)
                g = self.a_cross[1:-1, :] * du0
                rate[1:-1, 1:-1] += (g[:, 2:] - g[:, :-2]) / (2 * dx)
            if self.q_active[0]:
                rate[1:-1, :] += self.q[0][1:-1, :] * (u[2:, :] - u[:-2, :]) / (2 * dx)
            if self.q_active[1]:
                rate[:, 1:-1] += self.q[1][:, 1:-1] * (u[:, 2:] - u[:, :-2]) / (2 * dx)
        rate += self.medium.reaction(self.mesh, u)
        unew = u + dt * rate

        if not np.all(np.isfinite(unew)):
            raise StabilityError(f"non-finite state at t={state.t + dt:.4g}")
        umin, umax = float(unew.min()), float(unew.max())
        if umin < -OVERSHOOT_TOL or umax > 1.0 + OVERSHOOT_TOL:
            raise StabilityError(
                f"range violation at t={state.t + dt:.4g}: "
                f"min={umin:.3e}, max={umax:.3e} (CFL too lax or bad medium)")
        np.clip(unew, 0.0, 1.0, out=unew)

        flag = state.boundary_flag
        if self.config.boundary_monitor:
            frame = self._frame_max(unew)
            if frame > self.config.monitor_tol:
                raise TruncationInvalid(state.t + dt, frame)
        return SimState(t=state.t + dt, u=unew, boundary_flag=flag)

    def run(self) -> SimResult:
        config = self.config
        dt_bound = config.dt_bound() if config.dt is None else config.dt
        n_steps = max(1, int(np.ceil(config.T_final / dt_bound - 1e-12)))
        dt = config.T_final / n_steps
        want = sorted(set(float(t) for t in config.snapshot_times))
        snap_steps = {}
        for t_req in want:
            k = int(round(t_req / dt))
            snap_steps.setdefault(min(max(k, 0), n_steps), t_req)

        state = self.initial_state()
        snapshots = []
        if 0 in snap_steps:
            snapshots.append(state)
        for k in range(1, n_steps + 1):
            state = self.step_once(state, dt)
            if k in snap_steps:
                snapshots.append(state)
        invasion = self._invasion_indicator(state)
        return SimResult(config=config, snapshots=snapshots, axes=self.axes,
                         invasion=invasion, steps=n_steps, dt=dt)

    def _invasion_indicator(self, state):
        r2 = sum(m * m for m in self.mesh)
        ball = r2 <= 4.0
        return bool(np.min(state.u[ball]) >= 1.0 - 1e-2)


def init(config: SimConfig) -> SimState:
    return Simulation(config).initial_state()


def step(state: SimState, config: SimConfig, dt: float) -> SimState:
    return Simulation(config).step_once(state, dt)


def run(config: SimConfig) -> SimResult:
    return Simulation(config).run()


# ---------------------------------------------------------------------------
# Snapshot files: int64 N, int64 dims[N], float64 dx, float64 t, row-major u
# ---------------------------------------------------------------------------

def save_snapshot(path, state: SimState, dx: float):
    u = np.ascontiguousarray(state.u, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<q", u.ndim))
        fh.write(struct.pack(f"<{u.ndim}q", *u.shape))
        fh.write(struct.pack("<dd", dx, state.t))
        fh.write(u.tobytes())


def load_snapshot(path):
    """Returns (SimState, axes); the grid is centered, so axes follow from dims."""
    with open(path, "rb") as fh:
        (n_dim,) = struct.unpack("<q", fh.read(8))
        dims = struct.unpack(f"<{n_dim}q", fh.read(8 * n_dim))
        dx, t = struct.unpack("<dd", fh.read(16))
        u = np.frombuffer(fh.read(8 * int(np.prod(dims))),
                          dtype="<f8").reshape(dims).copy()
    axes = tuple(np.linspace(-(n - 1) * dx / 2, (n - 1) * dx / 2, n)
                 for n in dims)
    return SimState(t=t, u=u), axes
