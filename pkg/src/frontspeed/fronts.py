"""Planar traveling fronts of the homogeneous 1-D reaction equation.

A front with speed c solves the phase-plane problem

    phi'' + c phi' + f(phi) = 0,   phi(-inf) = 1,  phi(+inf) = 0,

with phi decreasing.  For Ignition and Bistable reactions the speed is
unique and is found by bisection on c: trajectories are launched from the
unstable manifold of the equilibrium (1, 0) and classified as undershoot
(phi crosses 0 with negative slope: c too small) or overshoot (phi' turns
positive, or the trajectory stalls at a positive level: c too large).  For
KPP reactions the minimal speed is the closed form 2 sqrt(f'(0)), and
profiles exist for every c >= c*.

Profiles are sampled on a uniform grid of [-Z, Z], normalized so that
phi(0) = 1/2, with exact exponential tails appended beyond the integrated
range.  The reported residual re-derives phi'' by second-order differences
on the sample grid, so it is independent of the integrator.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .media import MediumSpec

__all__ = ["FrontProfile", "NoSignChange", "IntegratorFailure",
           "SpeedBelowMinimal", "NonPositiveLinearization", "shoot_front",
           "kpp_minimal_speed", "kpp_profile"]

PHI_START_OFFSET = 1e-6   # launch amplitude on the unstable manifold of (1,0)
PHI_STOP = 1e-5           # truncation level before appending the exact tail
S_MAX = 400.0             # phase-plane arc length budget


class NoSignChange(Exception):
    """The initial bracket [0, c_max] does not change shooting outcome."""


class IntegratorFailure(Exception):
    pass


class SpeedBelowMinimal(Exception):
    pass


class NonPositiveLinearization(Exception):
    pass


@dataclass(frozen=True)
class FrontProfile:
    c: float
    z: np.ndarray
    phi: np.ndarray
    kind: str                  # Ignition | Bistable-homogeneous | KPP
    residual: float            # max |D2 phi + c D phi + f(phi)| on the interior
    meta: dict = field(default_factory=dict)

    def value_at(self, z):
        return np.interp(z, self.z, self.phi)

    def shifted_to_level(self, level):
        """(z, phi) with the grid shifted so phi(0) = level."""
        z_level = _crossing_position(self.z, self.phi, level)
        return self.z - z_level, self.phi


def _crossing_position(z, phi, level):
    idx = np.nonzero((phi[:-1] >= level) & (phi[1:] < level))[0]
    if idx.size == 0:
        raise ValueError(f"profile never crosses level {level}")
    i = idx[0]
    t = (phi[i] - level) / (phi[i] - phi[i + 1])
    return z[i] + t * (z[i + 1] - z[i])


def _homogeneous_reaction(medium):
    if any(e.max_var_index() > 0 for e in medium.f.entries):
        raise ValueError("front shooting needs an x-independent reaction")
    expr = medium.f.entry()

    def f(s):
        s_arr = np.asarray(s, dtype=float)
        inside = (s_arr > 0.0) & (s_arr < 1.0)
        vals = np.asarray(expr.evaluate((np.zeros_like(s_arr),),
                                        np.clip(s_arr, 0.0, 1.0)), dtype=float)
        out = np.where(inside, vals, 0.0)
        return float(out) if np.isscalar(s) else out

    return f


def _one_sided_slope(f, at, h=1e-6):
    if at == 0.0:
        return f(h) / h
    return -f(1.0 - h) / h


def _unstable_rate_at_one(f, c):
    fp1 = _one_sided_slope(f, 1.0)          # f'(1) <= 0 for admissible reactions
    return 0.5 * (-c + np.sqrt(c * c - 4.0 * fp1))


def _shoot(f, c, events):
    def rhs(_, y):
        return (y[1], -c * y[1] - f(y[0]))

    mu = _unstable_rate_at_one(f, c)
    y0 = (1.0 - PHI_START_OFFSET, -PHI_START_OFFSET * mu)
    sol = solve_ivp(rhs, (0.0, S_MAX), y0, method="RK45", rtol=1e-10,
                    atol=1e-13, events=events, dense_output=True)
    if sol.status == -1:
        raise IntegratorFailure(sol.message)
    return sol


def _classify(f, c):
    """'under' when phi crosses 0 first, 'over' when phi' turns positive/stalls."""
    crossed_zero = lambda _, y: y[0]
    crossed_zero.terminal = True
    crossed_zero.direction = -1
    slope_up = lambda _, y: y[1]
    slope_up.terminal = True
    slope_up.direction = 1
    sol = _shoot(f, c, [crossed_zero, slope_up])
    if sol.t_events[0].size:
        return "under"
    if sol.t_events[1].size:
        return "over"
    return "over" if sol.y[0, -1] > 1e-6 else "under"


def _sample_profile(sol, c, f, z_half, n_samples, stop_level):
    """Uniform samples of the trajectory on [-Z, Z], phi(0) = 1/2, exact tails."""
    s_end = sol.t[-1]
    s_half = brentq(lambda s: sol.sol(s)[0] - 0.5, 0.0, s_end, xtol=1e-12)
    z = np.linspace(-z_half, z_half, n_samples)
    phi = np.empty_like(z)

    lo, hi = -s_half, s_end - s_half      # trajectory range in shifted z
    inside = (z >= lo) & (z <= hi)
    phi[inside] = sol.sol(z[inside] + s_half)[0]

    phi_start, v_start = sol.sol(0.0)[:2]
    rate_left = v_start / (phi_start - 1.0)          # unstable rate at 1
    left = z < lo
    phi[left] = 1.0 - (1.0 - phi_start) * np.exp(rate_left * (z[left] - lo))

    phi_end, v_end = sol.sol(s_end)[:2]
    rate_right = v_end / phi_end if phi_end > 0 else -c
    if rate_right >= 0:
        rate_right = -max(c, 1e-3)
    right = z > hi
    phi[right] = phi_end * np.exp(rate_right * (z[right] - hi))

    dz = z[1] - z[0]
    interior = slice(1, -1)
    d2 = (phi[2:] - 2 * phi[1:-1] + phi[:-2]) / dz**2
    d1 = (phi[2:] - phi[:-2]) / (2 * dz)
    r = np.abs(d2 + c * d1 + f(phi[interior]))
    # rms interior norm: a C^0 reaction kink (Ignition) touches single cells
    # and would dominate a sup norm without saying anything about the front
    residual = float(np.sqrt(np.mean(r * r)))
    residual_max = float(np.max(r))
    return z, phi, residual, residual_max


def shoot_front(medium: MediumSpec, tol: float = 1e-10, *, z_half: float = 50.0,
                n_samples: int = 40001, c_max: float = None) -> FrontProfile:
    """Unique front speed and profile for Ignition / Bistable reactions.

    Bisects on c between the undershoot and overshoot regimes until the
    bracket is narrower than `tol`; the profile is integrated on the
    undershooting side of the final bracket (it traverses the whole front).
    """
    rc = medium.reaction_class
    if rc is None or rc.tag not in ("Ignition", "Bistable-homogeneous"):
        raise ValueError("shoot_front needs an Ignition or Bistable-homogeneous "
                         f"reaction, got {None if rc is None else rc.tag}")
    f = _homogeneous_reaction(medium)
    if rc.tag == "Bistable-homogeneous" and rc.integral_f is not None \
            and rc.integral_f <= 1e-8:
        warnings.warn("reaction mass is ~0: the unique speed is ~0 as well")

    if c_max is None:
        s = np.linspace(1e-4, 1.0, 4000)
        slope_bound = float(np.max(f(s) / s))
        c_max = 2.2 * np.sqrt(slope_bound) if slope_bound > 0 else 10.0

    if _classify(f, 0.0) != "under":
        # a zero-mass bistable front has speed exactly 0
        c_lo = c_hi = 0.0
    elif _classify(f, c_max) != "over":
        raise NoSignChange(f"no overshoot at c_max={c_max:.3g}")
    else:
        c_lo, c_hi = 0.0, c_max
        iterations = 0
        while c_hi - c_lo > tol:
            mid = 0.5 * (c_lo + c_hi)
            if _classify(f, mid) == "under":
                c_lo = mid
            else:
                c_hi = mid
            iterations += 1
            if iterations > 200:
                raise IntegratorFailure("bisection failed to narrow the bracket")

    c = 0.5 * (c_lo + c_hi)
    stop = lambda _, y: y[0] - PHI_STOP
    stop.terminal = True
    stop.direction = -1
    sol = _shoot(f, c_lo if c_lo > 0 else c, [stop])
    if not sol.t_events[0].size:
        raise IntegratorFailure("profile pass did not reach the stop level")
    z, phi, residual, residual_max = _sample_profile(sol, c, f, z_half,
                                                     n_samples, PHI_STOP)
    return FrontProfile(c=c, z=z, phi=phi, kind=rc.tag, residual=residual,
                        meta={"c_lo": c_lo, "c_hi": c_hi, "tol": tol,
                              "residual_max": residual_max})


def kpp_minimal_speed(medium: MediumSpec) -> float:
    """Minimal front speed 2 sqrt(f'(0)) of a homogeneous KPP reaction."""
    f = _homogeneous_reaction(medium)
    fu0 = _one_sided_slope(f, 0.0)
    if medium.df is not None:
        fu0 = float(medium.df.evaluate((0.0,), 0.0))
    if fu0 <= 0:
        raise NonPositiveLinearization(f"d_u f(0) = {fu0:.3e} <= 0")
    rc = medium.reaction_class
    if rc is None or rc.tag != "KPP":
        raise ValueError("kpp_minimal_speed needs a KPP-classified reaction")
    return 2.0 * np.sqrt(fu0)


def kpp_profile(medium: MediumSpec, c: float, *, z_half: float = 50.0,
                n_samples: int = 40001) -> FrontProfile:
    """Monotone KPP front at speed c >= c* (shot from the saddle at 1)."""
    c_min = kpp_minimal_speed(medium)
    if c < c_min * (1.0 - 1e-12):
        raise SpeedBelowMinimal(f"c={c} below minimal speed {c_min}")
    f = _homogeneous_reaction(medium)
    stop = lambda _, y: y[0] - PHI_STOP
    stop.terminal = True
    stop.direction = -1
    sol = _shoot(f, c, [stop])
    if not sol.t_events[0].size:
        raise IntegratorFailure("KPP profile did not reach the stop level")
    z, phi, residual, residual_max = _sample_profile(sol, c, f, z_half,
                                                     n_samples, PHI_STOP)
    return FrontProfile(c=c, z=z, phi=phi, kind="KPP", residual=residual,
                        meta={"c_min": c_min, "residual_max": residual_max})
