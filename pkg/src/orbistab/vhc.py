"""Virtual holonomic constraint, reduced dynamics and the reference orbit.

The constraint is ``theta = Theta(phi)`` where ``Theta`` solves

    F_perp G(Theta, phi) = c1 sin(2 phi) + c2 sin(4 phi) + c3 (phi - pi/2)

on a grid. On the constraint the passive coordinate obeys
``alpha(phi) phidd + beta(phi) phid^2 + gamma(phi) = 0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .errors import AlphaVanished, DomainExceeded, IntegratorFailure, NoBracket, NonSmooth, NoReturn
from .interp import Interpolant

HALF_PI = 0.5 * math.pi


@dataclass(frozen=True)
class VhcSpec:
    c1: float
    c2: float
    c3: float
    phi_grid: np.ndarray
    theta_guess: float | None = None
    continuity_cap: float = 0.2
    scan_step: float = 0.02
    scan_halfwidth: float = 3.2

    def __post_init__(self):
        g = np.asarray(self.phi_grid, dtype=float)
        if g.ndim != 1 or len(g) < 4 or np.any(np.diff(g) <= 0):
            raise ValueError("phi_grid must be strictly increasing with at least 4 points")
        if not all(np.isfinite([self.c1, self.c2, self.c3])):
            raise ValueError("VHC coefficients must be finite")
        object.__setattr__(self, "phi_grid", g)

    @classmethod
    def uniform(cls, c1, c2, c3, phi_min=-1.0, phi_max=math.pi + 1.0, n=853, **kw):
        return cls(c1, c2, c3, np.linspace(phi_min, phi_max, n), **kw)

    def shaping(self, phi):
        """Right-hand side ``c1 sin 2phi + c2 sin 4phi + c3 (phi - pi/2)`` and two derivatives."""
        s2, c2_ = math.sin(2 * phi), math.cos(2 * phi)
        s4, c4 = math.sin(4 * phi), math.cos(4 * phi)
        v = self.c1 * s2 + self.c2 * s4 + self.c3 * (phi - HALF_PI)
        d1 = 2 * self.c1 * c2_ + 4 * self.c2 * c4 + self.c3
        d2 = -4 * self.c1 * s2 - 16 * self.c2 * s4
        return v, d1, d2


class ConstraintCurve:
    """``Theta(phi)`` with consistent first and second derivatives.

    Uses quintic Hermite interpolation of the grid values of Theta, Theta'
    and Theta''; the derivative methods differentiate that same polynomial.
    """

    def __init__(self, phi, theta, dtheta, ddtheta, spec=None):
        self.phi = np.asarray(phi, dtype=float)
        self.theta_grid = np.asarray(theta, dtype=float)
        self.dtheta_grid = np.asarray(dtheta, dtype=float)
        self.ddtheta_grid = np.asarray(ddtheta, dtype=float)
        self.spec = spec
        self._interp = Interpolant.hermite(self.phi, [self.theta_grid, self.dtheta_grid, self.ddtheta_grid])

    @property
    def domain(self):
        return float(self.phi[0]), float(self.phi[-1])

    def theta(self, phi):
        return self._interp(phi)

    def dtheta(self, phi):
        return self._interp(phi, 1)

    def ddtheta(self, phi):
        return self._interp(phi, 2)

    def eval1(self, phi):
        """``(Theta, Theta', Theta'')`` at one float."""
        return self._interp.eval1_all(phi)


def _fperp_g(model, th, phi):
    q = np.array([th, phi])
    return float(model.left_annihilator(q) @ model.gravity(q))


def _nearest_root(r, center, step, nk):
    """Root of ``r`` nearest to ``center``, scanning outward in steps of ``step``."""
    f0 = r(center)
    if f0 == 0.0:
        return center
    lo_x, lo_f = center, f0
    hi_x, hi_f = center, f0
    for k in range(1, nk + 1):
        x = center + k * step
        f = r(x)
        if f == 0.0:
            return x
        if (f > 0) != (hi_f > 0):
            return brentq(r, hi_x, x, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
        hi_x, hi_f = x, f
        x = center - k * step
        f = r(x)
        if f == 0.0:
            return x
        if (f > 0) != (lo_f > 0):
            return brentq(r, x, lo_x, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
        lo_x, lo_f = x, f
    return None


def solve_theta(model, spec: VhcSpec, fd_step=1e-6, fd_step2=1e-4, root_tol=1e-10):
    """Solve the constraint equation on ``spec.phi_grid``.

    First partials of the residual use central differences with ``fd_step``;
    second partials use ``fd_step2`` (a smaller step loses the second
    derivative to rounding).
    """
    grid = spec.phi_grid
    n = len(grid)
    th = np.empty(n)
    d1 = np.empty(n)
    d2 = np.empty(n)
    center = spec.theta_guess if spec.theta_guess is not None else 0.0
    nk = int(round(spec.scan_halfwidth / spec.scan_step))
    for i, phi in enumerate(grid):
        rhs = spec.shaping(phi)[0]

        def r(x, phi=phi, rhs=rhs):
            return _fperp_g(model, x, phi) - rhs

        root = _nearest_root(r, center, spec.scan_step, nk)
        if root is None:
            raise NoBracket(f"no sign change of the constraint residual at phi={phi:.6g}")
        if abs(r(root)) > root_tol:
            raise NoBracket(f"root polish failed at phi={phi:.6g} (residual {r(root):.3e})")
        if i > 0 and abs(root - th[i - 1]) > spec.continuity_cap:
            raise NonSmooth(f"Theta jumps by {root - th[i - 1]:.3g} between phi={grid[i-1]:.6g} and {phi:.6g}")
        th[i] = root
        center = root

        # implicit differentiation of g(theta, phi) - shaping(phi) = 0
        _, s1, s2 = spec.shaping(phi)
        h, H = fd_step, fd_step2
        g = lambda a, b: _fperp_g(model, a, b)
        g0 = g(root, phi)
        r_t = (g(root + h, phi) - g(root - h, phi)) / (2 * h)
        r_p = (g(root, phi + h) - g(root, phi - h)) / (2 * h) - s1
        r_tt = (g(root + H, phi) - 2 * g0 + g(root - H, phi)) / H ** 2
        r_pp = (g(root, phi + H) - 2 * g0 + g(root, phi - H)) / H ** 2 - s2
        r_tp = (g(root + H, phi + H) - g(root + H, phi - H) - g(root - H, phi + H) + g(root - H, phi - H)) / (4 * H * H)
        if abs(r_t) < 1e-12:
            raise NonSmooth(f"constraint residual is stationary in theta at phi={phi:.6g}")
        t1 = -r_p / r_t
        d1[i] = t1
        d2[i] = -(r_pp + 2 * r_tp * t1 + r_tt * t1 * t1) / r_t
    return ConstraintCurve(grid, th, d1, d2, spec=spec)


class ReducedCoeffs:
    """``alpha, beta, gamma`` along the constraint.

    Grid values are computed exactly from the model and the implicit
    derivatives of Theta, then interpolated by a degree-7 spline. The
    quintic Hermite curve is only C2, so ``beta`` (which contains Theta'')
    would otherwise have a kink at every grid node, and high-order adaptive
    integrators lose their error control there.
    """

    def __init__(self, model, curve: ConstraintCurve, degree=7):
        self.model = model
        self.curve = curve
        phi = curve.phi
        vals = np.array([self.exact(p, curve.theta_grid[i], curve.dtheta_grid[i], curve.ddtheta_grid[i])
                         for i, p in enumerate(phi)])
        self.grid_values = vals
        self._table = Interpolant.bspline(phi, vals, k=degree)
        self._t = self._table
        self._rows = [r.tolist() for r in self._table._vrows]

    @property
    def domain(self):
        return self.curve.domain

    def exact(self, phi, th=None, t1=None, t2=None):
        """Coefficients from the model at ``phi`` (no interpolation of the result)."""
        if th is None:
            th, t1, t2 = self.curve.eval1(phi)
        q = np.array([th, phi])
        fp = self.model.left_annihilator(q)
        M = self.model.mass(q)
        v = np.array([t1, 1.0])
        a = fp @ M @ v
        b = fp @ M @ np.array([t2, 0.0]) + fp @ self.model.coriolis(q, v) @ v
        g = fp @ self.model.gravity(q)
        return float(a), float(b), float(g)

    def eval1(self, phi):
        i, dx = self._t._locate(float(phi))
        a = b = g = 0.0
        for ca, cb, cg in self._rows[i]:
            a = a * dx + ca
            b = b * dx + cb
            g = g * dx + cg
        return a, b, g

    def _vec(self, phi, k):
        return self._table(phi)[..., k]

    def alpha(self, phi):
        return self._vec(phi, 0)

    def beta(self, phi):
        return self._vec(phi, 1)

    def gamma(self, phi):
        return self._vec(phi, 2)

    def acceleration(self, phi, dphi):
        a, b, g = self.eval1(phi)
        return -(b * dphi * dphi + g) / a


def reduced_coeffs(model, curve):
    return ReducedCoeffs(model, curve)


@dataclass(frozen=True)
class ReducedOptions:
    rtol: float = 1e-12
    atol: float = 1e-13
    max_horizon: float = 200.0
    closure_tol: float = 1e-8
    n_samples: int = 2048
    alpha_floor: float = 1e-12
    equilibrium_span: float = 1.0


@dataclass
class ReducedSolution:
    t: np.ndarray
    phi: np.ndarray
    dphi: np.ndarray
    ddphi: np.ndarray
    period: float
    closure_error: float
    is_equilibrium: bool = False
    half_period_state: tuple | None = None
    stats: dict = field(default_factory=dict)


def integrate_reduced(coeffs: ReducedCoeffs, phi0, dphi0, options=ReducedOptions()):
    """Integrate the reduced dynamics from ``(phi0, dphi0)`` over one period.

    The period is the return time to the Poincare section
    ``{dphi = 0, ddphi > 0}``; when the start is not on the section, the
    time between two successive section crossings is used and the returned
    samples start at the initial state.
    """
    lo, hi = coeffs.domain
    a0, b0, g0 = coeffs.eval1(phi0)
    if abs(a0) < options.alpha_floor:
        raise AlphaVanished(f"alpha({phi0}) = {a0:.3e}")
    acc0 = -(b0 * dphi0 ** 2 + g0) / a0
    if dphi0 == 0.0 and abs(acc0) < 1e-13:
        n = options.n_samples + 1
        t = np.linspace(0.0, options.equilibrium_span, n)
        z = np.zeros(n)
        return ReducedSolution(t, np.full(n, float(phi0)), z, z.copy(), options.equilibrium_span, 0.0,
                               is_equilibrium=True)
    sign_a = math.copysign(1.0, a0)

    def rhs(t, y):
        a, b, g = coeffs.eval1(y[0])
        return [y[1], -(b * y[1] * y[1] + g) / a]

    def section(t, y):
        return y[1]
    section.direction = 1.0

    def alpha_event(t, y):
        return sign_a * coeffs.eval1(y[0])[0] - options.alpha_floor
    alpha_event.terminal = True

    def domain_event(t, y):
        return min(y[0] - lo, hi - y[0])
    domain_event.terminal = True

    def turn(t, y):
        return y[1]
    turn.direction = -1.0

    on_section = dphi0 == 0.0 and acc0 > 0.0
    # a start on the section registers as a crossing at t = 0
    section.terminal = 2 if on_section else 3
    sol = solve_ivp(rhs, (0.0, options.max_horizon), [float(phi0), float(dphi0)], method="DOP853",
                    rtol=options.rtol, atol=options.atol, dense_output=True,
                    events=[section, alpha_event, domain_event, turn])
    if sol.status == -1:
        raise IntegratorFailure(sol.message)
    if len(sol.t_events[1]):
        raise AlphaVanished(f"alpha vanished at t={sol.t_events[1][0]:.6g}")
    if len(sol.t_events[2]):
        raise DomainExceeded(f"reduced trajectory left the constraint grid at t={sol.t_events[2][0]:.6g}")
    ts = [t for t in sol.t_events[0] if t > 1e-9]
    need = 1 if on_section else 2
    if len(ts) < need:
        raise NoReturn(f"no return to the section within {options.max_horizon} s")
    if on_section:
        T = ts[0]
        closure = abs(sol.sol(T)[0] - phi0)
    else:
        T = ts[1] - ts[0]
        closure = abs(sol.sol(ts[1])[0] - sol.sol(ts[0])[0])
        if T > options.max_horizon / 2:
            raise NoReturn("period exceeds half the horizon")
    if closure > options.closure_tol:
        raise NoReturn(f"section mismatch {closure:.3e} exceeds closure_tol {options.closure_tol:.1e}")
    if not on_section:
        # samples over [0, T] need dense output up to T
        if sol.t[-1] < T:
            raise NoReturn("integration stopped before one full period")
    n = options.n_samples + 1
    t = np.linspace(0.0, T, n)
    y = sol.sol(t)
    phi, dphi = y[0], y[1]
    ddphi = np.array([rhs(0.0, [p, d])[1] for p, d in zip(phi, dphi)])
    full = float(np.hypot(*(sol.sol(T) - np.array([phi0, dphi0]))))
    turns = [t_ for t_ in sol.t_events[3] if 1e-9 < t_ < T]
    half = None
    if turns:
        th_ = turns[0]
        half = (float(th_), *map(float, sol.sol(th_)))
    return ReducedSolution(t, phi, dphi, ddphi, float(T), float(closure), half_period_state=half,
                           stats={"nfev": int(sol.nfev), "state_closure": full})


class PeriodicOrbit:
    """Reference trajectory ``x*(t) = (Theta(phi*), phi*, Theta'(phi*) phid*, phid*)``.

    ``phi*(t)`` is a periodic quintic Hermite interpolant of the sampled
    reduced solution; the remaining coordinates are composed with the
    constraint curve so the constraint holds exactly between samples.
    """

    def __init__(self, curve: ConstraintCurve, sol: ReducedSolution, model=None, meta=None):
        self.curve = curve
        self.model = model
        self.T = float(sol.period)
        self.t = np.asarray(sol.t, dtype=float)
        phi = np.array(sol.phi, dtype=float)
        dphi = np.array(sol.dphi, dtype=float)
        ddphi = np.array(sol.ddphi, dtype=float)
        # close the samples exactly
        phi[-1], dphi[-1], ddphi[-1] = phi[0], dphi[0], ddphi[0]
        self.phi, self.dphi, self.ddphi = phi, dphi, ddphi
        self.is_equilibrium = sol.is_equilibrium
        self.closure_error = sol.closure_error
        self.half_period_state = sol.half_period_state
        self.meta = dict(meta or {})
        self._phi = Interpolant.hermite(self.t, [phi, dphi, ddphi], period=self.T)
        th = self.curve.theta(phi)
        self.theta = th
        self.dtheta = self.curve.dtheta(phi) * dphi

    def phi_at(self, t, nu=0):
        return self._phi(t, nu)

    def phase_state1(self, t):
        """``(phi, phid, phidd)`` at a single time."""
        return self._phi.eval1_all(t)

    def state_at(self, t):
        """Full state(s) ``(theta, phi, theta_dot, phi_dot)``; shape ``(..., 4)``."""
        t = np.asarray(t, dtype=float)
        phi = self._phi(t)
        dphi = self._phi(t, 1)
        th = self.curve.theta(phi)
        dth = self.curve.dtheta(phi) * dphi
        return np.stack([th, phi, dth, dphi], axis=-1)

    def samples(self):
        return np.column_stack([self.t, self.phi, self.dphi, self.theta, self.dtheta])

    def constraint_residuals(self, t=None):
        """Max ``|h(q*)|`` and ``|L_qd h(q*)|`` over the given times (default: sample grid)."""
        if t is None:
            t = self.t
        x = self.state_at(t)
        h = x[:, 0] - self.curve.theta(x[:, 1])
        lh = x[:, 2] - self.curve.dtheta(x[:, 1]) * x[:, 3]
        return float(np.max(np.abs(h))), float(np.max(np.abs(lh)))


def lift_trajectory(curve, sol: ReducedSolution, model=None, meta=None):
    return PeriodicOrbit(curve, sol, model=model, meta=meta)
