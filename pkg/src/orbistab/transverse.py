"""Transverse coordinates ``(tau, xi)`` around the reference orbit and the
periodic linearization ``dxi/dtau = A(tau) xi + B(tau) w``.

The chart uses the clockwise polar angle of ``(phi, phid)`` about
``(pi/2, 0)``:

    tau = atan2(-phid, phi - pi/2)
    xi1 = theta - Theta(phi),   xi2 = thetad - Theta'(phi) phid
    xi3 = (phi - phi*(tau)) cos tau - (phid - phid*(tau)) sin tau

``xi3`` is the radial offset ``rho - rho*(tau)`` from the reference curve in
the passive phase plane, which gives a closed-form inverse.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .dynamics import state_derivative, split_state
from .errors import NewtonDiverged, NotMonotone, OutsideTube, StepUnderflow
from .interp import Interpolant, wrap_angle
from .pfl import u_from_w

HALF_PI = 0.5 * math.pi
TWO_PI = 2.0 * math.pi

# y = J xi picks the constraint output out of the transverse state
J_OUTPUT = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])


def polar(phi, dphi):
    """``(tau, rho)`` of a passive phase-plane point."""
    x = phi - HALF_PI
    return math.atan2(-dphi, x), math.hypot(x, dphi)


def tau_rate(phi, dphi, ddphi):
    """``dtau/dt`` and ``drho/dt`` for a moving phase-plane point."""
    x = phi - HALF_PI
    r2 = x * x + dphi * dphi
    return (dphi * dphi - x * ddphi) / r2, dphi * (x + ddphi) / math.sqrt(r2)


class TransverseChart:
    """Moving chart built from a periodic orbit.

    ``rho_ref(tau)`` is the orbit's radius in the passive phase plane as a
    function of the polar angle; ``t_of_tau`` inverts the angle along the
    orbit. Both are periodic cubic Hermite interpolants on ``n_tau`` points.
    """

    T_tau = TWO_PI

    def __init__(self, orbit, curve, n_tau=4096, monotone_margin=0.1):
        self.orbit = orbit
        self.curve = curve
        T = orbit.T
        ts = orbit.t
        taus = np.empty(len(ts))
        rates = np.empty(len(ts))
        for i, t in enumerate(ts):
            p, dp, ddp = orbit.phase_state1(t)
            taus[i] = polar(p, dp)[0]
            rates[i] = tau_rate(p, dp, ddp)[0]
        med = float(np.median(rates))
        if not np.all(rates > 0) or rates.min() < monotone_margin * med:
            k = int(np.argmin(rates))
            raise NotMonotone(f"dtau/dt = {rates[k]:.3e} at t = {ts[k]:.4g} (median {med:.3e})")
        self.tau_rate_samples = rates
        self.monotonicity_margin = float(rates.min() / med)
        unwrapped = np.unwrap(taus)
        # start the angle at -pi for a start on the negative phi axis
        if abs(unwrapped[0] - math.pi) < 1e-12:
            unwrapped -= TWO_PI
        self.tau0 = float(unwrapped[0])
        span = unwrapped[-1] - unwrapped[0]
        if abs(span - TWO_PI) > 1e-6:
            raise NotMonotone(f"orbit angle advances by {span:.6g} over one period, expected 2 pi")
        self.tau_of_t_samples = unwrapped
        self.T = T

        # rho_ref and t(tau) on a uniform tau grid
        grid = self.tau0 + np.linspace(0.0, TWO_PI, n_tau + 1)
        tg = np.empty(n_tau + 1)
        rho = np.empty(n_tau + 1)
        drho = np.empty(n_tau + 1)
        dt = np.empty(n_tau + 1)
        j = 0
        for k, tk in enumerate(grid[:-1]):
            while j + 1 < len(ts) - 1 and unwrapped[j + 1] <= tk:
                j += 1
            if unwrapped[j] == tk:
                tt = ts[j]
            else:
                f = lambda t: self._unwrapped_tau(t, j, unwrapped) - tk
                tt = brentq(f, ts[j], ts[j + 1], xtol=1e-15, rtol=4 * np.finfo(float).eps)
            p, dp, ddp = orbit.phase_state1(tt)
            tr, rr = tau_rate(p, dp, ddp)
            tg[k] = tt
            rho[k] = math.hypot(p - HALF_PI, dp)
            drho[k] = rr / tr
            dt[k] = 1.0 / tr
        tg[-1], rho[-1], drho[-1], dt[-1] = tg[0] + T, rho[0], drho[0], dt[0]
        self.tau_grid = grid
        self._rho = Interpolant.hermite(grid, [rho, drho], period=TWO_PI)
        # t(tau) minus its secular part is periodic
        lin = (grid - self.tau0) * (T / TWO_PI)
        self._dt = Interpolant.hermite(grid, [tg - lin, dt - T / TWO_PI], period=TWO_PI)
        self.rho_min = float(rho.min())
        lo, hi = curve.domain
        phis = HALF_PI + rho * np.cos(grid)
        domain_margin = float(min(phis.min() - lo, hi - phis.max()))
        self.tube_radius = 0.5 * min(self.rho_min, max(domain_margin, 0.0))

    def _unwrapped_tau(self, t, j, unwrapped):
        p, dp, _ = self.orbit.phase_state1(t)
        tau = polar(p, dp)[0]
        # pick the branch nearest the sampled unwrapped value
        ref = unwrapped[j]
        return tau + TWO_PI * round((ref - tau) / TWO_PI)

    # reference functions of tau ------------------------------------------
    def rho_ref(self, tau, nu=0):
        return self._rho(tau, nu)

    def phi_of_tau(self, tau):
        tau = np.asarray(tau, dtype=float)
        return HALF_PI + self._rho(tau) * np.cos(tau)

    def dphi_of_tau(self, tau):
        tau = np.asarray(tau, dtype=float)
        return -self._rho(tau) * np.sin(tau)

    def t_of_tau(self, tau):
        """Orbit time at angle ``tau`` (unwrapped: increases by ``T`` per turn)."""
        tau = np.asarray(tau, dtype=float)
        return self._dt(tau) + (tau - self.tau0) * (self.T / TWO_PI)

    # forward map ---------------------------------------------------------
    def tau(self, x):
        q, qd = split_state(x)
        return polar(q[1], qd[1])[0]

    def xi(self, x):
        return self.forward(x)[1]

    def forward(self, x):
        """``(tau, xi)`` of a state (``tau`` principal value)."""
        q, qd = split_state(x)
        phi, dphi = q[1], qd[1]
        tau = math.atan2(-dphi, phi - HALF_PI)
        th, t1, _ = self.curve.eval1(phi)
        r = self._rho.eval1(tau)
        c, s = math.cos(tau), math.sin(tau)
        xi3 = (phi - HALF_PI - r * c) * c - (dphi + r * s) * s
        return tau, np.array([q[0] - th, qd[0] - t1 * dphi, xi3])

    def invert(self, tau, xi, tol=1e-12, max_iter=8):
        """State with chart coordinates ``(tau, xi)``."""
        xi = np.asarray(xi, dtype=float)
        r = self._rho.eval1(tau) + xi[2]
        if r <= 0.0:
            raise OutsideTube(f"radial coordinate {r:.3e} is not positive at tau={tau:.4g}")
        phi = HALF_PI + r * math.cos(tau)
        dphi = -r * math.sin(tau)
        th, t1, _ = self.curve.eval1(phi)
        x = np.array([th + xi[0], phi, xi[1] + t1 * dphi, dphi])
        # polish on the forward map (the closed form is exact up to rounding)
        target = np.concatenate([[tau], xi])
        for _ in range(max_iter):
            res = self._residual(x, target)
            if np.max(np.abs(res)) <= tol * (1.0 + np.max(np.abs(target))):
                return x
            x = x - np.linalg.solve(self.jacobian(x), res)
        res = self._residual(x, target)
        if np.max(np.abs(res)) > 1e3 * tol:
            raise NewtonDiverged(f"chart inversion residual {np.max(np.abs(res)):.3e}")
        return x

    def _residual(self, x, target):
        tau, xi = self.forward(x)
        return np.concatenate([[wrap_angle(tau - target[0])], xi - target[1:]])

    def jacobian(self, x, h=1e-7):
        """Central-difference Jacobian of ``x -> (tau, xi)``."""
        x = np.asarray(x, dtype=float)
        Jm = np.empty((4, 4))
        for j in range(4):
            e = np.zeros(4)
            e[j] = h
            tp, xp = self.forward(x + e)
            tm, xm = self.forward(x - e)
            Jm[0, j] = wrap_angle(tp - tm) / (2 * h)
            Jm[1:, j] = (xp - xm) / (2 * h)
        return Jm

    def jacobian_conditioning(self, taus):
        """Condition numbers of the forward-map Jacobian at orbit points ``tau``."""
        return np.array([np.linalg.cond(self.jacobian(self.invert(t, np.zeros(3)))) for t in taus])

    def in_tube(self, xi, radius=None):
        radius = self.tube_radius if radius is None else radius
        return abs(xi[2]) < radius

    # transverse vector field -----------------------------------------------
    def xi_rates(self, x, xdot):
        """``(dtau/dt, dxi/dt)`` along a state velocity ``xdot``."""
        q, qd = split_state(x)
        phi, dphi = q[1], qd[1]
        ddth, ddphi = xdot[2], xdot[3]
        _, t1, t2 = self.curve.eval1(phi)
        tau = math.atan2(-dphi, phi - HALF_PI)
        tr, rr = tau_rate(phi, dphi, ddphi)
        d1 = qd[0] - t1 * dphi
        d2 = ddth - t2 * dphi * dphi - t1 * ddphi
        d3 = rr - self._rho.eval1_all(tau)[1] * tr
        return tr, np.array([d1, d2, d3])


def chart_from_orbit(orbit, curve, n_tau=4096):
    return TransverseChart(orbit, curve, n_tau=n_tau)


def chart_invert(chart, tau, xi):
    return chart.invert(tau, xi)


def transverse_field(model, curve, gains, chart, tau, xi, w):
    """``dxi/dtau`` of the nonlinear closed loop with ``u = u_from_w(w)``."""
    x = chart.invert(tau, xi)
    u = u_from_w(model, curve, gains, x, w)
    xdot = state_derivative(model, x, u)
    tr, dxi = chart.xi_rates(x, xdot)
    return dxi / tr


@dataclass
class TransverseLinearization:
    tau: np.ndarray
    A: np.ndarray
    B: np.ndarray
    T_tau: float = TWO_PI
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.tau = np.asarray(self.tau, dtype=float)
        self.A = np.asarray(self.A, dtype=float)
        self.B = np.asarray(self.B, dtype=float)
        if not (np.all(np.isfinite(self.A)) and np.all(np.isfinite(self.B))):
            raise ValueError("non-finite linearization entries")
        flat = np.concatenate([self.A.reshape(len(self.tau), 9), self.B], axis=1)
        self._interp = Interpolant.periodic_spline(self.tau, flat)

    @classmethod
    def from_callables(cls, A_fn, B_fn=None, T_tau=TWO_PI, n=512, tau0=0.0):
        tau = tau0 + np.linspace(0.0, T_tau, n + 1)
        A = np.array([np.asarray(A_fn(t), dtype=float).reshape(3, 3) for t in tau])
        if B_fn is None:
            B = np.zeros((n + 1, 3))
        else:
            B = np.array([np.asarray(B_fn(t), dtype=float).reshape(3) for t in tau])
        return cls(tau, A, B, T_tau=T_tau)

    @classmethod
    def constant(cls, A, B=None, T_tau=TWO_PI, n=64):
        A = np.asarray(A, dtype=float)
        B = np.zeros(3) if B is None else np.asarray(B, dtype=float)
        return cls.from_callables(lambda t: A, lambda t: B, T_tau=T_tau, n=n)

    @property
    def tau0(self):
        return float(self.tau[0])

    def AB(self, tau):
        v = self._interp.eval1(tau)
        return v[:9].reshape(3, 3), v[9:]

    def A_at(self, tau):
        return self.AB(tau)[0]

    def B_at(self, tau):
        return self.AB(tau)[1]

    def A_deriv(self, tau):
        return self._interp(tau, 1)[..., :9].reshape(np.shape(tau) + (3, 3))

    def periodicity_error(self):
        return float(max(np.max(np.abs(self.A[-1] - self.A[0])), np.max(np.abs(self.B[-1] - self.B[0]))))


def _central(field_fn, delta, n_cols):
    cols = []
    for j in range(n_cols):
        cols.append((field_fn(j, delta) - field_fn(j, -delta)) / (2.0 * delta))
    return np.column_stack(cols)


def linearize(model, curve, gains, chart, orbit=None, n=512, delta0=1e-5, max_adjust=6,
              accept_tol=1e-7, tau0=0.0):
    """Finite-difference linearization of the transverse dynamics.

    At each grid angle, the columns of ``A`` and ``B`` are central
    differences of ``dxi/dtau`` at ``xi = +-delta e_j`` (and ``w = +-delta``).
    The step is accepted when the results for ``delta`` and ``delta/2``
    agree to ``accept_tol`` (relative). Otherwise a third step ``delta/4``
    decides: if the difference shrank by more than 2.5 the error is
    truncation and the step is halved, else rounding dominates and it is
    doubled.
    """
    taus = tau0 + np.linspace(0.0, TWO_PI, n + 1)
    A = np.empty((n + 1, 3, 3))
    B = np.empty((n + 1, 3))
    deltas = np.empty(n + 1)
    zero = np.zeros(3)

    for i, tau in enumerate(taus):
        def fd(j, d):
            if j < 3:
                xi = zero.copy()
                xi[j] = d
                return transverse_field(model, curve, gains, chart, tau, xi, 0.0)
            return transverse_field(model, curve, gains, chart, tau, zero, d)

        delta = delta0
        for _ in range(max_adjust + 1):
            D1 = _central(fd, delta, 4)
            D2 = _central(fd, 0.5 * delta, 4)
            scale = 1.0 + np.max(np.abs(D2))
            diff = np.max(np.abs(D1 - D2)) / scale
            if diff < accept_tol:
                break
            D4 = _central(fd, 0.25 * delta, 4)
            diff2 = np.max(np.abs(D2 - D4)) / scale
            # truncation error shrinks by 4 per halving; rounding grows by 2
            if diff > 2.5 * diff2:
                delta *= 0.5
            else:
                delta *= 2.0
        else:
            raise StepUnderflow(f"finite-difference step did not settle at tau={tau:.4g}")
        A[i] = D2[:, :3]
        B[i] = D2[:, 3]
        deltas[i] = 0.5 * delta
    meta = {
        "grid_size": n,
        "delta_initial": delta0,
        "delta_min": float(deltas.min()),
        "delta_max": float(deltas.max()),
        "delta_history": deltas.tolist(),
        "T_tau": TWO_PI,
        "tau0": float(tau0),
    }
    lin = TransverseLinearization(taus, A, B, meta=meta)
    lin.meta["periodicity_error"] = lin.periodicity_error()
    return lin
