"""Partial feedback linearization of the constraint output ``h = theta - Theta(phi)``.

With ``y = (h, Lh)`` the new input ``w = hdd + nu1 h + nu2 hd`` turns the
output dynamics into ``ydot = [[0, 1], [-nu1, -nu2]] y + [0, 1] w``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import solve2, split_state, state_derivative
from .errors import RegularityLost

DEFAULT_REG_FLOOR = 1e-8


@dataclass(frozen=True)
class PflGains:
    nu1: float = 15.0
    nu2: float = 6.0

    def __post_init__(self):
        if not (self.nu1 > 0 and self.nu2 > 0):
            raise ValueError("nu1 and nu2 must be positive")

    @property
    def matrix(self):
        return np.array([[0.0, 1.0], [-self.nu1, -self.nu2]])


def lie_derivatives(curve, state):
    """``(h, Lh, L2h, dh)`` for ``h = theta - Theta(phi)``.

    ``L2h`` is the part of ``hdd`` that does not involve ``qdd``.
    """
    q, qd = split_state(state)
    th, t1, t2 = curve.eval1(q[1])
    h = q[0] - th
    lh = qd[0] - t1 * qd[1]
    l2h = -t2 * qd[1] * qd[1]
    return h, lh, l2h, np.array([1.0, -t1])


def output(curve, state):
    h, lh, _, _ = lie_derivatives(curve, state)
    return np.array([h, lh])


def _drift_and_gain(model, curve, state):
    """``(h, Lh, L2h, a, g)`` with ``hdd = a + g u + L2h``."""
    q, qd = split_state(state)
    th, t1, t2 = curve.eval1(q[1])
    h = q[0] - th
    lh = qd[0] - t1 * qd[1]
    l2h = -t2 * qd[1] * qd[1]
    m11, m12, m22, c1, c2, g1, g2 = model.terms(q, qd)
    cap = model.cond_cap
    a1, a2 = solve2(m11, m12, m22, -c1 - g1, -c2 - g2, cap)
    F = model.input(q)
    f1, f2 = solve2(m11, m12, m22, F[0], F[1], cap)
    return h, lh, l2h, a1 - t1 * a2, f1 - t1 * f2


def regularity(model, curve, state):
    """The scalar ``dh M^-1 F`` that the inverse transform divides by."""
    return _drift_and_gain(model, curve, state)[4]


def w_from_u(model, curve, gains: PflGains, state, u):
    h, lh, l2h, a, g = _drift_and_gain(model, curve, state)
    return a + g * u + l2h + gains.nu1 * h + gains.nu2 * lh


def u_from_w(model, curve, gains: PflGains, state, w, reg_floor=DEFAULT_REG_FLOOR):
    h, lh, l2h, a, g = _drift_and_gain(model, curve, state)
    if abs(g) < reg_floor:
        raise RegularityLost(f"|dh M^-1 F| = {abs(g):.3e} below {reg_floor:.1e}")
    return (w - l2h - gains.nu1 * h - gains.nu2 * lh - a) / g


def nominal_torque(model, curve, gains, orbit, t=None):
    """Torque keeping the system on the reference, ``u_from_w(w=0)`` along the orbit."""
    t = orbit.t if t is None else np.asarray(t, dtype=float)
    x = orbit.state_at(t)
    return np.array([u_from_w(model, curve, gains, xi, 0.0) for xi in x])


def regularity_profile(model, curve, orbit, t=None):
    t = orbit.t if t is None else np.asarray(t, dtype=float)
    return np.array([regularity(model, curve, xi) for xi in orbit.state_at(t)])


def certify_p(gains: PflGains):
    """Solve ``A^T P + P A = -I`` in closed form; return ``(P, alpha)``.

    ``alpha = 1 / lambda_max(P)`` is the decay rate certified for
    ``V_y = y^T P y``.
    """
    a, b = gains.nu1, gains.nu2
    p12 = 1.0 / (2.0 * a)
    p22 = (1.0 + a) / (2.0 * a * b)
    p11 = a * p22 + b * p12
    P = np.array([[p11, p12], [p12, p22]])
    lmax = float(np.linalg.eigvalsh(P)[-1])
    return P, 1.0 / lmax


def vy(y, P):
    y = np.asarray(y, dtype=float)
    return float(y @ P @ y)


def closed_loop_rhs(model, curve, gains, w_fn=None):
    """State derivative with ``u = u_from_w(w_fn(t, x))`` (``w = 0`` by default)."""
    def f(t, x):
        w = 0.0 if w_fn is None else w_fn(t, x)
        u = u_from_w(model, curve, gains, x, w)
        return state_derivative(model, x, u)
    return f


def decay_envelope(vy0, alpha, t):
    return vy0 * np.exp(-alpha * np.asarray(t, dtype=float))
