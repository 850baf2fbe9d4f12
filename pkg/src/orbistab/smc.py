"""Sliding-mode feedback on the transverse linearization.

With ``s = n(tau)^T xi`` the feedback

    w = -sigma(b(tau)) (k1 sign(s) + k2 s),   sigma(b) = b / (|b| + eps)

gives ``ds/dtau = n^T A n s + b w``. The surface ``s = 0`` is the stable
invariant subspace, and ``k2`` has to dominate the period average of
``n^T A n`` weighted by ``b sigma(b)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import IntegrationWarning, cumulative_simpson, quad
from scipy.optimize import brentq

from .errors import DegenerateDenominator, GainTooSmall


def sigmoid(b, eps_sigma):
    if not eps_sigma > 0:
        raise ValueError("eps_sigma must be positive")
    return b / (np.abs(b) + eps_sigma)


def sign0(s):
    """``sign`` with ``sign(0) = 0``."""
    if np.ndim(s) == 0:
        s = float(s)
        return float((s > 0) - (s < 0))
    return np.sign(s)


def switching(s, eps_s=0.0):
    """``sign(s)`` or its boundary-layer version ``s / (|s| + eps_s)``."""
    if eps_s > 0:
        return s / (np.abs(s) + eps_s)
    return sign0(s)


@dataclass(frozen=True)
class SmcGains:
    k1: float = 8.0
    k2: float = 0.5
    eps_sigma: float = 0.05

    def __post_init__(self):
        if not self.k1 >= 0:
            raise ValueError("k1 must be non-negative")
        if not self.k2 > 0:
            raise ValueError("k2 must be positive")
        if not self.eps_sigma > 0:
            raise ValueError("eps_sigma must be positive")


def sliding_variable(sub, tau, xi):
    return float(sub.n_at(tau) @ np.asarray(xi, dtype=float))


def sliding_control(sub, gains: SmcGains, tau, xi, eps_s=0.0):
    n, b, _ = sub.n_b_A(tau)
    s = float(n @ xi)
    if s == 0.0 or b == 0.0:
        return 0.0
    return -(b / (abs(b) + gains.eps_sigma)) * (gains.k1 * switching(s, eps_s) + gains.k2 * s)


def _span(sub):
    tau0 = float(sub.tau[0])
    return tau0, tau0 + sub.T_tau


def _points(sub):
    return [z[0] for z in sub.zeros] or None


def period_integrals(sub, eps_sigma, epsabs=1e-10, epsrel=1e-10, limit=1000):
    """``(int n^T A n, int b sigma(b))`` over one period."""
    a, c = _span(sub)
    pts = _points(sub)

    def bs(t):
        b = sub.b_at(t)
        return b * b / (abs(b) + eps_sigma)
    # the integrands are piecewise polynomials; quad reports rounding once
    # the cancellation in int n^T A n reaches epsabs, which is expected here
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", IntegrationWarning)
        num = quad(sub.nAn_at, a, c, points=pts, epsabs=epsabs, epsrel=epsrel, limit=limit)[0]
        den = quad(bs, a, c, points=pts, epsabs=epsabs, epsrel=epsrel, limit=limit)[0]
    return num, den


def k2_lower_bound(lin, sub, eps_sigma=SmcGains.eps_sigma, return_parts=False):
    """Smallest admissible ``k2``: ``int n^T A n / int b sigma(b)``."""
    num, den = period_integrals(sub, eps_sigma)
    if den < 1e-12:
        raise DegenerateDenominator(f"int b sigma(b) = {den:.3e}")
    if return_parts:
        return num / den, num, den
    return num / den


def contraction_exponent(gains, sub, parts=None):
    """Per-period decay exponent of ``s^2``: ``s^2(tau0 + T) <= s^2(tau0) exp(-2 a)``."""
    if parts is None:
        _, num, den = k2_lower_bound(None, sub, gains.eps_sigma, return_parts=True)
    else:
        num, den = parts
    return gains.k2 * den - num


def _integrand_grid(sub, gains, n_grid):
    a, c = _span(sub)
    tau = np.linspace(a, c, n_grid + 1)
    g = np.empty(n_grid + 1)
    for i, t in enumerate(tau):
        _, b, nan = sub.n_b_A(t)
        g[i] = gains.k2 * b * b / (abs(b) + gains.eps_sigma) - nan
    return tau, g


def _g(sub, gains, t):
    _, b, nan = sub.n_b_A(t)
    return gains.k2 * b * b / (abs(b) + gains.eps_sigma) - nan


def inf_exponent(sub, gains, tau0=None, n_grid=4096):
    """``m = inf I(tau0, tau)`` with ``I = int_tau0^tau (k2 b sigma - n^T A n)``
    over one period. With ``tau0=None`` the worst case over all starts."""
    tau, g = _integrand_grid(sub, gains, n_grid)
    F = cumulative_simpson(g, x=tau, initial=0.0)
    FT = F[-1]
    # two periods of the cumulative integral
    F2 = np.concatenate([F[:-1], F + FT])
    if tau0 is None:
        step = max(1, n_grid // 512)
        starts = range(0, n_grid, step)
    else:
        a = float(sub.tau[0])
        i0 = int(round(((tau0 - a) % sub.T_tau) / sub.T_tau * n_grid)) % n_grid
        starts = [i0]
    best = (0.0, None, None)
    for i in starts:
        w = F2[i:i + n_grid + 1] - F2[i]
        j = int(np.argmin(w))
        if w[j] < best[0]:
            best = (float(w[j]), i, i + j)
    m, i, k = best
    if k is None:
        return 0.0
    # polish the minimizer at the sign change of the integrand
    h = tau[1] - tau[0]
    t_start = tau[0] + i * h
    kk = k % n_grid
    t_lo, t_hi = tau[0] + (k - 1) * h, tau[0] + (k + 1) * h
    f = lambda t: _g(sub, gains, t)
    if kk > 0 and f(t_lo) < 0 < f(t_hi):
        t_star = brentq(f, t_lo, t_hi, xtol=1e-13)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", IntegrationWarning)
            val = quad(f, t_start, t_star, points=_inner_points(sub, t_start, t_star), limit=1000,
                       epsabs=1e-10, epsrel=1e-10)[0]
        m = min(m, val)
    return float(min(m, 0.0))


def _inner_points(sub, a, b):
    pts = []
    for z, _ in sub.zeros:
        for k in range(-1, 3):
            t = z + k * sub.T_tau
            if a < t < b:
                pts.append(t)
    return sorted(pts) or None


def reaching_time_bound(s0, gains, sub, lin=None, tau0=None, n_grid=4096, parts=None):
    """Upper bound on the reaching time in ``tau`` units:
    ``T_tau (1 + ceil(|s0| / (k1 exp(m) d)))`` with ``d = int b sigma(b)``."""
    if parts is None:
        _, _, d = k2_lower_bound(lin, sub, gains.eps_sigma, return_parts=True)
    else:
        d = parts[1]
    if s0 == 0:
        return float(sub.T_tau)
    if gains.k1 == 0:
        return math.inf
    m = inf_exponent(sub, gains, tau0=tau0, n_grid=n_grid)
    return float(sub.T_tau * (1 + math.ceil(abs(s0) / (gains.k1 * math.exp(m) * d))))


@dataclass
class SmcDesign:
    gains: SmcGains
    k2_lower_bound: float
    num: float
    den: float
    m: float
    T_tau: float
    report: dict = field(default_factory=dict)

    def as_dict(self):
        return {
            "k1": self.gains.k1,
            "k2": self.gains.k2,
            "eps_sigma": self.gains.eps_sigma,
            "k2_lower_bound": self.k2_lower_bound,
            "margin": self.gains.k2 - self.k2_lower_bound,
            "m": self.m,
            "d": self.den,
            "T_tau": self.T_tau,
        }


def design_gains(lin, sub, k1=8.0, k2=0.5, eps_sigma=0.05, auto_margin=2.0, tau0=None):
    """Validate or choose ``k2`` against the lower bound.

    ``k2="auto"`` selects ``auto_margin`` times the bound (or ``auto_margin``
    times ``1e-3`` when the bound is not positive).
    """
    bound, num, den = k2_lower_bound(lin, sub, eps_sigma, return_parts=True)
    if k2 == "auto":
        k2 = auto_margin * bound if bound > 0 else auto_margin * 1e-3
    k2 = float(k2)
    if not k2 > bound:
        raise GainTooSmall(f"k2 = {k2:.6g} does not exceed the lower bound {bound:.6g}")
    gains = SmcGains(float(k1), k2, float(eps_sigma))
    m = inf_exponent(sub, gains, tau0=tau0)
    return SmcDesign(gains, float(bound), float(num), float(den), float(m), float(sub.T_tau))
