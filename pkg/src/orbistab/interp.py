"""Piecewise polynomial interpolants with a fast scalar path.

All interpolated quantities in the package (constraint curve, orbit,
chart, A(tau), B(tau), n(tau)) go through :class:`Interpolant` so that the
same polynomial family is used wherever two modules must agree.
"""

from __future__ import annotations

import bisect
import math

import numpy as np
from scipy.interpolate import BPoly, CubicSpline, PPoly, make_interp_spline

from .errors import DomainExceeded


class Interpolant:
    """Piecewise polynomial in one variable, scalar or vector valued.

    Parameters
    ----------
    breaks : (m + 1,) array
        Strictly increasing breakpoints.
    coeffs : (k, m, ncomp) array
        Local power-basis coefficients, highest degree first, as in
        :class:`scipy.interpolate.PPoly`.
    period : float, optional
        If given, arguments are wrapped into ``[breaks[0], breaks[0] + period)``.
    scalar : bool
        Whether a call returns scalars (``ncomp == 1``) or vectors.
    """

    def __init__(self, breaks, coeffs, period=None, scalar=True, extrapolate_tol=1e-12):
        self.breaks = np.asarray(breaks, dtype=float)
        self.coeffs = np.asarray(coeffs, dtype=float)
        if self.coeffs.ndim == 2:
            self.coeffs = self.coeffs[:, :, None]
        self.period = None if period is None else float(period)
        self.scalar = bool(scalar)
        self.x0 = float(self.breaks[0])
        self.x1 = float(self.breaks[-1])
        self._tol = extrapolate_tol * max(1.0, abs(self.x1 - self.x0))
        self._blist = self.breaks.tolist()
        self._nint = len(self._blist) - 1
        k = self.coeffs.shape[0]
        # per-interval coefficient rows for the pure-python Horner path
        self._rows = [self.coeffs[:, i, :].T.tolist() if not self.scalar else
                      self.coeffs[:, i, 0].tolist() for i in range(self._nint)]
        self._vrows = self.coeffs.transpose(1, 0, 2)  # (m, k, ncomp)
        self.order = k

    # construction -----------------------------------------------------
    @classmethod
    def from_ppoly(cls, pp: PPoly, period=None, scalar=True):
        c = np.asarray(pp.c)
        if c.ndim == 2:
            c = c[:, :, None]
        return cls(pp.x, c, period=period, scalar=scalar)

    @classmethod
    def hermite(cls, x, derivs, period=None):
        """Hermite interpolant from node values and derivatives.

        ``derivs`` is a sequence ``[y, y', y'', ...]``; each entry has shape
        ``(n,)`` or ``(n, ncomp)``. With three entries the result is the
        quintic Hermite interpolant.
        """
        x = np.asarray(x, dtype=float)
        arrs = [np.asarray(d, dtype=float) for d in derivs]
        scalar = arrs[0].ndim == 1
        if scalar:
            arrs = [a[:, None] for a in arrs]
        ncomp = arrs[0].shape[1]
        cols = []
        for j in range(ncomp):
            yi = np.stack([a[:, j] for a in arrs], axis=1)
            bp = BPoly.from_derivatives(x, yi)
            pp = PPoly.from_bernstein_basis(bp)
            cols.append(np.asarray(pp.c))
        coeffs = np.stack(cols, axis=-1)
        return cls(x, coeffs, period=period, scalar=scalar)

    @classmethod
    def periodic_spline(cls, x, y):
        """Periodic cubic spline through ``y`` on ``x``; ``y[-1]`` must equal ``y[0]``."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        scalar = y.ndim == 1
        y2 = y.reshape(len(x), -1).copy()
        y2[-1] = y2[0]
        cs = CubicSpline(x, y2, bc_type="periodic", axis=0)
        return cls(cs.x, np.asarray(cs.c), period=x[-1] - x[0], scalar=scalar)

    @classmethod
    def bspline(cls, x, y, k=5):
        """Not-a-knot interpolating spline of odd degree ``k`` (C^(k-1))."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        scalar = y.ndim == 1
        y2 = y.reshape(len(x), -1)
        cols = []
        brk = None
        for j in range(y2.shape[1]):
            pp = PPoly.from_spline(make_interp_spline(x, y2[:, j], k=k))
            keep = np.diff(pp.x) > 0
            brk = np.concatenate([pp.x[:-1][keep], [pp.x[1:][keep][-1]]])
            cols.append(np.asarray(pp.c)[:, keep])
        return cls(brk, np.stack(cols, axis=-1), scalar=scalar)

    @classmethod
    def spline(cls, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        scalar = y.ndim == 1
        cs = CubicSpline(x, y.reshape(len(x), -1), bc_type="not-a-knot", axis=0)
        return cls(cs.x, np.asarray(cs.c), scalar=scalar)

    # evaluation -------------------------------------------------------
    def _wrap(self, x):
        if self.period is not None:
            return self.x0 + (x - self.x0) % self.period
        return x

    def _locate(self, x):
        if self.period is not None:
            x = self.x0 + (x - self.x0) % self.period
        elif x < self.x0 - self._tol or x > self.x1 + self._tol:
            raise DomainExceeded(f"argument {x!r} outside [{self.x0}, {self.x1}]")
        i = bisect.bisect_right(self._blist, x) - 1
        if i < 0:
            i = 0
        elif i >= self._nint:
            i = self._nint - 1
        return i, x - self._blist[i]

    def eval1(self, x):
        """Evaluate at a single float. Returns a float or a 1-D array."""
        i, dx = self._locate(float(x))
        if self.scalar:
            v = 0.0
            for c in self._rows[i]:
                v = v * dx + c
            return v
        rows = self._vrows[i]
        v = rows[0].copy()
        for c in rows[1:]:
            v *= dx
            v += c
        return v

    def eval1_all(self, x):
        """Value and first two derivatives at a single float (scalar-valued only)."""
        i, dx = self._locate(float(x))
        rows = self._rows[i]
        v = d1 = d2 = 0.0
        for c in rows:
            d2 = d2 * dx + 2.0 * d1
            d1 = d1 * dx + v
            v = v * dx + c
        return v, d1, d2

    def __call__(self, x, nu=0):
        x = np.asarray(x, dtype=float)
        xs = np.atleast_1d(x).ravel()
        if self.period is not None:
            xs = self.x0 + (xs - self.x0) % self.period
        else:
            if np.any(xs < self.x0 - self._tol) or np.any(xs > self.x1 + self._tol):
                raise DomainExceeded(
                    f"argument outside [{self.x0}, {self.x1}]: "
                    f"[{xs.min()}, {xs.max()}]")
        idx = np.clip(np.searchsorted(self.breaks, xs, side="right") - 1, 0, self._nint - 1)
        dx = xs - self.breaks[idx]
        c = self.coeffs[:, idx, :]  # (k, n, ncomp)
        k = c.shape[0]
        if nu:
            # differentiate the local power series nu times
            pw = np.arange(k - 1, -1, -1)
            fact = np.ones(k)
            for j in range(nu):
                fact = fact * np.maximum(pw - j, 0)
            c = c[: k - nu] * fact[: k - nu, None, None]
        out = c[0]
        for j in range(1, c.shape[0]):
            out = out * dx[:, None] + c[j]
        if self.scalar:
            out = out[:, 0]
            return float(out[0]) if x.ndim == 0 else out.reshape(x.shape)
        return out[0] if x.ndim == 0 else out.reshape(x.shape + (out.shape[-1],))

    def derivative(self, nu=1):
        k = self.coeffs.shape[0]
        pw = np.arange(k - 1, -1, -1)
        fact = np.ones(k)
        for j in range(nu):
            fact = fact * np.maximum(pw - j, 0)
        c = self.coeffs[: k - nu] * fact[: k - nu, None, None]
        return Interpolant(self.breaks, c, period=self.period, scalar=self.scalar)

    @property
    def domain(self):
        return self.x0, self.x1


def wrap_angle(x):
    """Map to (-pi, pi]."""
    y = math.fmod(x + math.pi, 2.0 * math.pi)
    if y <= 0.0:
        y += 2.0 * math.pi
    return y - math.pi
