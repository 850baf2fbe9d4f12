"""Monodromy matrix, Floquet multipliers and the normal field of the stable subspace.

The unit normal ``n(tau)`` of the stable invariant subspace solves

    dn/dtau = -(I - n n^T) A(tau)^T n

and attracts almost every unit vector when integrated backward in ``tau``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .errors import DefectivePsi, IntegratorFailure, NoConvergence, NoDominance, NonSimpleZero
from .interp import Interpolant


@dataclass
class Monodromy:
    Psi: np.ndarray
    multipliers: np.ndarray
    eigvecs: np.ndarray
    eig_condition: float
    degenerate: bool = False
    warnings: list = field(default_factory=list)

    # the multiplier of the direction along the orbit equals 1 up to
    # integration error; it is classified separately from the stable ones
    unit_tol: float = 1e-3

    @property
    def unit_count(self):
        return int(np.sum(np.abs(np.abs(self.multipliers) - 1.0) <= self.unit_tol))

    @property
    def stable_count(self):
        return int(np.sum(np.abs(self.multipliers) < 1.0 - self.unit_tol))

    def dominance(self):
        m = np.abs(self.multipliers)
        return float(m[2] / max(m[0], m[1], 1e-300))

    def left_eigvec(self, k=2):
        """Real left eigenvector of ``Psi`` for multiplier ``k`` (unit norm)."""
        w, V = np.linalg.eig(self.Psi.T)
        j = int(np.argmin(np.abs(w - self.multipliers[k])))
        v = np.real_if_close(V[:, j], tol=1e6)
        v = np.real(v)
        return v / np.linalg.norm(v)

    def stable_basis(self):
        """Real basis ``(3, 2)`` of the span of the two stable eigenvectors."""
        v0 = self.eigvecs[:, 0]
        if np.iscomplexobj(v0) and np.max(np.abs(v0.imag)) > 1e-12 * np.max(np.abs(v0)):
            E = np.column_stack([v0.real, v0.imag])
        else:
            E = np.real(self.eigvecs[:, :2])
        return E / np.linalg.norm(E, axis=0)


def _matrix_rhs(lin):
    def f(tau, x):
        return (lin.A_at(tau) @ x.reshape(3, -1)).ravel()
    return f


def propagate(lin, X0, taus, rtol=1e-10, atol=1e-16):
    """Solve ``dX/dtau = A X`` from ``taus[0]`` and sample at ``taus``. Returns ``(len, 3, k)``."""
    X0 = np.asarray(X0, dtype=float)
    k = 1 if X0.ndim == 1 else X0.shape[1]
    sol = solve_ivp(_matrix_rhs(lin), (taus[0], taus[-1]), X0.reshape(-1), method="DOP853",
                    t_eval=taus, rtol=rtol, atol=atol * np.max(np.abs(X0)))
    if sol.status != 0:
        raise IntegratorFailure(sol.message)
    return sol.y.T.reshape(len(taus), 3, k)


def monodromy(lin, rtol=1e-10, atol=1e-16, cond_cap=1e10, repeat_tol=1e-8):
    """``Psi = X(T_tau)`` for ``dX/dtau = A X, X(0) = I``."""
    t0 = lin.tau0
    sol = solve_ivp(_matrix_rhs(lin), (t0, t0 + lin.T_tau), np.eye(3).ravel(), method="DOP853",
                    rtol=rtol, atol=atol)
    if sol.status != 0:
        raise IntegratorFailure(sol.message)
    Psi = sol.y[:, -1].reshape(3, 3)
    w, V = np.linalg.eig(Psi)
    order = np.lexsort((np.angle(w), np.abs(w)))
    w, V = w[order], V[:, order]
    V = V / np.linalg.norm(V, axis=0)
    cond = float(np.linalg.cond(V))
    gaps = [abs(w[i] - w[j]) for i in range(3) for j in range(i + 1, 3)]
    degenerate = min(gaps) < repeat_tol * max(1.0, np.max(np.abs(w)))
    warnings = []
    if not np.isfinite(cond) or cond > cond_cap:
        # a repeated multiplier with a full eigenbasis (e.g. Psi = I) is fine
        if not (degenerate and np.allclose(Psi, np.diag(np.diag(Psi)), atol=1e-12)):
            raise DefectivePsi(f"eigenvector matrix condition number {cond:.3e} exceeds {cond_cap:.1e}")
    if np.min(np.abs(w)) < 1e-10:
        warnings.append(f"smallest multiplier {np.min(np.abs(w)):.2e} is below 1e-10; "
                        "its eigenvector is resolved only to integrator accuracy")
    return Monodromy(Psi, w, V, cond, degenerate=bool(degenerate), warnings=warnings)


def normal_rhs(n, A):
    """Right-hand side of the normal-field equation."""
    An = A.T @ n
    return -An + (n @ An) * n


def _normal_rhs_deriv(n, dn, A, dA):
    An = A.T @ n
    return (-dA.T @ n - A.T @ dn + (dn @ An + n @ (dA.T @ n) + n @ (A.T @ dn)) * n
            + (n @ An) * dn)


@dataclass
class StableSubspace:
    tau: np.ndarray
    n: np.ndarray
    b: np.ndarray
    zeros: list
    T_tau: float
    lin: object = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self._n = None

    def _build(self):
        A = np.array([self.lin.A_at(t) for t in self.tau])
        dA = self.lin.A_deriv(self.tau)
        dn = np.array([normal_rhs(n, a) for n, a in zip(self.n, A)])
        ddn = np.array([_normal_rhs_deriv(n, d, a, da) for n, d, a, da in zip(self.n, dn, A, dA)])
        self._n = Interpolant.hermite(self.tau, [self.n, dn, ddn], period=self.T_tau)

    @property
    def normal(self):
        if self._n is None:
            self._build()
        return self._n

    def n_at(self, tau):
        return self.normal.eval1(tau)

    def b_at(self, tau):
        return float(self.n_at(tau) @ self.lin.B_at(tau))

    def nAn_at(self, tau):
        n = self.n_at(tau)
        return float(n @ self.lin.A_at(tau) @ n)

    def n_b_A(self, tau):
        """``(n, b, n^T A n)`` at one angle."""
        n = self.normal.eval1(tau)
        A, B = self.lin.AB(tau)
        return n, float(n @ B), float(n @ A @ n)

    @property
    def max_abs_b(self):
        return float(np.max(np.abs(self.b)))


def stable_normal(lin, mono, tol=1e-9, max_periods=50, substeps=8, seed=0, attempts=5,
                  gap_floor=1.05, zero_margin_rel=1e-3):
    """Backward-integrate the normal-field equation to its periodic attractor.

    Classic RK4 with ``substeps`` steps per grid interval, renormalizing
    after every step; ``n`` is stored at every step point. Iteration stops when ``n`` at the period boundary
    changes by less than ``tol`` between successive periods.
    """
    if mono.dominance() <= gap_floor:
        raise NoDominance(f"multiplier ratio {mono.dominance():.4g} not above {gap_floor}")
    # fine grid: every RK4 step point; n is stored there
    coarse = lin.tau
    fine = np.concatenate([np.linspace(coarse[i], coarse[i + 1], substeps, endpoint=False)
                           for i in range(len(coarse) - 1)] + [coarse[-1:]])
    m = len(fine) - 1
    # A at every RK4 stage point, reused across periods
    stages = []
    for i in range(m, 0, -1):
        a, b_ = fine[i], fine[i - 1]
        h = b_ - a
        stages.append((h, lin.A_at(a), lin.A_at(a + 0.5 * h), lin.A_at(b_)))

    rng = np.random.default_rng(seed)
    for attempt in range(attempts):
        n = rng.standard_normal(3)
        n /= np.linalg.norm(n)
        prev = None
        for period in range(max_periods):
            out = np.empty((m + 1, 3))
            out[m] = n
            for k, (h, A0, Am, A1) in enumerate(stages):
                k1 = normal_rhs(n, A0)
                k2 = normal_rhs(n + 0.5 * h * k1, Am)
                k3 = normal_rhs(n + 0.5 * h * k2, Am)
                k4 = normal_rhs(n + h * k3, A1)
                n = n + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
                n /= np.linalg.norm(n)
                out[m - 1 - k] = n
            if prev is not None and np.max(np.abs(out[0] - prev)) < tol:
                break
            prev = out[0].copy()
        else:
            continue
        mismatch = float(np.max(np.abs(out[0] - prev)))
        # n(T_tau) is the periodic image of n(0)
        out[m] = out[0]
        j = int(np.argmax(np.abs(out[0])))
        if out[0, j] < 0:
            out = -out
        B = np.array([lin.B_at(t) for t in fine])
        bvals = np.einsum("ij,ij->i", out, B)
        sub = StableSubspace(fine, out, bvals, [], lin.T_tau, lin=lin,
                             meta={"periods": period + 1, "attempt": attempt, "substeps": substeps,
                                   "periodicity_mismatch": mismatch})
        sub.zeros = find_zeros(sub, zero_margin=zero_margin_rel * sub.max_abs_b)
        return sub
    raise NoConvergence(f"normal field did not settle within {max_periods} periods "
                        f"in {attempts} attempts")


def find_zeros(sub, tau=None, refine=8, zero_margin=None, period=None):
    """Simple zeros of ``b`` over one period as ``[(tau_z, db/dtau), ...]``.

    ``sub`` is a StableSubspace or a callable ``b(tau)``; for a callable,
    ``tau`` gives the sampling grid over one period (endpoint included).
    """
    if isinstance(sub, StableSubspace):
        fb = sub.b_at
        tau = sub.tau if tau is None else tau
        if zero_margin is None:
            zero_margin = 1e-3 * sub.max_abs_b
    else:
        fb = sub
    tau = np.asarray(tau, dtype=float)
    if refine > 1:
        tau = np.concatenate([np.linspace(tau[i], tau[i + 1], refine, endpoint=False)
                              for i in range(len(tau) - 1)] + [tau[-1:]])
    vals = np.array([fb(t) for t in tau])
    if zero_margin is None:
        zero_margin = 1e-3 * float(np.max(np.abs(vals)))
    h = 1e-6 * (tau[-1] - tau[0])
    zeros = []
    for i in range(len(tau) - 1):
        if vals[i] == 0.0:
            tz = tau[i]
        elif vals[i] * vals[i + 1] < 0.0:
            tz = brentq(fb, tau[i], tau[i + 1], xtol=1e-14, rtol=4 * np.finfo(float).eps)
        else:
            continue
        slope = (fb(tz + h) - fb(tz - h)) / (2 * h)
        if abs(slope) <= zero_margin:
            raise NonSimpleZero(f"zero of b at tau={tz:.6g} has slope {slope:.3e} "
                                f"(margin {zero_margin:.3e})")
        zeros.append((float(tz), float(slope)))
    return zeros


def verify_subspace(lin, mono, sub, n_check=None):
    """Diagnostics: orthogonality of ``n`` to the propagated stable
    eigenvectors and the residual of the normal-field equation."""
    taus = sub.tau
    # the stable span at T_tau equals the one at 0; integrating backward
    # makes the stable modes dominant, so they are resolved accurately
    E0 = mono.stable_basis()
    E = propagate(lin, E0, taus[::-1])[::-1]
    orth = 0.0
    for i, t in enumerate(taus):
        for k in range(E.shape[2]):
            e = E[i, :, k]
            orth = max(orth, abs(sub.n[i] @ e) / np.linalg.norm(e))
    mids = 0.5 * (taus[:-1] + taus[1:]) if n_check is None else np.asarray(n_check)
    dn = sub.normal(mids, 1)
    res = 0.0
    for t, d in zip(mids, dn):
        res = max(res, float(np.max(np.abs(d - normal_rhs(sub.n_at(t), lin.A_at(t))))))
    norms = np.linalg.norm(sub.n, axis=1)
    left = mono.left_eigvec(2)
    align = abs(float(left @ sub.n[0]))
    return {
        "orthogonality": float(orth),
        "ode_residual": float(res),
        "norm_error": float(np.max(np.abs(norms - 1.0))),
        # n(T_tau) from the last backward pass is the start of that pass
        "periodicity": sub.meta.get("periodicity_mismatch"),
        "left_eigvec_alignment": align,
    }


class FunctionSubspace:
    """Stable-subspace stand-in from closed-form ``n(tau)``, ``A(tau)``, ``B(tau)``.

    Exposes the same evaluation interface as :class:`StableSubspace` so the
    sliding-mode routines can be checked against analytic cases.
    """

    def __init__(self, n_fn, A_fn, B_fn, T_tau=2 * np.pi, tau0=0.0, n_grid=2048, zero_margin=None):
        self.n_fn, self.A_fn, self.B_fn = n_fn, A_fn, B_fn
        self.T_tau = float(T_tau)
        self.tau = tau0 + np.linspace(0.0, T_tau, n_grid + 1)
        self.b = np.array([self.b_at(t) for t in self.tau])
        self.zeros = find_zeros(self.b_at, self.tau, refine=1, zero_margin=zero_margin)

    def n_at(self, tau):
        return np.asarray(self.n_fn(tau), dtype=float)

    def b_at(self, tau):
        return float(self.n_at(tau) @ np.asarray(self.B_fn(tau), dtype=float))

    def nAn_at(self, tau):
        n = self.n_at(tau)
        return float(n @ np.asarray(self.A_fn(tau), dtype=float) @ n)

    def n_b_A(self, tau):
        return self.n_at(tau), self.b_at(tau), self.nAn_at(tau)

    @property
    def max_abs_b(self):
        return float(np.max(np.abs(self.b)))
