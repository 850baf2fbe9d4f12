"""Closed-loop simulation of the transverse LTV system and the full nonlinear system.

The nonlinear loop measures the chart coordinates, evaluates ``w`` from the
sliding-mode law and maps it to ``u`` through the inverse linearizing
transform. By default this happens at every RK4 stage (``hold="stage"``);
``hold="zoh"`` instead holds ``u`` over each step like a sampled controller.
The matched disturbance is added to ``u``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import minimize_scalar
from scipy.spatial import cKDTree

from .dynamics import MechanicalModel, accel, solve2
from .errors import (ConfigConflict, ConfigError, DomainExceeded, NonfiniteState, OutsideTube,
                     RegularityLost, TubeExit)
from .pfl import certify_p
from .smc import switching
from .transverse import HALF_PI


@dataclass(frozen=True)
class Disturbance:
    """Matched disturbance ``d(t) = amplitude sin(omega t + phase)`` added to ``u``."""
    amplitude: float = 0.0
    omega: float = 2.0 * math.pi
    phase: float = 0.0

    def __call__(self, t):
        return self.amplitude * math.sin(self.omega * t + self.phase)


@dataclass
class SimConfig:
    integrator: str = "rk4"
    step: float | None = None
    rtol: float = 1e-8
    atol: float = 1e-10
    periods: float = 5.0
    horizon: float | None = None
    eps_s: float = 0.0
    disturbance: object = None
    seed: int = 0
    control: str = "feedback"
    record_every: int = 1
    reach_tol: float = 1e-6
    state_cap: float = 1e6
    tube_grace: float = 0.1
    reg_floor: float = 1e-8
    hold: str = "stage"

    def __post_init__(self):
        if self.integrator not in ("rk4", "adaptive"):
            raise ConfigError(f"unknown integrator {self.integrator!r}")
        if self.step is not None and not self.step > 0:
            raise ConfigError("step must be positive")
        if not (self.rtol > 0 and self.atol > 0):
            raise ConfigError("tolerances must be positive")
        if self.eps_s < 0:
            raise ConfigError("eps_s must be non-negative")
        if self.integrator == "adaptive" and self.eps_s == 0:
            raise ConfigConflict("adaptive integration needs a boundary layer (eps_s > 0)")
        if self.control not in ("feedback", "zero"):
            raise ConfigError(f"unknown control mode {self.control!r}")
        if self.horizon is not None and not (self.horizon > 0 and math.isfinite(self.horizon)):
            raise ConfigError("horizon must be positive and finite")
        if not self.periods > 0:
            raise ConfigError("periods must be positive")
        if self.hold not in ("stage", "zoh"):
            raise ConfigError(f"unknown control hold {self.hold!r}")
        if self.record_every < 1:
            raise ConfigError("record_every must be at least 1")


@dataclass
class SimTrace:
    t: np.ndarray
    tau: np.ndarray
    xi: np.ndarray
    s: np.ndarray
    b: np.ndarray
    w: np.ndarray
    u: np.ndarray | None = None
    x: np.ndarray | None = None
    metrics: dict = field(default_factory=dict)
    metrics_series: dict = field(default_factory=dict)

    def columns(self):
        cols = {"t": self.t, "tau": self.tau, "xi1": self.xi[:, 0], "xi2": self.xi[:, 1],
                "xi3": self.xi[:, 2], "s": self.s, "b": self.b, "w": self.w}
        if self.u is not None:
            cols["u"] = self.u
        if self.x is not None:
            for k, name in enumerate(("theta", "phi", "dtheta", "dphi")):
                cols[name] = self.x[:, k]
        if "orbital_dist" in self.metrics_series:
            cols["orbital_dist"] = self.metrics_series["orbital_dist"]
        if "V_y" in self.metrics_series:
            cols["V_y"] = self.metrics_series["V_y"]
        return cols


# ---------------------------------------------------------------------------
# LTV level

def _ltv_tables(lin, sub, h, N):
    """A, B, n, b at the RK4 nodes ``tau0 + j h / 2`` for one period."""
    taus = lin.tau0 + 0.5 * h * np.arange(2 * N + 1)
    A = np.empty((2 * N + 1, 3, 3))
    B = np.empty((2 * N + 1, 3))
    n = np.empty((2 * N + 1, 3))
    for j, t in enumerate(taus):
        A[j], B[j] = lin.AB(t)
        n[j] = sub.n_at(t)
    b = np.einsum("ij,ij->i", n, B)
    return taus, A, B, n, b


@dataclass
class LtvBatch:
    tau: np.ndarray
    xi: np.ndarray          # (samples, runs, 3)
    s: np.ndarray           # (samples, runs)
    w: np.ndarray
    b: np.ndarray           # (samples,)
    reaching_time: np.ndarray
    period_s: np.ndarray    # s at tau0 + k T, (periods + 1, runs)
    final_xi: np.ndarray
    meta: dict = field(default_factory=dict)

    def trace(self, i):
        r = self.reaching_time[i]
        s_per = self.period_s[:, i]
        m = {
            "reaching_time": None if not np.isfinite(r) else float(r),
            "final_norm": float(np.linalg.norm(self.final_xi[i])),
            "contraction_per_period": _period_ratios(s_per, self.meta["T_tau"], r, self.meta["tau0"]),
        }
        return SimTrace(self.tau - self.tau[0], self.tau, self.xi[:, i], self.s[:, i], self.b,
                        self.w[:, i], metrics=m)


def _period_ratios(s_per, T, reach, tau0):
    out = []
    for k in range(len(s_per) - 1):
        end = tau0 + (k + 1) * T
        if np.isfinite(reach) and end > reach:
            break
        if s_per[k] != 0:
            out.append(float(s_per[k + 1] ** 2 / s_per[k] ** 2))
    return out


def simulate_ltv_batch(lin, sub, gains, xi0s, config: SimConfig = SimConfig(), w_input=None,
                       steps_per_period=4096):
    """Fixed-step RK4 of ``dxi/dtau = A xi + B w`` for a batch of initial states.

    ``w_input(tau)`` overrides the feedback with an open-loop input (scalar
    or one value per run).
    """
    if config.integrator != "rk4":
        return _ltv_adaptive_batch(lin, sub, gains, xi0s, config, w_input)
    X = np.array(xi0s, dtype=float).reshape(-1, 3)
    T = lin.T_tau
    N = steps_per_period if config.step is None else max(1, int(round(T / config.step)))
    h = T / N
    horizon = config.periods * T if config.horizon is None else config.horizon
    K = int(round(horizon / h))
    taus, At, Bt, nt, bt = _ltv_tables(lin, sub, h, N)
    sig = bt / (np.abs(bt) + gains.eps_sigma)
    k1, k2, eps_s = gains.k1, gains.k2, config.eps_s
    feedback = config.control == "feedback" and w_input is None

    def rhs(Xs, j, tau):
        A, B, n = At[j], Bt[j], nt[j]
        s = Xs @ n
        if w_input is not None:
            w = np.broadcast_to(np.asarray(w_input(tau), dtype=float), s.shape)
        elif feedback:
            w = -sig[j] * (k1 * switching(s, eps_s) + k2 * s)
        else:
            w = np.zeros_like(s)
        return Xs @ A.T + w[:, None] * B, s, w

    rec = config.record_every
    n_rec = K // rec + 1
    R = X.shape[0]
    xi_rec = np.empty((n_rec, R, 3))
    s_rec = np.empty((n_rec, R))
    w_rec = np.empty((n_rec, R))
    b_rec = np.empty(n_rec)
    tau_rec = np.empty(n_rec)
    reach = np.full(R, np.inf)
    n_periods = int(K // N)
    period_s = np.empty((n_periods + 1, R))
    tol = config.reach_tol
    s_prev = X @ nt[0]
    reach[np.abs(s_prev) <= tol] = lin.tau0
    period_s[0] = s_prev
    for k in range(K):
        j = 2 * (k % N)
        tau = lin.tau0 + k * h
        k1_, s, w = rhs(X, j, tau)
        if k % rec == 0:
            r = k // rec
            xi_rec[r], s_rec[r], w_rec[r], b_rec[r], tau_rec[r] = X, s, w, bt[j], tau
        k2_ = rhs(X + 0.5 * h * k1_, j + 1, tau + 0.5 * h)[0]
        k3_ = rhs(X + 0.5 * h * k2_, j + 1, tau + 0.5 * h)[0]
        k4_ = rhs(X + h * k3_, j + 2, tau + h)[0]
        X = X + (h / 6.0) * (k1_ + 2.0 * k2_ + 2.0 * k3_ + k4_)
        s_new = X @ nt[j + 2]
        fresh = ~np.isfinite(reach)
        if fresh.any():
            hit = fresh & ((np.abs(s_new) <= tol) | (np.sign(s_new) != np.sign(s_prev)))
            if hit.any():
                # locate the crossing of |s| = tol by linear interpolation within the step
                a0, a1 = np.abs(s_prev[hit]), np.abs(s_new[hit])
                cross = np.sign(s_new[hit]) != np.sign(s_prev[hit])
                frac = np.where(cross, a0 / np.maximum(a0 + a1, 1e-300),
                                (a0 - tol) / np.maximum(a0 - a1, 1e-300))
                reach[hit] = tau + h * np.clip(frac, 0.0, 1.0)
        s_prev = s_new
        if (k + 1) % N == 0 and (k + 1) // N <= n_periods:
            period_s[(k + 1) // N] = s_new
        if not np.all(np.isfinite(X)) or np.max(np.abs(X)) > config.state_cap:
            raise NonfiniteState(f"LTV state left the cap at tau={tau + h:.4g}")
    if K % rec == 0:
        j = 2 * (K % N)
        r = K // rec
        s = X @ nt[j]
        xi_rec[r], s_rec[r], b_rec[r], tau_rec[r] = X, s, bt[j], lin.tau0 + K * h
        w_rec[r] = rhs(X, j, lin.tau0 + K * h)[2]
    meta = {"T_tau": T, "tau0": lin.tau0, "step": h, "steps": K, "eps_s": eps_s,
            "integrator": "rk4", "control": "open-loop" if w_input is not None else config.control}
    return LtvBatch(tau_rec, xi_rec, s_rec, w_rec, b_rec, reach, period_s, X, meta=meta)


def _ltv_adaptive_batch(lin, sub, gains, xi0s, config, w_input):
    X0 = np.array(xi0s, dtype=float).reshape(-1, 3)
    T = lin.T_tau
    horizon = config.periods * T if config.horizon is None else config.horizon
    N = 4096 if config.step is None else max(1, int(round(T / config.step)))
    t_eval = lin.tau0 + np.linspace(0.0, horizon, int(round(horizon / T * N)) + 1)
    feedback = config.control == "feedback" and w_input is None
    xs, ss, ws = [], [], []
    reach = np.full(len(X0), np.inf)
    period_s = []
    for i, x0 in enumerate(X0):
        def f(tau, x):
            A, B = lin.AB(tau)
            n, b, _ = sub.n_b_A(tau)
            s = n @ x
            if w_input is not None:
                w = float(np.asarray(w_input(tau)).reshape(-1)[0])
            elif feedback:
                w = -(b / (abs(b) + gains.eps_sigma)) * (gains.k1 * switching(s, config.eps_s) + gains.k2 * s)
            else:
                w = 0.0
            return A @ x + w * B
        sol = solve_ivp(f, (t_eval[0], t_eval[-1]), x0, method="RK45", t_eval=t_eval,
                        rtol=config.rtol, atol=config.atol)
        Xi = sol.y.T
        s = np.array([sub.n_at(t) @ x for t, x in zip(t_eval, Xi)])
        w = np.array([(f(t, x) - lin.A_at(t) @ x) @ lin.B_at(t) / max(lin.B_at(t) @ lin.B_at(t), 1e-300)
                      for t, x in zip(t_eval, Xi)])
        below = np.nonzero((np.abs(s) <= config.reach_tol) | (np.sign(s) != np.sign(s[0])))[0]
        if len(below):
            reach[i] = t_eval[below[0]]
        xs.append(Xi)
        ss.append(s)
        ws.append(w)
        period_s.append(s[::N][: int(horizon // T) + 1])
    b = np.array([sub.b_at(t) for t in t_eval])
    xi = np.stack(xs, axis=1)
    meta = {"T_tau": T, "tau0": lin.tau0, "integrator": "adaptive", "eps_s": config.eps_s,
            "control": "open-loop" if w_input is not None else config.control}
    return LtvBatch(t_eval, xi, np.stack(ss, axis=1), np.stack(ws, axis=1), b, reach,
                    np.stack(period_s, axis=1), xi[-1], meta=meta)


def simulate_ltv(lin, sub, gains, xi0, config: SimConfig = SimConfig(), w_input=None):
    return simulate_ltv_batch(lin, sub, gains, [xi0], config, w_input=w_input).trace(0)


# ---------------------------------------------------------------------------
# orbital distance

class OrbitDistance:
    """Distance from states to the orbit as a set.

    A KD-tree over ``n_samples`` orbit points gives the nearest sample;
    the estimate is then refined either on the two adjacent chords
    (``refine="segment"``, vectorized) or by bounded scalar minimization over
    the orbit interpolant (``refine="exact"``).
    """

    def __init__(self, orbit, weights=None, n_samples=20000):
        self.orbit = orbit
        self.w = np.ones(4) if weights is None else np.asarray(weights, dtype=float)
        self.sw = np.sqrt(self.w)
        self.t = np.linspace(0.0, orbit.T, n_samples, endpoint=False)
        self.pts = orbit.state_at(self.t) * self.sw
        self.tree = cKDTree(self.pts)
        self.n = n_samples

    def query(self, X, refine="segment"):
        X = np.atleast_2d(np.asarray(X, dtype=float)) * self.sw
        d, idx = self.tree.query(X)
        if refine == "segment":
            best = d.copy()
            for off in (-1, 0):
                a = self.pts[(idx + off) % self.n]
                b = self.pts[(idx + off + 1) % self.n]
                ab = b - a
                lam = np.clip(np.einsum("ij,ij->i", X - a, ab) / np.einsum("ij,ij->i", ab, ab), 0.0, 1.0)
                dd = np.linalg.norm(X - (a + lam[:, None] * ab), axis=1)
                best = np.minimum(best, dd)
            return best
        out = np.empty(len(X))
        dt = self.orbit.T / self.n
        for k, (x, i) in enumerate(zip(X, idx)):
            t0 = self.t[i]
            f = lambda t: float(np.sum((self.orbit.state_at(t) * self.sw - x) ** 2))
            r = minimize_scalar(f, bounds=(t0 - 2 * dt, t0 + 2 * dt), method="bounded",
                                options={"xatol": 1e-12})
            out[k] = math.sqrt(min(r.fun, d[k] ** 2))
        return out

    def __call__(self, x):
        return float(self.query(x, refine="exact")[0])


def orbital_distance(orbit, x, weights=None):
    return OrbitDistance(orbit, weights)(x)


# ---------------------------------------------------------------------------
# nonlinear level

def _rk4(f, t, x, dt, k1, uh=None):
    """One RK4 step from the first stage ``k1``; ``uh`` holds the control over the step."""
    y = [x[i] + 0.5 * dt * k1[i] for i in range(4)]
    k2 = f(t + 0.5 * dt, y, uh)
    y = [x[i] + 0.5 * dt * k2[i] for i in range(4)]
    k3 = f(t + 0.5 * dt, y, uh)
    y = [x[i] + dt * k3[i] for i in range(4)]
    k4 = f(t + dt, y, uh)
    return [x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) for i in range(4)]


def simulate_nonlinear(model, curve, gains_pfl, chart, sub, gains_smc, x0, config: SimConfig = SimConfig(),
                       distance=None):
    """Full closed loop ``u = u(q, qd, w) + d(t)`` with ``w`` from the sliding-mode law."""
    orbit = chart.orbit
    dt = 1e-3 if config.step is None else config.step
    horizon = config.periods * orbit.T if config.horizon is None else config.horizon
    n_steps = int(round(horizon / dt))
    if config.integrator != "rk4":
        raise ConfigConflict("the nonlinear loop uses fixed-step RK4; use integrator='rk4'")
    dist = OrbitDistance(orbit) if distance is None else distance
    P, alpha = certify_p(gains_pfl)
    dist_fn = config.disturbance
    feedback = config.control == "feedback"
    k1, k2, eps_sig, eps_s = gains_smc.k1, gains_smc.k2, gains_smc.eps_sigma, config.eps_s
    nu1, nu2 = gains_pfl.nu1, gains_pfl.nu2
    grace = config.tube_grace * orbit.T
    rec = config.record_every
    n_rec = n_steps // rec + 1

    t_rec = np.empty(n_rec)
    x_rec = np.empty((n_rec, 4))
    tau_rec = np.empty(n_rec)
    xi_rec = np.empty((n_rec, 3))
    s_rec = np.empty(n_rec)
    b_rec = np.empty(n_rec)
    w_rec = np.empty(n_rec)
    u_rec = np.empty(n_rec)

    cap = model.cond_cap
    fixed_input = type(model).input is MechanicalModel.input
    rho = chart._rho
    normal = sub.normal
    lin = sub.lin

    def law(t, y):
        """Control and open-loop accelerations at one state, sharing the model terms."""
        th, phi, dth, dphi = y
        try:
            c0, c1, c2 = curve.eval1(phi)
        except DomainExceeded as exc:
            raise TubeExit(f"state left the chart domain at t={t:.4g}: {exc}") from None
        tau = math.atan2(-dphi, phi - HALF_PI)
        r = rho.eval1(tau)
        ct, st = math.cos(tau), math.sin(tau)
        h = th - c0
        lh = dth - c1 * dphi
        xi3 = (phi - HALF_PI - r * ct) * ct - (dphi + r * st) * st
        n = normal.eval1(tau)
        B = lin.B_at(tau)
        b = float(n[0] * B[0] + n[1] * B[1] + n[2] * B[2])
        s = float(n[0] * h + n[1] * lh + n[2] * xi3)
        if feedback and s != 0.0 and b != 0.0:
            w = -(b / (abs(b) + eps_sig)) * (k1 * switching(s, eps_s) + k2 * s)
        else:
            w = 0.0
        m11, m12, m22, h1, h2, g1, g2 = model.terms(y[:2], y[2:])
        a1, a2 = solve2(m11, m12, m22, -h1 - g1, -h2 - g2, cap)
        F = (1.0, 0.0) if fixed_input else model.input(y[:2])
        f1, f2 = solve2(m11, m12, m22, F[0], F[1], cap)
        g = f1 - c1 * f2
        if abs(g) < config.reg_floor:
            raise RegularityLost(f"|dh M^-1 F| = {abs(g):.3e} at t={t:.4g}")
        u = (w + c2 * dphi * dphi - nu1 * h - nu2 * lh - (a1 - c1 * a2)) / g
        return u, tau, (h, lh, xi3), s, b, w, (a1, a2, f1, f2)

    def f(t, y, u=None):
        if u is None:
            u, *_, (a1, a2, f1, f2) = law(t, y)
            ut = u + dist_fn(t) if dist_fn is not None else u
            return (y[2], y[3], a1 + f1 * ut, a2 + f2 * ut)
        if dist_fn is not None:
            u += dist_fn(t)
        a1, a2 = accel(model, y, u)
        return (y[2], y[3], a1, a2)

    x = [float(v) for v in np.asarray(x0, dtype=float).reshape(4)]
    out_since = None
    exits = 0
    max_out = 0.0
    reach_t = None
    s_prev = None
    tol = config.reach_tol
    hold = config.hold == "zoh"
    for k in range(n_steps + 1):
        t = k * dt
        u, tau, xi, s, b, w, (a1, a2, f1, f2) = law(t, x)
        if not chart.in_tube(xi):
            if out_since is None:
                out_since = t
                exits += 1
            max_out = max(max_out, t - out_since)
            if t - out_since > grace:
                raise TubeExit(f"outside the tube for more than {grace:.3g} s (since t={out_since:.4g})")
        else:
            out_since = None
        if reach_t is None and s_prev is not None and (abs(s) <= tol or (s > 0) != (s_prev > 0)):
            reach_t = t
        s_prev = s
        if k % rec == 0:
            r = k // rec
            t_rec[r] = t
            x_rec[r] = x
            tau_rec[r] = tau
            xi_rec[r] = xi
            s_rec[r], b_rec[r], w_rec[r] = s, b, w
            u_rec[r] = u + (dist_fn(t) if dist_fn is not None else 0.0)
        if k == n_steps:
            break
        ut = u + dist_fn(t) if dist_fn is not None else u
        x = _rk4(f, t, x, dt, (x[2], x[3], a1 + f1 * ut, a2 + f2 * ut), u if hold else None)
        if not all(math.isfinite(v) for v in x) or max(abs(v) for v in x) > config.state_cap:
            raise NonfiniteState(f"state left the cap at t={t + dt:.4g}")

    tau_u = np.unwrap(tau_rec)
    od = dist.query(x_rec)
    vy = np.einsum("ij,jk,ik->i", xi_rec[:, :2], P, xi_rec[:, :2])
    per = _per_period(t_rec, od, orbit.T)
    metrics = {
        "reaching_time": reach_t,
        "orbital_dist_initial": float(od[0]),
        "orbital_dist_final": float(od[-1]),
        "orbital_dist_max": float(od.max()),
        "period_max_dist": per,
        "V_y_initial": float(vy[0]),
        "V_y_final": float(vy[-1]),
        "certified_alpha": float(alpha),
        "tube_exits": exits,
        "max_time_outside_tube": float(max_out),
        "max_abs_u": float(np.max(np.abs(u_rec))),
        "max_state_norm": float(np.max(np.linalg.norm(x_rec, axis=1))),
    }
    tr = SimTrace(t_rec, tau_u, xi_rec, s_rec, b_rec, w_rec, u=u_rec, x=x_rec, metrics=metrics)
    tr.metrics_series = {"orbital_dist": od, "V_y": vy}
    return tr


def _per_period(t, values, T):
    out = []
    k = 0
    while True:
        m = (t >= k * T) & (t < (k + 1) * T)
        if not m.any():
            break
        out.append(float(values[m].max()))
        k += 1
    return out


def b_zero_mask(b, max_abs_b, frac=0.05):
    """Samples inside the windows ``|b| < frac * max|b|``."""
    return np.abs(b) < frac * max_abs_b


def random_tube_start(chart, rng, radius=0.1, tau=None):
    """State at chart angle ``tau`` (random by default) with a transverse offset
    of norm ``radius`` in a uniformly random direction."""
    tau = rng.uniform(-math.pi, math.pi) if tau is None else tau
    v = rng.normal(size=3)
    xi = radius * v / np.linalg.norm(v)
    if abs(xi[2]) >= chart.tube_radius:
        raise OutsideTube("requested offset exceeds the tube radius")
    return chart.invert(tau, xi)


def random_ball(rng, n, radius):
    """``n`` points uniformly distributed in the 3-ball of the given radius."""
    v = rng.normal(size=(n, 3))
    v /= np.linalg.norm(v, axis=1)[:, None]
    return v * (radius * rng.uniform(size=n) ** (1.0 / 3.0))[:, None]
