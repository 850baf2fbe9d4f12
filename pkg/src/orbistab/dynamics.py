"""Euler-Lagrange dynamics of two degree-of-freedom systems with one input.

The equations of motion are ``M(q) qdd + C(q, qd) qd + G(q) = F(q) u`` with
``q = (theta, phi)``: ``theta`` is the actuated coordinate and ``phi`` the
passive one. Models are bundles of closed-form evaluators.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, SingularMass, UnknownModel

DEFAULT_COND_CAP = 1e12


@dataclass(frozen=True)
class GeneralizedState:
    q: np.ndarray
    qdot: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "q", np.asarray(self.q, dtype=float).reshape(2))
        object.__setattr__(self, "qdot", np.asarray(self.qdot, dtype=float).reshape(2))

    def as_array(self):
        return np.concatenate([self.q, self.qdot])

    @classmethod
    def from_array(cls, x):
        x = np.asarray(x, dtype=float)
        return cls(x[:2], x[2:4])


def split_state(state):
    """Return ``(q, qdot)`` arrays from a GeneralizedState or a length-4 array."""
    if isinstance(state, GeneralizedState):
        return state.q, state.qdot
    x = np.asarray(state, dtype=float)
    return x[:2], x[2:4]


def christoffel_coriolis(dM, qdot):
    """Coriolis matrix from the mass-matrix Jacobian ``dM[i, j, k] = dM_ij / dq_k``."""
    return _christoffel(dM) @ np.asarray(qdot, dtype=float)


def _christoffel(dM):
    g = np.empty((2, 2, 2))
    for i in range(2):
        for j in range(2):
            for k in range(2):
                g[i, j, k] = 0.5 * (dM[i, j, k] + dM[i, k, j] - dM[j, k, i])
    return g


class MechanicalModel:
    """Base class for models; subclasses implement the evaluators.

    Subclasses provide ``mass``, ``mass_derivative`` (or override
    ``coriolis``), ``gravity`` and optionally ``potential``. The input
    vector defaults to ``F = [1, 0]`` with left annihilator ``[0, 1]``.
    """

    name = "model"
    cond_cap = DEFAULT_COND_CAP
    conservative = True

    def __init__(self, **params):
        self.params = dict(params)

    def mass(self, q):
        raise NotImplementedError

    def mass_derivative(self, q):
        raise NotImplementedError

    def coriolis(self, q, qdot):
        return christoffel_coriolis(self.mass_derivative(q), qdot)

    def gravity(self, q):
        raise NotImplementedError

    def terms(self, q, qdot):
        """``(m11, m12, m22, h1, h2, g1, g2)`` with ``h = C(q, qd) qd`` as floats."""
        M = self.mass(q)
        h = self.coriolis(q, qdot) @ np.asarray(qdot, dtype=float)
        G = self.gravity(q)
        return (float(M[0, 0]), float(M[0, 1]), float(M[1, 1]), float(h[0]), float(h[1]),
                float(G[0]), float(G[1]))

    def input(self, q):
        return np.array([1.0, 0.0])

    def left_annihilator(self, q):
        return np.array([0.0, 1.0])

    def potential(self, q):
        raise NotImplementedError

    def energy(self, state):
        q, qd = split_state(state)
        return 0.5 * qd @ self.mass(q) @ qd + self.potential(q)

    def describe(self):
        return {"model": self.name, "params": dict(self.params)}


def _phi_only_coriolis(dm11, dm12, dm22, dth, dphi):
    """``C(q, qd) qd`` when the mass matrix depends on ``phi`` only."""
    h1 = dphi * (dm11 * dth + dm12 * dphi)
    h2 = 0.5 * (dm22 * dphi * dphi - dm11 * dth * dth)
    return h1, h2


class CallableModel(MechanicalModel):
    """Model assembled from user supplied callables."""

    name = "callable"

    def __init__(self, mass, coriolis, gravity, input=None, left_annihilator=None,
                 potential=None, cond_cap=DEFAULT_COND_CAP, name="callable"):
        super().__init__()
        self._mass = mass
        self._coriolis = coriolis
        self._gravity = gravity
        self._input = input
        self._annihilator = left_annihilator
        self._potential = potential
        self.cond_cap = cond_cap
        self.name = name

    def mass(self, q):
        return np.asarray(self._mass(q), dtype=float)

    def coriolis(self, q, qdot):
        return np.asarray(self._coriolis(q, qdot), dtype=float)

    def gravity(self, q):
        return np.asarray(self._gravity(q), dtype=float)

    def input(self, q):
        if self._input is None:
            return super().input(q)
        return np.asarray(self._input(q), dtype=float).reshape(2)

    def left_annihilator(self, q):
        if self._annihilator is None:
            return super().left_annihilator(q)
        return np.asarray(self._annihilator(q), dtype=float).reshape(2)

    def potential(self, q):
        if self._potential is None:
            raise NotImplementedError("no potential supplied")
        return float(self._potential(q))


class PendubotModel(MechanicalModel):
    """Two-link arm actuated at the shoulder, passive elbow.

    Angles are measured from the downward vertical. The passive coordinate is
    a rescaled elbow angle ``phi = elbow_offset + elbow_scale * q2`` so that the
    VHC family centred at ``phi = pi/2`` maps to elbow swings of
    ``+-pi / (2 * elbow_scale)`` about the straight arm.

    Parameters (SI units): ``m1, m2, l1, lc1, lc2, I1, I2, g, elbow_scale,
    elbow_offset``.
    """

    name = "pendubot"
    defaults = dict(m1=0.8, m2=0.5, l1=0.3, lc1=0.15, lc2=0.2, I1=0.006, I2=0.004,
                    g=9.81, elbow_scale=2.0, elbow_offset=math.pi / 2)

    def __init__(self, **params):
        unknown = set(params) - set(self.defaults)
        if unknown:
            raise ConfigError(f"unknown pendubot parameters: {sorted(unknown)}")
        p = {**self.defaults, **params}
        super().__init__(**p)
        self.a = p["I1"] + p["I2"] + p["m1"] * p["lc1"] ** 2 + p["m2"] * (p["l1"] ** 2 + p["lc2"] ** 2)
        self.b = p["I2"] + p["m2"] * p["lc2"] ** 2
        self.c = p["m2"] * p["l1"] * p["lc2"]
        self.k1 = (p["m1"] * p["lc1"] + p["m2"] * p["l1"]) * p["g"]
        self.k2 = p["m2"] * p["lc2"] * p["g"]
        self.s = p["elbow_scale"]
        self.off = p["elbow_offset"]

    def _q2(self, phi):
        return (phi - self.off) / self.s

    def mass(self, q):
        c2 = math.cos(self._q2(q[1]))
        s = self.s
        m12 = (self.b + self.c * c2) / s
        return np.array([[self.a + 2.0 * self.c * c2, m12], [m12, self.b / s ** 2]])

    def mass_derivative(self, q):
        s = self.s
        s2 = math.sin(self._q2(q[1]))
        dM = np.zeros((2, 2, 2))
        dM[0, 0, 1] = -2.0 * self.c * s2 / s
        dM[0, 1, 1] = dM[1, 0, 1] = -self.c * s2 / s ** 2
        return dM

    def terms(self, q, qdot):
        q2 = self._q2(q[1])
        c2, s2 = math.cos(q2), math.sin(q2)
        s = self.s
        m11 = self.a + 2.0 * self.c * c2
        m12 = (self.b + self.c * c2) / s
        m22 = self.b / (s * s)
        h1, h2 = _phi_only_coriolis(-2.0 * self.c * s2 / s, -self.c * s2 / (s * s), 0.0,
                                    qdot[0], qdot[1])
        g2 = self.k2 * math.sin(q[0] + q2)
        return m11, m12, m22, h1, h2, self.k1 * math.sin(q[0]) + g2, g2 / s

    def gravity(self, q):
        q1 = q[0]
        q12 = q1 + self._q2(q[1])
        g2 = self.k2 * math.sin(q12)
        return np.array([self.k1 * math.sin(q1) + g2, g2 / self.s])

    def potential(self, q):
        q1 = q[0]
        return -self.k1 * math.cos(q1) - self.k2 * math.cos(q1 + self._q2(q[1]))


class ButterflyModel(MechanicalModel):
    """Ball rolling on the rim of a rotating figure-eight frame.

    The ball centre sits at ``R(theta) p(phi)`` with the frame curve
    ``p(phi) = delta(phi) (sin phi, cos phi)`` and
    ``delta(phi) = a - b cos(2 phi)``. Ball spin is
    ``theta_dot - (1 + |p'(phi)| / Rb) phi_dot`` (rolling without slip; exact
    for a circular frame). The frame pivot is at its centre of mass.

    Parameters (SI units): ``a, b, Rb, m, Jb, Jf, g``. ``Jb`` is an effective
    rolling inertia of the ball; ``None`` selects the solid-sphere value
    ``0.4 m Rb^2``.
    """

    name = "butterfly"
    defaults = dict(a=0.1095, b=0.0405, Rb=0.02, m=0.26, Jb=6.5e-4, Jf=1.6e-3, g=9.81)

    def __init__(self, **params):
        unknown = set(params) - set(self.defaults)
        if unknown:
            raise ConfigError(f"unknown butterfly parameters: {sorted(unknown)}")
        p = {**self.defaults, **params}
        if p["Jb"] is None:
            p["Jb"] = 0.4 * p["m"] * p["Rb"] ** 2
        super().__init__(**p)
        self._p = p

    def curve(self, phi):
        """Frame curve and its first two derivatives at ``phi``."""
        a, b = self._p["a"], self._p["b"]
        s, c = math.sin(phi), math.cos(phi)
        d = a - b * math.cos(2 * phi)
        d1 = 2 * b * math.sin(2 * phi)
        d2 = 4 * b * math.cos(2 * phi)
        p = np.array([d * s, d * c])
        p1 = np.array([d1 * s + d * c, d1 * c - d * s])
        p2 = np.array([d2 * s + 2 * d1 * c - d * s, d2 * c - 2 * d1 * s - d * c])
        return p, p1, p2

    def _terms(self, phi):
        m, Jb, Jf, Rb = (self._p[k] for k in ("m", "Jb", "Jf", "Rb"))
        p, p1, p2 = self.curve(phi)
        sp = np.array([-p[1], p[0]])
        n1 = math.hypot(p1[0], p1[1])
        rho = n1 / Rb
        drho = (p1 @ p2) / (n1 * Rb)
        k = -(1.0 + rho)
        return m, Jb, Jf, p, p1, p2, sp, k, -drho

    def mass(self, q):
        m, Jb, Jf, p, p1, p2, sp, k, dk = self._terms(q[1])
        m12 = m * (sp @ p1) + Jb * k
        return np.array([[Jf + m * (p @ p) + Jb, m12], [m12, m * (p1 @ p1) + Jb * k * k]])

    def mass_derivative(self, q):
        m, Jb, Jf, p, p1, p2, sp, k, dk = self._terms(q[1])
        dM = np.zeros((2, 2, 2))
        dM[0, 0, 1] = 2.0 * m * (p @ p1)
        dM[0, 1, 1] = dM[1, 0, 1] = m * (sp @ p2) + Jb * dk
        dM[1, 1, 1] = 2.0 * m * (p1 @ p2) + 2.0 * Jb * k * dk
        return dM

    def terms(self, q, qdot):
        p = self._p
        m, Jb, Jf, Rb, a, b = p["m"], p["Jb"], p["Jf"], p["Rb"], p["a"], p["b"]
        th, phi = q[0], q[1]
        s, c = math.sin(phi), math.cos(phi)
        s2, c2 = math.sin(2 * phi), math.cos(2 * phi)
        d = a - b * c2
        d1 = 2 * b * s2
        d2 = 4 * b * c2
        px, py = d * s, d * c
        p1x, p1y = d1 * s + d * c, d1 * c - d * s
        p2x, p2y = d2 * s + 2 * d1 * c - d * s, d2 * c - 2 * d1 * s - d * c
        n1 = math.hypot(p1x, p1y)
        k = -(1.0 + n1 / Rb)
        dk = -(p1x * p2x + p1y * p2y) / (n1 * Rb)
        m11 = Jf + m * (px * px + py * py) + Jb
        m12 = m * (-py * p1x + px * p1y) + Jb * k
        m22 = m * (p1x * p1x + p1y * p1y) + Jb * k * k
        dm11 = 2.0 * m * (px * p1x + py * p1y)
        dm12 = m * (-py * p2x + px * p2y) + Jb * dk
        dm22 = 2.0 * m * (p1x * p2x + p1y * p2y) + 2.0 * Jb * k * dk
        h1, h2 = _phi_only_coriolis(dm11, dm12, dm22, qdot[0], qdot[1])
        mg = m * p["g"]
        st, ct = math.sin(th), math.cos(th)
        g1 = mg * (ct * px - st * py)
        g2 = mg * (st * p1x + ct * p1y)
        return m11, m12, m22, h1, h2, g1, g2

    def gravity(self, q):
        th, phi = q[0], q[1]
        mg = self._p["m"] * self._p["g"]
        p, p1, _ = self.curve(phi)
        st, ct = math.sin(th), math.cos(th)
        # y-components of R'(theta) p and R(theta) p'
        return np.array([mg * (ct * p[0] - st * p[1]), mg * (st * p1[0] + ct * p1[1])])

    def potential(self, q):
        p, _, _ = self.curve(q[1])
        th = q[0]
        return self._p["m"] * self._p["g"] * (math.sin(th) * p[0] + math.cos(th) * p[1])


_CATALOG = {
    "pendubot": PendubotModel,
    "butterfly": ButterflyModel,
}


def builtin_models():
    """Catalog of shipped model classes keyed by name."""
    return dict(_CATALOG)


def make_model(key, params=None):
    try:
        cls = _CATALOG[key]
    except KeyError:
        raise UnknownModel(f"unknown model {key!r}; known: {sorted(_CATALOG)}") from None
    return cls(**(params or {}))


def load_model(doc):
    """Build a model from ``{"model": key, "params": {...}}`` (dict, JSON text or path)."""
    if isinstance(doc, (str, Path)) and Path(doc).exists():
        doc = json.loads(Path(doc).read_text())
    elif isinstance(doc, str):
        doc = json.loads(doc)
    if not isinstance(doc, dict) or "model" not in doc:
        raise ConfigError("model document needs a 'model' key")
    return make_model(doc["model"], doc.get("params"))


# evaluation -------------------------------------------------------------

def solve2(m11, m12, m22, r1, r2, cap=DEFAULT_COND_CAP):
    """Solve a symmetric 2x2 system given by its entries, checking conditioning."""
    tr = m11 + m22
    det = m11 * m22 - m12 * m12
    disc = math.sqrt(max(0.25 * tr * tr - det, 0.0))
    lmin = 0.5 * tr - disc
    if not (lmin > 0.0) or (0.5 * tr + disc) / lmin > cap:
        raise SingularMass(f"mass matrix ill conditioned (eigenvalues {lmin:.3e}, {0.5 * tr + disc:.3e})")
    return (m22 * r1 - m12 * r2) / det, (m11 * r2 - m12 * r1) / det


def accel(model, x, u):
    """``(thetadd, phidd)`` as floats for a state array ``x`` (input ``F = [1, 0]``
    unless the model overrides ``input``)."""
    m11, m12, m22, h1, h2, g1, g2 = model.terms(x[:2], x[2:4])
    F = model.input(x[:2]) if type(model).input is not MechanicalModel.input else (1.0, 0.0)
    return solve2(m11, m12, m22, F[0] * u - h1 - g1, F[1] * u - h2 - g2, model.cond_cap)


def mass_solve(model, q, rhs):
    """``M(q)^{-1} rhs``, raising SingularMass past the condition cap."""
    M = model.mass(q)
    return np.array(solve2(M[0, 0], M[0, 1], M[1, 1], rhs[0], rhs[1], model.cond_cap))


def forward_dynamics(model, state, u):
    """Generalized accelerations ``M^{-1} (F u - C qd - G)``."""
    q, qd = split_state(state)
    return np.array(accel(model, np.concatenate([q, qd]), u))


def state_derivative(model, state, u):
    q, qd = split_state(state)
    a1, a2 = accel(model, np.concatenate([q, qd]), u)
    return np.array([qd[0], qd[1], a1, a2])
