import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import solve_ivp
from scipy.linalg import expm, solve_continuous_lyapunov

from orbistab.dynamics import state_derivative
from orbistab.errors import RegularityLost
from orbistab.pfl import (PflGains, certify_p, closed_loop_rhs, lie_derivatives, nominal_torque, output,
                          regularity, regularity_profile, u_from_w, vy, w_from_u)
from orbistab.vhc import VhcSpec, solve_theta

from conftest import sine_model


def perturbed(design, rng, scale=0.05):
    x = design.orbit.state_at(rng.uniform(0, design.orbit.T))
    return x + scale * rng.normal(size=4)


def test_certificate_against_lyapunov_solver():
    g = PflGains(15.0, 6.0)
    P, a = certify_p(g)
    ref = solve_continuous_lyapunov(g.matrix.T, -np.eye(2))
    np.testing.assert_allclose(P, ref, rtol=1e-12)
    assert a == pytest.approx(0.65185, abs=5e-6)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.1, 100.0), st.floats(0.1, 100.0))
def test_certificate_property(nu1, nu2):
    g = PflGains(nu1, nu2)
    P, a = certify_p(g)
    A = g.matrix
    np.testing.assert_allclose(A.T @ P + P @ A, -np.eye(2), atol=1e-9 * max(1.0, np.abs(P).max()))
    assert np.linalg.eigvalsh(P).min() > 0
    # dV/dt = -|y|^2 <= -alpha V
    for y in (np.array([1.0, 0.0]), np.array([0.3, -2.0])):
        assert -(y @ y) <= -a * vy(y, P) + 1e-9 * (y @ y)


def test_gain_validation():
    with pytest.raises(ValueError):
        PflGains(0.0, 1.0)
    with pytest.raises(ValueError):
        PflGains(1.0, -1.0)


def test_lie_derivatives_against_flow(design, rng):
    m, cur = design.model, design.curve
    for _ in range(10):
        x = perturbed(design, rng)
        u = rng.normal()
        h, lh, l2h, dh = lie_derivatives(cur, x)
        xd = state_derivative(m, x, u)
        eps = 1e-6
        hp, lhp = output(cur, x + eps * xd)
        hm, lhm = output(cur, x - eps * xd)
        assert (hp - hm) / (2 * eps) == pytest.approx(lh, abs=1e-6)
        assert (lhp - lhm) / (2 * eps) == pytest.approx(dh @ xd[2:] + l2h, abs=1e-5 * max(1, abs(lh)))


def test_transform_round_trip(design, rng):
    m, cur, g = design.model, design.curve, design.pfl
    for _ in range(20):
        x = perturbed(design, rng)
        w = rng.normal()
        u = u_from_w(m, cur, g, x, w)
        assert w_from_u(m, cur, g, x, u) == pytest.approx(w, abs=1e-9 * max(1.0, abs(u)))


def test_output_dynamics_are_linear(design, rng):
    """Under the transform with w = 0 the output follows exp(A t) y0."""
    m, cur, g = design.model, design.curve, design.pfl
    # offset only the actuated coordinate so phi stays inside the curve domain
    x0 = design.orbit.state_at(design.orbit.T / 4) + np.array([0.02, 0.0, -0.03, 0.0]) * rng.uniform(0.5, 1, 4)
    y0 = output(cur, x0)
    f = closed_loop_rhs(m, cur, g)
    ts = np.linspace(0, 1.0, 21)
    sol = solve_ivp(f, (0, 1.0), x0, method="DOP853", rtol=1e-11, atol=1e-13, t_eval=ts)
    P, a = certify_p(g)
    for t, x in zip(ts, sol.y.T):
        y = output(cur, x)
        np.testing.assert_allclose(y, expm(g.matrix * t) @ y0, atol=1e-7)
        assert vy(y, P) <= vy(y0, P) * math.exp(-a * t) * (1 + 1e-6) + 1e-14


def test_nominal_torque_keeps_constraint(design):
    m, cur, g, orb = design.model, design.curve, design.pfl, design.orbit
    u = nominal_torque(m, cur, g, orb)
    for k in range(0, len(orb.t), max(1, len(orb.t) // 20)):
        x = orb.state_at(orb.t[k])
        assert w_from_u(m, cur, g, x, u[k]) == pytest.approx(0.0, abs=1e-8 * max(1.0, abs(u[k])))


def test_regularity_bounded_away_from_zero(design):
    r = regularity_profile(design.model, design.curve, design.orbit)
    assert np.min(np.abs(r)) > 1e-3
    assert np.all(np.sign(r) == np.sign(r[0]))


def test_regularity_lost():
    m = sine_model()
    cur = solve_theta(m, VhcSpec.uniform(0.0, 0.0, 0.0, -1.0, 4.0, 101))
    x = np.array([0.5, 0.5, 0.0, 0.0])
    assert regularity(m, cur, x) == pytest.approx(1.0)
    with pytest.raises(RegularityLost):
        u_from_w(m, cur, PflGains(), x, 0.0, reg_floor=2.0)
