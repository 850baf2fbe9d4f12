import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp
from scipy.optimize import bisect

from orbistab.dynamics import make_model
from orbistab.errors import DomainExceeded, NoBracket, NoReturn
from orbistab.pfl import closed_loop_rhs
from orbistab.pipeline import DEFAULT_VHC
from orbistab.vhc import (ReducedOptions, VhcSpec, integrate_reduced, lift_trajectory, reduced_coeffs,
                          solve_theta)

from conftest import sine_model


def test_identity_curve():
    m = sine_model()
    cur = solve_theta(m, VhcSpec.uniform(0.0, 0.0, 0.0, -1.0, 4.0, 101))
    np.testing.assert_allclose(cur.theta_grid, cur.phi, atol=1e-10)
    np.testing.assert_allclose(cur.dtheta_grid, 1.0, atol=1e-8)
    np.testing.assert_allclose(cur.ddtheta_grid, 0.0, atol=1e-4)


def test_butterfly_curve_on_full_turn():
    m = make_model("butterfly")
    cur = solve_theta(m, VhcSpec.uniform(*DEFAULT_VHC["butterfly"], 0.0, 2 * math.pi, 721))
    assert np.all(np.isfinite(cur.theta_grid))
    assert np.max(np.abs(np.diff(cur.theta_grid))) < 0.05


def test_curve_derivatives_consistent(butterfly):
    cur = butterfly.curve
    phi = np.linspace(0.0, math.pi, 200)
    h = 1e-4
    d1 = (cur.theta(phi + h) - cur.theta(phi - h)) / (2 * h)
    d2 = (cur.dtheta(phi + h) - cur.dtheta(phi - h)) / (2 * h)
    np.testing.assert_allclose(cur.dtheta(phi), d1, atol=1e-7)
    np.testing.assert_allclose(cur.ddtheta(phi), d2, atol=1e-5)


def test_bisection_oracle(design, rng):
    m, cur = design.model, design.curve
    c1, c2, c3 = design.config["vhc"]["c"]
    for phi in rng.uniform(0.0, math.pi, 20):
        rhs = c1 * math.sin(2 * phi) + c2 * math.sin(4 * phi) + c3 * (phi - math.pi / 2)
        r = lambda th: m.gravity(np.array([th, phi]))[1] - rhs
        th0 = float(cur.theta(phi))
        root = bisect(r, th0 - 0.05, th0 + 0.05, xtol=1e-14)
        assert abs(root - th0) < 1e-9


def test_no_bracket():
    with pytest.raises(NoBracket):
        solve_theta(make_model("butterfly"), VhcSpec.uniform(5.0, 5.0, 5.0))


def test_reduced_trivial():
    m = sine_model()
    cur = solve_theta(m, VhcSpec.uniform(0.0, 0.0, 0.0, -1.0, 4.0, 101))
    co = reduced_coeffs(m, cur)
    phi = np.linspace(-0.5, 3.5, 50)
    np.testing.assert_allclose(co.alpha(phi), 1.0, atol=1e-9)
    np.testing.assert_allclose(co.beta(phi), 0.0, atol=1e-6)


def test_gamma_definition(design, rng):
    m, cur, co = design.model, design.curve, design.coeffs
    for phi in rng.uniform(0.0, math.pi, 20):
        th = float(cur.theta(phi))
        assert co.gamma(phi) == pytest.approx(m.gravity(np.array([th, phi]))[1], abs=1e-9)


def test_projection_oracle(design, rng):
    """alpha phidd + beta phid^2 + gamma is F_perp applied to the full equations under the constraint."""
    m, cur, co = design.model, design.curve, design.coeffs
    for _ in range(20):
        phi, dphi, ddphi = rng.uniform(0.0, math.pi), rng.normal(), rng.normal()
        th, t1, t2 = cur.eval1(phi)
        q = np.array([th, phi])
        qd = np.array([t1 * dphi, dphi])
        qdd = np.array([t1 * ddphi + t2 * dphi ** 2, ddphi])
        ref = m.left_annihilator(q) @ (m.mass(q) @ qdd + m.coriolis(q, qd) @ qd + m.gravity(q))
        got = co.alpha(phi) * ddphi + co.beta(phi) * dphi ** 2 + co.gamma(phi)
        assert got == pytest.approx(ref, abs=1e-8)


def test_domain_exceeded(butterfly):
    with pytest.raises(DomainExceeded):
        butterfly.coeffs.alpha(10.0)


def test_equilibrium_start(butterfly):
    from scipy.optimize import brentq
    co = butterfly.coeffs
    pe = brentq(lambda p: float(co.gamma(p)), 1.2, 1.9, xtol=1e-15)
    sol = integrate_reduced(co, pe, 0.0)
    assert sol.is_equilibrium
    assert np.all(sol.phi == pe) and np.all(sol.dphi == 0.0)
    orb = lift_trajectory(butterfly.curve, sol)
    x = orb.state_at(np.linspace(0, sol.period, 5))
    assert np.ptp(x[:, 0]) == 0.0 and np.all(x[:, 2:] == 0.0)


def test_closed_orbit_and_half_period(design):
    orb = design.orbit
    assert orb.closure_error < 1e-8
    t_half, phi_half, dphi_half = orb.half_period_state
    assert t_half == pytest.approx(orb.T / 2, rel=1e-6)
    assert phi_half == pytest.approx(math.pi, abs=1e-6)
    assert abs(dphi_half) < 1e-9


def test_no_return(butterfly):
    with pytest.raises(NoReturn):
        integrate_reduced(butterfly.coeffs, 0.0, 0.0, ReducedOptions(max_horizon=1.0))


def test_first_integral(design):
    """psi phid^2 + integral of 2 psi gamma / alpha is constant, with psi = exp(integral of 2 beta / alpha)."""
    co, orb = design.coeffs, design.orbit
    phi0 = float(orb.phi[0])
    t_half, phi_half, _ = orb.half_period_state

    def rhs(p, y):
        a, b, g = (float(v) for v in (co.alpha(p), co.beta(p), co.gamma(p)))
        return [2.0 * b / a, 2.0 * math.exp(y[0]) * g / a]

    sol = solve_ivp(rhs, (phi0, phi_half), [0.0, 0.0], method="DOP853", rtol=1e-12, atol=1e-14,
                    dense_output=True)
    t = np.linspace(0.0, t_half, 60)[1:-1]
    phi, dphi = orb.phi_at(t), orb.phi_at(t, 1)
    lnpsi, J = sol.sol(phi)
    vals = np.exp(lnpsi) * dphi ** 2 + J
    assert np.ptp(vals) < 1e-6 * np.max(np.exp(lnpsi) * dphi ** 2)


def test_constraint_holds_on_lift(design):
    h, lh = design.orbit.constraint_residuals()
    assert h < 1e-8 and lh < 1e-8
    t10 = np.linspace(0, design.orbit.T, 10 * len(design.orbit.t))
    h, lh = design.orbit.constraint_residuals(t10)
    assert h < 1e-8 and lh < 1e-8


def test_half_period_mirror(design):
    orb = design.orbit
    t = np.linspace(0.0, orb.T / 2, 200)
    np.testing.assert_allclose(orb.phi_at(orb.T / 2 + t), orb.phi_at(orb.T / 2 - t), atol=1e-6)


def test_lift_resimulated_with_pfl(design):
    orb = design.orbit
    f = closed_loop_rhs(design.model, design.curve, design.pfl)
    sol = solve_ivp(f, (0, orb.T), orb.state_at(0.0), method="DOP853", rtol=1e-10, atol=1e-12, dense_output=True)
    t = np.linspace(0, orb.T, 500)
    err = np.max(np.abs(sol.sol(t).T - orb.state_at(t)))
    assert err < 1e-4


def test_spec_validation():
    with pytest.raises(ValueError):
        VhcSpec(0.0, 0.0, 0.0, np.array([0.0, 1.0, 0.5, 2.0]))
    with pytest.raises(ValueError):
        VhcSpec.uniform(math.nan, 0.0, 0.0)
