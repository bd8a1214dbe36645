import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from cblab.laplace_ode import (
    SOLVER_ATOL,
    BlowUpError,
    FiniteMeasureOnR,
    GridFunction,
    cbi_laplace,
    iterate_wk,
    iteration_gaps,
    residual,
    solve_joint_pair,
    solve_joint_two_times,
    solve_u,
    solve_u_inverse,
    solve_w,
    sup_gap,
)
from cblab.mechanisms import (
    BranchingMechanism,
    DomainError,
    ImmigrationMechanism,
    exp_density,
    quadratic,
    stable_density,
    subtract_immigration,
)
from cblab.quadratic import QuadraticParams, v0, v1
from cblab.simulate import MCEstimate, RngSpec, sample_quadratic_transition

JUMPY = BranchingMechanism(0.3, 0.5, (exp_density(2.0, 1.5),))
NEVEU = BranchingMechanism(0.0, 0.0, (stable_density(1.0, 1.0),))


def riccati(alpha, t, lam):
    """u(t, lam) for psi(u) = alpha u + u^2."""
    if alpha == 0:
        return lam / (1 + lam * t)
    return lam * math.exp(-alpha * t) / (1 + lam * (1 - math.exp(-alpha * t)) / alpha)


# -- u(t, lambda) -------------------------------------------------------------


def test_u_zero_lambda():
    assert solve_u(JUMPY, 2.0, 0.0) == 0.0


def test_u_quadratic_example():
    assert solve_u(quadratic(1.0), 1.0, 1.0) == pytest.approx(0.225400, abs=5e-7)
    assert solve_u(quadratic(1.0), 1.0, 1.0) == pytest.approx(riccati(1.0, 1.0, 1.0), abs=1e-9)


def test_u_stationary_point():
    m = quadratic(-1.0)
    for t in (0.5, 3.0):
        assert solve_u(m, t, 1.0) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("alpha", [-1.0, 0.0, 0.5, 2.0])
@pytest.mark.parametrize("t,lam", [(0.3, 0.5), (1.0, 1.0), (2.0, 5.0)])
def test_u_matches_riccati(alpha, t, lam):
    assert solve_u(quadratic(alpha), t, lam) == pytest.approx(riccati(alpha, t, lam), rel=1e-8, abs=1e-10)


def test_u_inverse_cross_check():
    m = quadratic(0.5)
    assert abs(solve_u(m, 1.0, 1.0) - solve_u_inverse(m, 1.0, 1.0)) <= 1e-8
    assert abs(solve_u(JUMPY, 0.7, 3.0) - solve_u_inverse(JUMPY, 0.7, 3.0)) <= 1e-8


def test_u_inverse_t_zero():
    assert solve_u_inverse(JUMPY, 0.0, 2.5) == 2.5


def test_u_below_supercritical_root_moves_to_root():
    m = quadratic(-1.0)
    ts = [0.0, 0.5, 1.0, 2.0, 5.0]
    us = [solve_u(m, t, 0.5) for t in ts]
    assert all(b > a for a, b in zip(us, us[1:]))
    assert us[-1] < 1.0
    assert solve_u_inverse(m, 2.0, 0.5) == pytest.approx(us[3], abs=1e-8)


def test_u_above_root_log_space():
    m = quadratic(-1.0)
    assert solve_u(m, 0.5, 100.0) == pytest.approx(riccati(-1.0, 0.5, 100.0), rel=1e-8)


@given(s=st.floats(0.0, 2.0), t=st.floats(0.0, 2.0), lam=st.floats(0.0, 10.0))
@settings(max_examples=30, deadline=None)
def test_flow_property(s, t, lam):
    m = JUMPY
    assert abs(solve_u(m, s + t, lam) - solve_u(m, t, solve_u(m, s, lam))) <= 1e-8


def test_u_blow_up_reports_time():
    with pytest.raises(BlowUpError) as info:
        solve_u(BranchingMechanism(-1.0), 800.0, 1.0)
    assert info.value.time == pytest.approx(700.0, rel=1e-6)


def test_non_conservative_refused():
    m = BranchingMechanism(0.0, 0.0, (stable_density(1.0, 0.5),))
    with pytest.raises(DomainError):
        solve_u(m, 1.0, 1.0)


def test_neveu_is_solvable():
    # psi(u) = u log u up to a linear term; u(t, lam) stays finite
    u = solve_u(NEVEU, 1.0, 2.0)
    assert u == pytest.approx(solve_u_inverse(NEVEU, 1.0, 2.0), rel=1e-7)


# -- measures and w ---------------------------------------------------------


def test_measure_basics():
    mu = FiniteMeasureOnR(((1.0, 0.5), (2.0, 1.0)), ((0.0, 3.0, 0.25),))
    assert mu.H == 3.0
    assert not mu.has_top_atom
    assert mu.total_mass() == pytest.approx(2.25)
    assert mu.tail_mass(1.5) == pytest.approx(1.0 + 1.5 * 0.25)
    assert FiniteMeasureOnR.dirac(2.0, 1.0).has_top_atom
    assert FiniteMeasureOnR.dirac(2.0, 0.0).is_zero


@pytest.mark.parametrize("bad", [dict(atoms=((math.inf, 1.0),)), dict(atoms=((1.0, -1.0),)),
                                 dict(densities=((2.0, 1.0, 1.0),)), dict(densities=((0.0, 1.0, -1.0),))])
def test_measure_invalid(bad):
    with pytest.raises(ValueError):
        FiniteMeasureOnR(**bad)


@pytest.mark.parametrize("s", [0.0, 0.4, 0.99])
def test_w_single_atom_reduces_to_u(s):
    w = solve_w(JUMPY, FiniteMeasureOnR.dirac(1.0, 2.0), s)
    assert w(s) == pytest.approx(solve_u(JUMPY, 1.0 - s, 2.0), abs=1e-9)


def test_w_zero_measure():
    w = solve_w(JUMPY, FiniteMeasureOnR())
    assert w(0.0) == 0.0 and w(5.0) == 0.0


def test_w_two_atoms_compose():
    m = quadratic(0.5)
    mu = FiniteMeasureOnR(((1.0, 0.7), (2.0, 1.3)))
    w = solve_w(m, mu)
    expected = solve_u(m, 1.0, 0.7 + solve_u(m, 1.0, 1.3))
    assert w(0.0) == pytest.approx(expected, abs=1e-9)
    # left-continuous with the jump sitting at the atom
    assert w(2.0) == pytest.approx(1.3)
    assert w(2.5) == 0.0


def test_w_density_residual():
    mu = FiniteMeasureOnR(((1.5, 0.4),), ((0.0, 2.0, 0.5),))
    w = solve_w(JUMPY, mu)
    assert residual(JUMPY, w, mu) <= 10 * SOLVER_ATOL
    assert np.all(w.values >= 0)


def test_w_uniqueness_guard():
    mu = FiniteMeasureOnR(densities=((0.0, 1.0, 1.0),))
    with pytest.raises(DomainError, match="unique"):
        solve_w(NEVEU, mu)
    # a top atom restores uniqueness
    solve_w(NEVEU, FiniteMeasureOnR(((1.0, 0.5),), ((0.0, 1.0, 1.0),)))


# -- CBI exponential formula ---------------------------------------------------


def test_cbi_without_immigration():
    mu = FiniteMeasureOnR.dirac(1.0, 1.0)
    base = math.exp(-2.0 * solve_w(JUMPY, mu)(0.0))
    assert cbi_laplace(JUMPY, ImmigrationMechanism(0.5), 0.0, mu, 2.0) == pytest.approx(base, rel=1e-9)
    assert cbi_laplace(JUMPY, ImmigrationMechanism(), 1.0, mu, 2.0) == pytest.approx(base, rel=1e-9)


def test_cbi_matches_quadrature_of_u():
    m, f = quadratic(0.5), ImmigrationMechanism(0.8)
    t, lam, x = 1.0, 1.0, 0.5
    integral, _ = integrate.quad(lambda r: 0.8 * riccati(0.5, r, lam), 0.0, t, epsabs=1e-13)
    expected = math.exp(-x * riccati(0.5, t, lam) - integral)
    got = cbi_laplace(m, f, 1.0, FiniteMeasureOnR.dirac(t, lam), x)
    assert got == pytest.approx(expected, rel=1e-9)


def test_cbi_monte_carlo():
    # constant-rate CBI simulated with the exact transition law
    rng = RngSpec(11).generator(0, 0)
    x, t, lam = 0.5, 1.0, 1.0
    z = sample_quadratic_transition(0.5, np.full(100_000, x), t, rng, immigration=0.8)
    est = MCEstimate.from_samples(np.exp(-lam * z))
    theory = cbi_laplace(quadratic(0.5), ImmigrationMechanism(0.8), 1.0, FiniteMeasureOnR.dirac(t, lam), x)
    assert abs(est.z(theory)) <= 4


def test_cbi_gridfunction_rate():
    h = GridFunction(np.array([0.0, 2.0]), np.array([1.0, 1.0]))
    m, f = quadratic(0.5), ImmigrationMechanism(0.8)
    mu = FiniteMeasureOnR.dirac(1.0, 1.0)
    assert cbi_laplace(m, f, h, mu, 0.5) == pytest.approx(cbi_laplace(m, f, 1.0, mu, 0.5), rel=1e-10)


# -- iteration ------------------------------------------------------------------


def test_iteration_monotone_and_converges():
    psi0, phi = BranchingMechanism(1.5, 1.0), ImmigrationMechanism(1.0)
    mu = FiniteMeasureOnR.dirac(1.0, 1.0)
    ws = iterate_wk(psi0, phi, [mu] * 31, 0.0, with_limit=True)
    wbar, ws = ws[-1], ws[:-1]
    vals = np.array([w.values for w in ws])
    assert np.all(np.diff(vals, axis=0) >= -1e-12)
    assert np.all(vals <= wbar.values + 1e-12)
    assert sup_gap(ws[-1], wbar) <= 1e-6
    gaps = iteration_gaps(ws)
    assert gaps[5] < gaps[0]
    # w_0 solves the psi0 equation; the limit solves the psi0 - phi equation
    assert residual(psi0, ws[0], mu) <= 10 * SOLVER_ATOL
    for k in (1, 10, 30):
        assert residual(psi0, ws[k], mu, (phi, ws[k - 1])) <= 10 * SOLVER_ATOL
    assert residual(subtract_immigration(psi0, phi), wbar, mu) <= 10 * SOLVER_ATOL
    assert wbar(0.0) == pytest.approx(solve_u(quadratic(0.5), 1.0, 1.0), abs=1e-9)


def test_iteration_with_jumps():
    psi0 = BranchingMechanism(1.0, 0.5, (exp_density(1.0, 2.0),))
    phi = ImmigrationMechanism(0.2, (exp_density(0.5, 3.0),))
    mu = FiniteMeasureOnR(((1.0, 1.0),), ((0.0, 1.0, 0.3),))
    ws = iterate_wk(psi0, phi, [mu] * 21, 0.0, with_limit=True)
    assert sup_gap(ws[-2], ws[-1]) <= 1e-6


# -- coupled systems ----------------------------------------------------------


@pytest.mark.parametrize("alpha,theta,l1,l2,t", [(0.0, 0.25, 0.5, 2.0, 1.0), (1.0, 0.5, 2.0, 0.5, 2.0),
                                                 (0.5, 0.5, 1.0, 1.0, 0.5)])
def test_joint_pair_matches_closed_form(alpha, theta, l1, l2, t):
    q = QuadraticParams(alpha, theta)
    w0, ws0 = solve_joint_pair(q.psi0, q.phi, t, l1, l2)
    assert abs(w0 - v0(q, l1, l2, t)) <= 1e-6
    assert ws0 == pytest.approx(riccati(alpha, t, l1), abs=1e-9)
    w1 = solve_joint_two_times(q.psi0, q.phi, t / 2, t, l1, l2)
    assert abs(w1 - v1(q, l1, l2, t / 2, t)) <= 1e-6


def test_joint_pair_t_zero():
    q = QuadraticParams(0.5, 0.5)
    assert solve_joint_pair(q.psi0, q.phi, 0.0, 1.0, 2.0) == (3.0, 1.0)


def test_joint_two_times_domain():
    q = QuadraticParams(0.5, 0.5)
    with pytest.raises(DomainError):
        solve_joint_two_times(q.psi0, q.phi, 1.0, 1.0, 1.0, 1.0)


def test_joint_pair_full_grid():
    q = QuadraticParams(0.5, 0.5)
    w, ws = solve_joint_pair(q.psi0, q.phi, 1.0, 1.0, 1.0, full=True)
    assert w(0.0) == pytest.approx(solve_joint_pair(q.psi0, q.phi, 1.0, 1.0, 1.0)[0], abs=1e-9)
    assert ws(0.5, "hermite") == pytest.approx(riccati(0.5, 0.5, 1.0), abs=1e-9)


# -- grid functions ---------------------------------------------------------------


def test_gridfunction_csv_round_trip(tmp_path):
    w = solve_w(JUMPY, FiniteMeasureOnR.dirac(1.0, 2.0))
    path = tmp_path / "w.csv"
    text = w.to_csv(path)
    assert text.startswith("s,value\n") and "\r" not in text
    back = GridFunction.from_csv(path)
    assert np.array_equal(back.grid, w.grid) and np.array_equal(back.values, w.values)


def test_gridfunction_interpolation():
    g = GridFunction(np.array([0.0, 1.0, 2.0]), np.array([0.0, 2.0, 2.0]))
    assert g(0.5) == 1.0
    assert g(3.0) == 0.0
    with pytest.raises(DomainError):
        g(-1.0)
    with pytest.raises(ValueError):
        GridFunction(np.array([0.0, 0.0]), np.array([1.0, 1.0]))
