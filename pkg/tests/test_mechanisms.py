import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, special

from cblab.mechanisms import (
    Atom,
    BranchingMechanism,
    Criticality,
    Density,
    DomainError,
    ImmigrationMechanism,
    atom,
    branching_from_dict,
    branching_to_dict,
    classify,
    eval_phi,
    eval_phi_prime,
    eval_psi,
    eval_psi_prime,
    exp_density,
    immigration_from_dict,
    immigration_to_dict,
    levy_mass,
    levy_moment,
    phi_theta,
    positive_root,
    psi_prime_at_zero,
    quadratic,
    shift,
    stable_density,
    subtract_immigration,
    theta_zero,
    tilde_phi_theta,
)

LAMBDAS = np.linspace(0.1, 10.0, 34)


def brute_psi(alpha, beta, density, lam):
    """Direct quadrature of the Levy-Khintchine integral for one density."""

    def f(l):
        if l <= density.lower:
            return 0.0
        return density(l) * (math.expm1(-lam * l) + lam * l * (l <= 1))

    lo, _ = integrate.quad(f, density.lower, 1, limit=500, epsabs=1e-12, epsrel=1e-11)
    hi, _ = integrate.quad(f, 1, np.inf, limit=500, epsabs=1e-12, epsrel=1e-11)
    return alpha * lam + beta * lam**2 + lo + hi


MECHS = {
    "quadratic": quadratic(0.5),
    "exp": BranchingMechanism(0.3, 0.5, (exp_density(2.0, 1.5),)),
    "stable": BranchingMechanism(0.2, 0.0, (stable_density(1.0, 1.5),)),
    "tempered": BranchingMechanism(0.0, 0.2, (Density(0.7, 0.8, rho=1.0),)),
    "atom": BranchingMechanism(0.1, 0.3, (atom(2.0, 0.5), atom(0.5, 1.0))),
}


def test_quadratic_values():
    m = quadratic(0.5)
    assert eval_psi(m, 1.0) == pytest.approx(1.5)
    assert eval_psi(m, 0.0) == 0.0
    assert eval_psi_prime(m, 0.0) == pytest.approx(0.5)


@pytest.mark.parametrize("density", [exp_density(2.0, 1.5), Density(0.7, 0.8, rho=1.0),
                                     Density(1.0, 0.5, rho=0.5, lower=0.2)])
@pytest.mark.parametrize("lam", [0.3, 1.0, 4.0])
def test_psi_matches_brute_quadrature(density, lam):
    m = BranchingMechanism(0.25, 0.5, (density,))
    assert eval_psi(m, lam) == pytest.approx(brute_psi(0.25, 0.5, density, lam), rel=1e-8, abs=1e-10)


def test_stable_closed_form():
    # for gamma in (1, 2): int l^{-1-g}(e^{-lam l} - 1 + lam l) dl = Gamma(-g) lam^g
    g, lam = 1.5, 2.0
    m = BranchingMechanism(0.0, 0.0, (stable_density(1.0, g),))
    # our compensator stops at l = 1; the difference is lam * int_1^inf l^{-g} dl
    expected = special.gamma(-g) * lam**g - lam / (g - 1)
    assert eval_psi(m, lam) == pytest.approx(expected, rel=1e-10)


def test_atom_exact():
    m = BranchingMechanism(0.0, 0.0, (atom(2.0, 0.5),))
    assert eval_psi(m, 1.5) == pytest.approx(0.5 * (math.exp(-3.0) - 1))


@pytest.mark.parametrize("name", sorted(MECHS))
@given(a=st.floats(0.0, 20.0), b=st.floats(0.0, 20.0))
@settings(max_examples=25, deadline=None)
def test_psi_convex(name, a, b):
    m = MECHS[name]
    mid = eval_psi(m, 0.5 * (a + b))
    assert mid <= 0.5 * (eval_psi(m, a) + eval_psi(m, b)) + 1e-9 * (1 + abs(mid))


@given(a=st.floats(0.0, 20.0), b=st.floats(0.0, 20.0))
@settings(max_examples=40, deadline=None)
def test_phi_concave_increasing(a, b):
    f = ImmigrationMechanism(0.3, (exp_density(1.0, 2.0), atom(1.5, 0.4)))
    lo, hi = sorted((a, b))
    assert eval_phi(f, lo) <= eval_phi(f, hi) + 1e-12
    mid = eval_phi(f, 0.5 * (a + b))
    assert mid >= 0.5 * (eval_phi(f, a) + eval_phi(f, b)) - 1e-12


def test_phi_derivative_matches_difference():
    f = ImmigrationMechanism(0.3, (exp_density(1.0, 2.0),))
    h = 1e-5
    fd = (eval_phi(f, 1.0 + h) - eval_phi(f, 1.0 - h)) / (2 * h)
    assert eval_phi_prime(f, 1.0) == pytest.approx(fd, rel=1e-7)


def test_vectorized_matches_scalar():
    m = MECHS["exp"]
    vec = eval_psi(m, LAMBDAS)
    assert np.allclose(vec, [eval_psi(m, v) for v in LAMBDAS], rtol=1e-14, atol=0)


def test_negative_lambda_rejected():
    with pytest.raises(DomainError):
        eval_psi(quadratic(1.0), -1.0)


@pytest.mark.parametrize("alpha,kind", [(0.5, Criticality.SUBCRITICAL), (0.0, Criticality.CRITICAL),
                                        (-1.0, Criticality.SUPERCRITICAL)])
def test_classify_quadratic(alpha, kind):
    c = classify(quadratic(alpha))
    assert c.kind is kind
    assert c.conservative
    assert not c.numerical


def test_infinite_mean_classification():
    neveu = BranchingMechanism(0.0, 0.0, (stable_density(1.0, 1.0),))
    c = classify(neveu)
    assert c.psi_prime_0 == -math.inf and c.conservative and c.numerical
    bounded = BranchingMechanism(0.0, 0.0, (stable_density(1.0, 0.5),))
    c = classify(bounded)
    assert not c.conservative


def test_psi_prime_at_zero_with_exp_jumps():
    m = MECHS["exp"]
    # alpha - int_1^inf l * c e^{-rho l} dl
    tail = 2.0 * math.exp(-1.5) * (1 / 1.5 + 1 / 1.5**2)
    assert psi_prime_at_zero(m) == pytest.approx(0.3 - tail, rel=1e-12)


def test_positive_root():
    assert positive_root(quadratic(-1.0)) == pytest.approx(1.0, rel=1e-12)
    assert positive_root(quadratic(0.5)) is None


def test_levy_mass_and_moment():
    d = exp_density(2.0, 1.5)
    assert levy_mass([d], 0.0) == pytest.approx(2.0 / 1.5)
    assert levy_moment([d], 0.0, math.inf) == pytest.approx(2.0 / 1.5**2)


def test_theta_zero():
    assert theta_zero(quadratic(0.5))[0] == math.inf
    th, closed = theta_zero(MECHS["exp"])
    assert th == 1.5 and not closed


@pytest.mark.parametrize("name", ["quadratic", "exp", "tempered", "atom"])
@pytest.mark.parametrize("theta", [0.25, 0.9])
def test_shift_duality(name, theta):
    m = MECHS[name]
    base = eval_psi(m, LAMBDAS)
    down = eval_psi(shift(m, -theta), LAMBDAS)
    assert np.max(np.abs(down - (base - eval_phi(phi_theta(m, theta), LAMBDAS)))) <= 1e-10
    up = eval_psi(shift(m, theta), LAMBDAS)
    assert np.max(np.abs(up - base - eval_phi(tilde_phi_theta(m, theta), LAMBDAS))) <= 1e-10
    direct = eval_psi(m, LAMBDAS + theta) - eval_psi(m, theta)
    assert np.max(np.abs(up - direct)) <= 1e-10


@given(a=st.floats(0.0, 2.0), b=st.floats(0.0, 2.0))
@settings(max_examples=20, deadline=None)
def test_shift_group_law(a, b):
    m = MECHS["exp"]
    lhs = eval_psi(shift(shift(m, a), b), LAMBDAS)
    rhs = eval_psi(shift(m, a + b), LAMBDAS)
    assert np.allclose(lhs, rhs, rtol=1e-10, atol=1e-10)


def test_shift_outside_theta_refused():
    m = MECHS["exp"]
    with pytest.raises(DomainError):
        shift(m, -2.0)
    with pytest.raises(DomainError):
        phi_theta(m, 1.5)  # boundary with an exponential tail: not integrable


def test_subtract_immigration():
    m0 = BranchingMechanism(1.5, 1.0)
    f = ImmigrationMechanism(0.4, (exp_density(1.0, 3.0),))
    m = subtract_immigration(m0, f)
    assert np.allclose(eval_psi(m, LAMBDAS), eval_psi(m0, LAMBDAS) - eval_phi(f, LAMBDAS), rtol=1e-12, atol=1e-12)


def test_dict_round_trip():
    m = BranchingMechanism(0.3, 0.5, (exp_density(2.0, 1.5), atom(1.0, 0.2), stable_density(1.0, 1.5, 0.1),
                                      Density(0.5, 0.4, 0.2, 0.0, 1.0)))
    assert branching_from_dict(branching_to_dict(m)) == m
    f = ImmigrationMechanism(0.2, (exp_density(1.0, 2.0),))
    assert immigration_from_dict(immigration_to_dict(f)) == f


@pytest.mark.parametrize("bad", [
    {"alpha": 1.0, "gamma": 2.0},
    {"alpha": 1.0, "levy": [{"kind": "wedge", "c": 1.0}]},
    {"alpha": 1.0, "levy": [{"kind": "exp", "c": 1.0}]},
    {"alpha": 1.0, "levy": [{"kind": "exp", "c": 1.0, "rho": 1.0, "lower": 0.5}]},
    {"alpha": 1.0, "beta": -1.0},
])
def test_bad_dicts_rejected(bad):
    with pytest.raises(ValueError):
        branching_from_dict(bad)


def test_invalid_components():
    with pytest.raises(ValueError):
        Atom(-1.0, 1.0)
    with pytest.raises(ValueError):
        exp_density(1.0, 0.0)
    with pytest.raises(ValueError):
        # infinite small-jump second moment
        BranchingMechanism(0.0, 0.0, (stable_density(1.0, 2.5),))
