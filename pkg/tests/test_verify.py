import math
from dataclasses import replace

import pytest

from cblab.laplace_ode import FiniteMeasureOnR
from cblab.mechanisms import BranchingMechanism, ImmigrationMechanism, exp_density, quadratic
from cblab.quadratic import QuadraticParams
from cblab.verify import (
    Check,
    SuiteConfig,
    VerificationReport,
    run_suites,
    simulate_for,
    verify_conditional_limit,
    verify_extinction_laws,
    verify_iteration_convergence,
    verify_joint_law,
    verify_shift_identities,
    verify_theorem_main,
)

SMALL = SuiteConfig(n_paths=20_000, law_n_paths=10_000)


@pytest.fixture(scope="module")
def ens():
    return simulate_for(SMALL)


# -- gates ---------------------------------------------------------------------


@pytest.mark.parametrize("check,passed", [
    (Check("a", 1.0, 1.03, 0.01), True),
    (Check("a", 1.0, 1.05, 0.01), False),
    (Check("a", 1.0, 1.05, 0.01, allowance=0.02), True),
    (Check("a", 1.0, 1.0, 0.0), True),
    (Check("a", 1.0, 1.1, 0.0), False),
    (Check("a", 0.0, 1e-7, 0.0, "abs", 1e-6), True),
    (Check("a", 0.0, 1e-5, 0.0, "abs", 1e-6), False),
    (Check("a", 0.0, 0.5, 0.0, "le", 0.6), True),
    (Check("a", 0.0, 0.7, 0.0, "le", 0.6), False),
    (Check("a", 0.0, math.nan, 0.0), False),
])
def test_gates(check, passed):
    assert check.passed is passed


def test_z_score_sign():
    assert Check("a", 1.0, 0.96, 0.01).score == pytest.approx(-4.0)
    assert Check("a", 1.0, 1.05, 0.01, allowance=0.02).score == pytest.approx(3.0)


def test_report_csv_and_summary(tmp_path):
    r = VerificationReport((Check("x", 1.0, 1.01, 0.01), Check("y", 0.0, 2.0, 0.0, "abs", 1.0)), {}, 7)
    text = r.to_csv(tmp_path / "r.csv")
    lines = text.splitlines()
    assert lines[0] == "check,theory,estimate,stderr,z,pass"
    assert lines[1].endswith(",true") and lines[2].endswith(",false")
    assert float(lines[1].split(",")[2]) == 1.01
    assert not r.passed and [c.name for c in r.failures()] == ["y"]
    assert "1/2 checks passed" in r.summary()
    assert (tmp_path / "r.csv").read_text() == text


# -- suites --------------------------------------------------------------------


def test_theorem_suite(ens):
    r = verify_theorem_main(SMALL, ens)
    assert r.passed, r.summary()


def test_theorem_self_test(ens):
    r = verify_theorem_main(SMALL, ens, offsets={"theorem.laplace_X[t=1,lambda=1]": 0.05})
    assert not r.passed


def test_joint_suite(ens):
    cfg = replace(SMALL, ode_grid={"alpha": (0.5,), "theta": (0.5,), "t": (1.0,)})
    r = verify_joint_law(cfg, ens)
    assert r.passed, r.summary()
    bad = verify_joint_law(cfg, ens, offsets={"joint.ode_vs_closed.v0": 1e-3})
    assert [c.name for c in bad.failures()] == ["joint.ode_vs_closed.v0"]


def test_extinction_suite(ens):
    r = verify_extinction_laws(SMALL, ens)
    assert r.passed, r.summary()
    names = [c.name for c in r.checks]
    assert any(n.startswith("extinction.simultaneous") for n in names)
    ratio = [c for c in r.checks if c.name.startswith("extinction.bucket_bias_ratio")][0]
    assert ratio.estimate == pytest.approx(0.25, abs=0.01)


def test_extinction_self_test(ens):
    r = verify_extinction_laws(SMALL, ens, offsets={"extinction.P(X=0)[t=1]": 0.05})
    assert [c.name for c in r.failures()] == ["extinction.P(X=0)[t=1]"]


def test_corrupted_gate_fails(ens):
    cfg = replace(SMALL, z_gate=0.0)
    assert not verify_theorem_main(cfg, ens).passed


def test_shift_identities_quadratic():
    r = verify_shift_identities(quadratic(0.5), 0.25, SMALL.lambda_grid, SMALL)
    assert r.passed, r.summary()
    assert any(c.name.startswith("shift.corollary") for c in r.checks)


def test_shift_identities_exp_density():
    m = BranchingMechanism(0.3, 0.5, (exp_density(2.0, 1.5),))
    r = verify_shift_identities(m, 0.5, SMALL.lambda_grid, SMALL)
    assert r.passed, r.summary()
    # no law check: the exact scheme cannot simulate jumps
    assert not any(c.name.startswith("shift.corollary") for c in r.checks)


def test_shift_law_check_with_jumps_under_euler():
    m = BranchingMechanism(0.3, 0.5, (exp_density(2.0, 1.5),))
    cfg = replace(SMALL, scheme="euler", dt=1 / 128, n_steps=128, law_n_paths=10_000, n_types=8)
    r = verify_shift_identities(m, 0.5, SMALL.lambda_grid, cfg)
    assert r.passed, r.summary()
    assert any(c.name.startswith("shift.corollary") for c in r.checks)


def test_shift_self_test():
    r = verify_shift_identities(quadratic(0.5), 0.25, SMALL.lambda_grid, SMALL, law=False,
                                offsets={"shift.duality": 1e-6})
    assert [c.name for c in r.failures()] == ["shift.duality"]


def test_iteration_suite():
    psi0, phi = BranchingMechanism(1.5, 1.0), ImmigrationMechanism(1.0)
    mu = FiniteMeasureOnR.dirac(1.0, 1.0)
    r = verify_iteration_convergence(psi0, phi, mu, 30)
    assert r.passed, r.summary()


def test_iteration_injected_drop_is_caught():
    psi0, phi = BranchingMechanism(1.5, 1.0), ImmigrationMechanism(1.0)
    mu = FiniteMeasureOnR.dirac(1.0, 1.0)
    r = verify_iteration_convergence(psi0, phi, mu, 10, inject=(5, 1e-3))
    assert "iteration.monotone_violation" in [c.name for c in r.failures()]


def test_iteration_too_few_steps_fails():
    psi0, phi = BranchingMechanism(1.5, 1.0), ImmigrationMechanism(1.0)
    r = verify_iteration_convergence(psi0, phi, FiniteMeasureOnR.dirac(1.0, 1.0), 2)
    assert "iteration.sup_gap[n=2]" in [c.name for c in r.failures()]


def test_conditional_suite():
    r = verify_conditional_limit(QuadraticParams(0.5, 0.5))
    assert r.passed, r.summary()


def test_conditional_critical_converges_slowly():
    # with alpha = 0 the gap decays like 1/t and misses 1e-6 at t = 50
    r = verify_conditional_limit(QuadraticParams(0.0, 0.5))
    assert not r.passed


def test_run_suites_filter():
    r = run_suites(SMALL, ("shift",))
    assert r.checks and all(c.name.startswith("shift") for c in r.checks)
    with pytest.raises(ValueError):
        run_suites(SMALL, ("nope",))


def test_run_suites_deterministic():
    cfg = replace(SMALL, n_paths=2000, law_n_paths=2000)
    a = run_suites(cfg, ("theorem", "shift"))
    b = run_suites(cfg, ("theorem", "shift"))
    assert a.to_csv() == b.to_csv()
