"""Verification suites: simulation and numerics against theory.

Every suite returns a :class:`VerificationReport`.  A check is either a
z-test (``gate="z"``: |estimate - theory|, less an optional bias allowance,
over the standard error), an absolute tolerance (``gate="abs"``) or an upper
bound on the estimate (``gate="le"``).
"""

from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from .laplace_ode import (
    SOLVER_ATOL,
    FiniteMeasureOnR,
    iterate_wk,
    residual,
    solve_joint_pair,
    solve_joint_two_times,
    solve_u,
    sup_gap,
)
from .mechanisms import (
    BranchingMechanism,
    DomainError,
    ImmigrationMechanism,
    classify,
    eval_phi,
    eval_psi,
    phi_theta,
    shift,
    subtract_immigration,
    tilde_phi_theta,
)
from .quadratic import (
    QuadraticParams,
    cond_laplace_finite,
    cond_laplace_limit,
    extinction_and_conditional,
    joint_extinction_cdf,
    simultaneous_bucket,
    simultaneous_extinction,
    v0,
    v1,
)
from .simulate import (
    ExactQuadratic,
    MCEstimate,
    PathEnsemble,
    PathGrid,
    RngSpec,
    extinction_times,
    make_scheme,
    mc_laplace,
    simulate_multitype,
)

Z_GATE = 4.0
ABS_GATE = 1e-6
IDENTITY_GATE = 1e-10
# a zero-variance estimate passes only on (near) exact agreement
DEGENERATE_TOL = 1e-12
SUITES = ("theorem", "joint", "extinction", "shift", "iteration", "conditional")


@dataclass(frozen=True)
class Check:
    name: str
    theory: float
    estimate: float
    stderr: float = 0.0
    gate: str = "z"
    tol: float = Z_GATE
    allowance: float = 0.0

    @property
    def score(self) -> float:
        """z-score for z-gates, absolute error for abs-gates, the estimate for le-gates."""
        diff = self.estimate - self.theory
        if math.isnan(diff):
            return math.nan
        if self.gate == "abs":
            return abs(diff)
        if self.gate == "le":
            return self.estimate
        excess = max(0.0, abs(diff) - self.allowance)
        if self.stderr == 0:
            return 0.0 if excess <= DEGENERATE_TOL else math.copysign(math.inf, diff)
        return math.copysign(excess / self.stderr, diff)

    @property
    def passed(self) -> bool:
        s = self.score
        if math.isnan(s):
            return False
        if self.gate == "le":
            return s <= self.tol
        return abs(s) <= self.tol


@dataclass(frozen=True)
class VerificationReport:
    checks: tuple = ()
    config: dict = field(default_factory=dict)
    seed: int | None = None

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def merge(self, other: "VerificationReport") -> "VerificationReport":
        cfg = dict(self.config)
        cfg.update(other.config)
        seed = self.seed if self.seed is not None else other.seed
        return VerificationReport(self.checks + other.checks, cfg, seed)

    def failures(self) -> list:
        return [c for c in self.checks if not c.passed]

    def to_csv(self, dest=None) -> str:
        buf = io.StringIO(newline="")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["check", "theory", "estimate", "stderr", "z", "pass"])
        for c in self.checks:
            w.writerow([c.name, format(c.theory, ".17g"), format(c.estimate, ".17g"),
                        format(c.stderr, ".17g"), format(c.score, ".17g"), str(c.passed).lower()])
        text = buf.getvalue()
        if dest is not None:
            with open(dest, "w", newline="") as fh:
                fh.write(text)
        return text

    def summary(self) -> str:
        lines = [f"seed: {self.seed}"]
        width = max((len(c.name) for c in self.checks), default=10)
        for c in self.checks:
            flag = "PASS" if c.passed else "FAIL"
            lines.append(f"{flag}  {c.name:<{width}}  theory={c.theory:.10g}  estimate={c.estimate:.10g}"
                         f"  {c.gate}={c.score:.4g} (gate {c.tol:g})")
        n_fail = len(self.failures())
        lines.append(f"{len(self.checks) - n_fail}/{len(self.checks)} checks passed"
                     + ("" if n_fail else "; all passed"))
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


ACCEPTANCE_GRID = {
    "alpha": (0.0, 0.5, 1.0),
    "theta": (0.25, 0.5),
    "lambda1": (0.5, 2.0),
    "lambda2": (0.5, 2.0),
    "t": (0.5, 1.0, 2.0),
}


@dataclass(frozen=True)
class SuiteConfig:
    alpha: float = 0.5
    theta: float = 0.5
    x: float = 1.0
    # general mechanisms for the theorem suite; default to the quadratic pair
    psi0: BranchingMechanism | None = None
    phi: ImmigrationMechanism | None = None
    seed: int = 42
    n_paths: int = 100_000
    dt: float = 1.0 / 64
    n_steps: int = 64
    n_types: int = 12
    scheme: str = "exact"
    diffusion: str = "feller"
    substeps: int = 1
    levels: int = 1000
    workers: int = 1
    t_values: tuple = (1.0,)
    lambdas: tuple = (1.0,)
    pairs: tuple = ((1.0, 1.0), (0.5, 2.0))
    t: float = 1.0
    u: float = 0.5
    delta: float = 0.05
    z_gate: float = Z_GATE
    abs_gate: float = ABS_GATE
    identity_gate: float = IDENTITY_GATE
    shift_theta: float = 0.25
    lambda_grid: tuple = tuple(np.round(np.linspace(0.1, 10.0, 34), 10))
    law_n_paths: int = 40_000
    n_iter: int = 30
    iter_mass: float = 1.0
    iter_time: float = 1.0
    cond_lambda2: float = 1.0
    cond_u: float = 1.0
    cond_t_values: tuple = (10.0, 25.0, 50.0)
    ode_grid: Mapping | None = None

    @property
    def quad(self) -> QuadraticParams:
        return QuadraticParams(self.alpha, self.theta, self.x)

    @property
    def mechanisms(self) -> tuple[BranchingMechanism, ImmigrationMechanism]:
        if self.psi0 is not None:
            return self.psi0, self.phi if self.phi is not None else ImmigrationMechanism()
        q = self.quad
        return q.psi0, q.phi

    @property
    def grid(self) -> PathGrid:
        return PathGrid(self.dt, self.n_steps)

    def echo(self) -> dict:
        out = {}
        for k, v in self.__dict__.items():
            if isinstance(v, (BranchingMechanism, ImmigrationMechanism)):
                v = repr(v)
            out[k] = v
        return out


def _offset(offsets: Mapping | None, name: str) -> float:
    return 0.0 if not offsets else float(offsets.get(name, 0.0))


def _z_check(name, theory, est: MCEstimate, cfg: SuiteConfig, offsets=None, allowance=0.0) -> Check:
    return Check(name, theory + _offset(offsets, name), est.mean, est.stderr, "z", cfg.z_gate, allowance)


def _abs_check(name, theory, estimate, tol, offsets=None) -> Check:
    return Check(name, theory + _offset(offsets, name), estimate, 0.0, "abs", tol)


def _fmt(v: float) -> str:
    return format(v, "g")


# ---------------------------------------------------------------------------
# simulation cache
# ---------------------------------------------------------------------------


def simulate_for(cfg: SuiteConfig, psi0=None, phi=None, n_paths=None) -> PathEnsemble:
    m0, f = cfg.mechanisms
    psi0 = m0 if psi0 is None else psi0
    phi = f if phi is None else phi
    scheme = make_scheme(cfg.scheme, levels=cfg.levels, substeps=cfg.substeps, diffusion=cfg.diffusion)
    return simulate_multitype(psi0, phi, cfg.x, cfg.grid, cfg.n_types, RngSpec(cfg.seed),
                              cfg.n_paths if n_paths is None else n_paths, scheme,
                              workers=cfg.workers)


# ---------------------------------------------------------------------------
# suites
# ---------------------------------------------------------------------------


def verify_theorem_main(cfg: SuiteConfig, ensemble: PathEnsemble | None = None, offsets=None,
                        prefix: str = "theorem", psi0=None, phi=None) -> VerificationReport:
    """Laplace transform of the simulated total population against CB(psi0 - phi)."""
    m0, f = cfg.mechanisms
    psi0 = m0 if psi0 is None else psi0
    phi = f if phi is None else phi
    psi = subtract_immigration(psi0, phi)
    if not classify(psi).conservative:
        raise DomainError("psi0 - phi is not conservative")
    ens = simulate_for(cfg, psi0, phi) if ensemble is None else ensemble
    checks = []
    for t in cfg.t_values:
        for lam in cfg.lambdas:
            theory = math.exp(-cfg.x * solve_u(psi, t, lam))
            est = mc_laplace(ens, lam, t, "X")
            checks.append(_z_check(f"{prefix}.laplace_X[t={_fmt(t)},lambda={_fmt(lam)}]", theory, est,
                                   cfg, offsets))
    tail = ens.tail_diagnostic()
    checks.append(Check(f"{prefix}.truncation_tail", 0.0, tail, 0.0, "le", 1e-3))
    return VerificationReport(tuple(checks), cfg.echo(), cfg.seed)


def _ode_grid_checks(cfg: SuiteConfig, offsets=None) -> list:
    grid = dict(ACCEPTANCE_GRID)
    if cfg.ode_grid:
        grid.update({k: tuple(v) for k, v in cfg.ode_grid.items()})
    err0 = err1 = 0.0
    for a, th, l1, l2, t in itertools.product(grid["alpha"], grid["theta"], grid["lambda1"],
                                              grid["lambda2"], grid["t"]):
        q = QuadraticParams(a, th)
        w0, _ = solve_joint_pair(q.psi0, q.phi, t, l1, l2)
        err0 = max(err0, abs(w0 - v0(q, l1, l2, t)))
        w1 = solve_joint_two_times(q.psi0, q.phi, t / 2, t, l1, l2)
        err1 = max(err1, abs(w1 - v1(q, l1, l2, t / 2, t)))
    return [_abs_check("joint.ode_vs_closed.v0", 0.0, err0, cfg.abs_gate, offsets),
            _abs_check("joint.ode_vs_closed.v1", 0.0, err1, cfg.abs_gate, offsets)]


def verify_joint_law(cfg: SuiteConfig, ensemble: PathEnsemble | None = None, offsets=None,
                     ode_grid: bool = True) -> VerificationReport:
    q = cfg.quad
    ens = simulate_for(cfg) if ensemble is None else ensemble
    t, u = cfg.t, cfg.u
    checks = []
    for l1, l2 in cfg.pairs:
        tag = f"lambda1={_fmt(l1)},lambda2={_fmt(l2)}"
        est = mc_laplace(ens, (l1, l2), t, "pair")
        checks.append(_z_check(f"joint.v0[{tag},t={_fmt(t)}]", math.exp(-q.x * v0(q, l1, l2, t)), est,
                               cfg, offsets))
        est = mc_laplace(ens, (l1, l2), t, "pair", u=u)
        checks.append(_z_check(f"joint.v1[{tag},u={_fmt(u)},t={_fmt(t)}]",
                               math.exp(-q.x * v1(q, l1, l2, u, t)), est, cfg, offsets))
    if ode_grid:
        checks += _ode_grid_checks(cfg, offsets)
    return VerificationReport(tuple(checks), cfg.echo(), cfg.seed)


def verify_extinction_laws(cfg: SuiteConfig, ensemble: PathEnsemble | None = None,
                           offsets=None) -> VerificationReport:
    if not isinstance(make_scheme(cfg.scheme), ExactQuadratic):
        raise DomainError("extinction laws need the exact quadratic scheme")
    q = cfg.quad
    ens = simulate_for(cfg) if ensemble is None else ensemble
    if not isinstance(ens.scheme, ExactQuadratic):
        raise DomainError("extinction laws need the exact quadratic scheme")
    t, u, delta = cfg.t, cfg.u, cfg.delta
    i = ens.grid.index(t)
    pX0, pY0, cond = extinction_and_conditional(q, t)
    xt, yt = ens.X[:, i], ens.Y0[:, i]
    checks = [
        _z_check(f"extinction.P(X=0)[t={_fmt(t)}]", pX0, MCEstimate.from_samples(xt == 0), cfg, offsets),
        _z_check(f"extinction.P(Y0=0)[t={_fmt(t)}]", pY0, MCEstimate.from_samples(yt == 0), cfg, offsets),
    ]
    alive = xt > 0
    if alive.sum() >= 2:
        checks.append(_z_check(f"extinction.P(Y0>0|X>0)[t={_fmt(t)}]", cond,
                               MCEstimate.from_samples(yt[alive] > 0), cfg, offsets))
    tau_y, tau_x = extinction_times(ens)
    checks.append(_z_check(f"extinction.joint_cdf[u={_fmt(u)},t={_fmt(t)}]", joint_extinction_cdf(q, u, t),
                           MCEstimate.from_samples((tau_x <= t) & (tau_y <= u)), cfg, offsets))
    checks.append(Check("extinction.ordering_violations", 0.0, float(np.sum(tau_y > tau_x)), 0.0, "abs", 0.0))
    target = simultaneous_extinction(q, t)
    biases = []
    for d in (delta, delta / 2):
        bias = abs(simultaneous_bucket(q, t, d) - target)
        biases.append(bias)
        bucket = np.abs(ens.tau_x - t) <= d
        name = f"extinction.simultaneous[t={_fmt(t)},delta={_fmt(d)}]"
        if bucket.sum() < 2:
            checks.append(Check(name, target, math.nan, 0.0, "z", cfg.z_gate))
            continue
        est = MCEstimate.from_samples(ens.simultaneous[bucket])
        checks.append(_z_check(name, target, est, cfg, offsets, allowance=bias))
    ratio = biases[1] / biases[0] if biases[0] > 0 else 0.0
    checks.append(Check(f"extinction.bucket_bias_ratio[delta={_fmt(delta)}->{_fmt(delta / 2)}]",
                        0.5, ratio, 0.0, "le", 0.6))
    return VerificationReport(tuple(checks), cfg.echo(), cfg.seed)


def verify_shift_identities(m: BranchingMechanism, theta: float, lambda_grid, cfg: SuiteConfig | None = None,
                            law: bool | None = None, offsets=None) -> VerificationReport:
    """Shift/immigration identities on a lambda grid, plus the law-level check.

    The law-level check runs by default whenever the configured scheme can
    simulate ``m`` (the exact scheme needs a quadratic mechanism).
    """
    cfg = SuiteConfig() if cfg is None else cfg
    if law is None:
        law = not (m.levy and isinstance(make_scheme(cfg.scheme), ExactQuadratic))
    lam = np.asarray(lambda_grid, dtype=float)
    base = eval_psi(m, lam)
    down = shift(m, -theta)
    ph = phi_theta(m, theta)
    up = shift(m, theta)
    tph = tilde_phi_theta(m, theta)
    duality = np.max(np.abs(eval_psi(down, lam) - base + eval_phi(ph, lam)))
    tilde = np.max(np.abs(eval_psi(up, lam) - base - eval_phi(tph, lam)))
    direct = np.max(np.abs(eval_psi(up, lam) - (eval_psi(m, lam + theta) - eval_psi(m, theta))))
    tol = cfg.identity_gate
    checks = [_abs_check("shift.duality", 0.0, float(duality), tol, offsets),
              _abs_check("shift.tilde_phi", 0.0, float(tilde), tol, offsets),
              _abs_check("shift.T_theta", 0.0, float(direct), tol, offsets)]
    report = VerificationReport(tuple(checks), cfg.echo(), cfg.seed)
    if law:
        # the cascade with Eve mechanism m and immigration phi_theta is CB(T_{-theta}(m))
        law_cfg = replace(cfg, psi0=m, phi=ph, n_paths=cfg.law_n_paths)
        report = report.merge(verify_theorem_main(law_cfg, offsets=offsets, prefix="shift.corollary"))
    return report


def verify_iteration_convergence(psi0: BranchingMechanism, phi: ImmigrationMechanism,
                                 mu: FiniteMeasureOnR, n_iter: int = 30, tol: float = ABS_GATE,
                                 inject: tuple | None = None, offsets=None) -> VerificationReport:
    """Monotone convergence of the iterates w_k to the solution for psi0 - phi.

    ``inject=(k, amount)`` lowers w_k by ``amount`` (harness self-test).
    """
    ws = iterate_wk(psi0, phi, [mu] * (n_iter + 1), 0.0, with_limit=True)
    wbar = ws[-1]
    ws = ws[:-1]
    vals = np.array([w.values for w in ws])
    if inject is not None:
        k, amount = inject
        vals[k] = vals[k] - amount
    steps = np.diff(vals, axis=0)
    worst_drop = float(max(0.0, -steps.min())) if steps.size else 0.0
    overshoot = float(max(0.0, (vals - wbar.values).max()))
    gap = float(np.abs(vals[-1] - wbar.values).max())
    if inject is None:
        gap = max(gap, sup_gap(ws[-1], wbar))
    psi = subtract_immigration(psi0, phi)
    res = residual(psi0, ws[0], mu)
    for k in range(1, len(ws)):
        res = max(res, residual(psi0, ws[k], mu, (phi, ws[k - 1])))
    res = max(res, residual(psi, wbar, mu))
    checks = [
        _abs_check("iteration.monotone_violation", 0.0, worst_drop, 1e-10, offsets),
        _abs_check("iteration.upper_bound_violation", 0.0, overshoot, 1e-10, offsets),
        _abs_check(f"iteration.sup_gap[n={n_iter}]", 0.0, gap, tol, offsets),
        _abs_check("iteration.max_residual", 0.0, res, 10 * SOLVER_ATOL, offsets),
    ]
    return VerificationReport(tuple(checks), {"n_iter": n_iter, "tol": tol}, None)


def verify_conditional_limit(p: QuadraticParams, lambda2: float = 1.0, u: float = 1.0,
                             t_values=(10.0, 25.0, 50.0), tol: float = ABS_GATE,
                             offsets=None) -> VerificationReport:
    limit = cond_laplace_limit(p, lambda2, u)
    finite = [cond_laplace_finite(p, lambda2, u, t) for t in t_values]
    gaps = [abs(f - limit) for f in finite]
    checks = [_abs_check(f"conditional.finite[t={_fmt(t)}]", limit, f, math.inf, offsets)
              for t, f in zip(t_values, finite)]
    non_monotone = sum(1 for a, b in zip(gaps[:-1], gaps[1:]) if b > a)
    checks.append(Check("conditional.non_monotone_steps", 0.0, float(non_monotone), 0.0, "abs", 0.0))
    checks.append(_abs_check(f"conditional.final_gap[t={_fmt(t_values[-1])}]", limit, finite[-1], tol, offsets))
    return VerificationReport(tuple(checks), {"alpha": p.alpha, "theta": p.theta, "x": p.x,
                                              "lambda2": lambda2, "u": u}, None)


def run_suites(cfg: SuiteConfig, suites=SUITES, offsets=None) -> VerificationReport:
    """Run the named suites, sharing one simulated ensemble."""
    unknown = set(suites) - set(SUITES)
    if unknown:
        raise ValueError(f"unknown suites: {sorted(unknown)}")
    report = VerificationReport((), cfg.echo(), cfg.seed)
    ens = None
    if {"theorem", "joint", "extinction"} & set(suites):
        ens = simulate_for(cfg)
    for name in SUITES:
        if name not in suites:
            continue
        if name == "theorem":
            part = verify_theorem_main(cfg, ens, offsets)
        elif name == "joint":
            part = verify_joint_law(cfg, ens, offsets)
        elif name == "extinction":
            part = verify_extinction_laws(cfg, ens, offsets)
        elif name == "shift":
            m = cfg.psi0 if cfg.psi0 is not None else cfg.quad.psi
            part = verify_shift_identities(m, cfg.shift_theta, cfg.lambda_grid, cfg, offsets=offsets)
        elif name == "iteration":
            m0, f = cfg.mechanisms
            mu = FiniteMeasureOnR.dirac(cfg.iter_time, cfg.iter_mass)
            part = verify_iteration_convergence(m0, f, mu, cfg.n_iter, cfg.abs_gate, offsets=offsets)
        else:
            part = verify_conditional_limit(cfg.quad, cfg.cond_lambda2, cfg.cond_u, cfg.cond_t_values,
                                            cfg.abs_gate, offsets)
        report = report.merge(part)
    return report
