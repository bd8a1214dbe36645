"""Closed forms for the quadratic model.

The Eve population ``Y0`` branches with ``psi0(u) = b*u + u**2``, ``b = alpha + 2*theta``,
its mutant descendants immigrate at rate ``phi(u) = 2*theta*u`` and the
total population ``X`` is a CB with ``psi(u) = alpha*u + u**2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from scipy import integrate, special

from .mechanisms import BranchingMechanism, DomainError, ImmigrationMechanism

SERIES_CUTOFF = 1e-6
QUAD_EPSABS = 1e-12
QUAD_LIMIT = 64
# above this value of c*(1 + lambda1*t) the exp1 closed form loses digits to cancellation
_EXP1_MAX_ARG = 20.0
_G_DIFF_CUTOFF = 1e-2


@dataclass(frozen=True)
class QuadraticParams:
    alpha: float
    theta: float
    x: float = 1.0

    def __post_init__(self):
        if not self.alpha >= 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        if not self.theta >= 0:
            raise ValueError(f"theta must be >= 0, got {self.theta}")
        if not self.x >= 0:
            raise ValueError(f"x must be >= 0, got {self.x}")

    @property
    def b(self) -> float:
        return self.alpha + 2.0 * self.theta

    @property
    def psi(self) -> BranchingMechanism:
        return BranchingMechanism(self.alpha, 1.0)

    @property
    def psi0(self) -> BranchingMechanism:
        return BranchingMechanism(self.b, 1.0)

    @property
    def phi(self) -> ImmigrationMechanism:
        return ImmigrationMechanism(2.0 * self.theta)


def g_func(a: float, t: float) -> float:
    """(e^{a t} - 1)/a, continued by t at a = 0."""
    z = a * t
    if abs(z) < SERIES_CUTOFF:
        return t * (1.0 + z / 2.0 + z * z / 6.0)
    return math.expm1(z) / a


def dg_da(a: float, t: float) -> float:
    """Derivative of g in its first argument."""
    z = a * t
    if abs(z) < SERIES_CUTOFF:
        return t * t * (0.5 + z / 3.0 + z * z / 8.0)
    return (t * math.exp(z) * a - math.expm1(z)) / (a * a)


def _k(alpha: float, t: float) -> float:
    # e^{-alpha t} g(alpha, t) = (1 - e^{-alpha t})/alpha
    return g_func(-alpha, t)


def h_func(p: QuadraticParams, lambda1: float, t: float) -> float:
    return 1.0 + lambda1 * _k(p.alpha, t)


def w_star(p: QuadraticParams, lambda1: float, t: float, s: float = 0.0) -> float:
    if s > t:
        raise DomainError("need s <= t")
    r = t - s
    return lambda1 * math.exp(-p.alpha * r) / h_func(p, lambda1, r)


def _weight_integral(p: QuadraticParams, lambda1: float, r0: float, r1: float) -> float:
    """int_{r0}^{r1} e^{-b r} h(r)^{-2} dr."""
    if r1 <= r0:
        return 0.0
    b = p.b
    if lambda1 == 0:
        if b == 0:
            return r1 - r0
        return math.exp(-b * r0) * (-math.expm1(-b * (r1 - r0))) / b
    if p.alpha == 0 and b > 0:
        c = b / lambda1
        s0, s1 = 1.0 + lambda1 * r0, 1.0 + lambda1 * r1
        if c * s1 <= _EXP1_MAX_ARG:
            def prim(s):
                return -math.exp(-c * (s - 1.0)) / s + c * math.exp(c) * special.exp1(c * s)

            return (prim(s1) - prim(s0)) / lambda1
    val, _ = integrate.quad(lambda r: math.exp(-b * r) / h_func(p, lambda1, r) ** 2, r0, r1,
                            epsabs=QUAD_EPSABS, epsrel=QUAD_EPSABS, limit=QUAD_LIMIT)
    return val


def _check_lambdas(lambda1, lambda2):
    if lambda1 < 0 or lambda2 < 0:
        raise DomainError("lambdas must be >= 0")


def v0(p: QuadraticParams, lambda1: float, lambda2: float, t: float) -> float:
    """E[exp(-lambda1 X_t - lambda2 Y0_t)] = exp(-x v0)."""
    _check_lambdas(lambda1, lambda2)
    if t < 0:
        raise DomainError("t must be >= 0")
    marginal = w_star(p, lambda1, t)
    if lambda2 == 0:
        return marginal
    inv = 0.0 if math.isinf(lambda2) else 1.0 / lambda2
    denom = inv + _weight_integral(p, lambda1, 0.0, t)
    if denom == 0:
        return math.inf
    first = math.exp(-p.b * t) / h_func(p, lambda1, t) ** 2 / denom
    return first + marginal


def v1(p: QuadraticParams, lambda1: float, lambda2: float, u: float, t: float) -> float:
    """E[exp(-lambda1 X_t - lambda2 Y0_u)] = exp(-x v1), 0 <= u < t."""
    _check_lambdas(lambda1, lambda2)
    if not 0 <= u < t:
        raise DomainError(f"need 0 <= u < t, got u={u}, t={t}")
    marginal = w_star(p, lambda1, t)
    if lambda2 == 0:
        return marginal
    b = p.b
    lead = 0.0
    if not math.isinf(lambda2):
        lead = math.exp(-b * (t - u)) / h_func(p, lambda1, t - u) ** 2 / lambda2
    denom = lead + _weight_integral(p, lambda1, t - u, t)
    if denom == 0:
        return math.inf
    first = math.exp(-b * t) / h_func(p, lambda1, t) ** 2 / denom
    return first + marginal


def extinction_and_conditional(p: QuadraticParams, t: float) -> tuple[float, float, float]:
    """(P(X_t = 0), P(Y0_t = 0), P(Y0_t > 0 | X_t > 0))."""
    if t < 0:
        raise DomainError("t must be >= 0")
    if p.x == 0:
        return 1.0, 1.0, 1.0
    if t == 0:
        return 0.0, 0.0, 1.0
    ax = p.x / g_func(p.alpha, t)
    ay = p.x / g_func(p.b, t)
    return math.exp(-ax), math.exp(-ay), math.expm1(-ay) / math.expm1(-ax)


def joint_extinction_cdf(p: QuadraticParams, u: float, t: float) -> float:
    """P(tau_X <= t, tau_Y0 <= u) for 0 <= u <= t."""
    if u > t:
        raise DomainError(f"need u <= t, got u={u}, t={t}")
    if u < 0:
        raise DomainError("u must be >= 0")
    if p.x == 0:
        return 1.0
    if t == 0 or u == 0:
        return 0.0
    tail = 1.0 / g_func(p.alpha, t)
    if u == t:
        return math.exp(-p.x * tail)
    a, c = p.alpha, 2.0 * p.alpha - p.b
    val, _ = integrate.quad(lambda r: math.exp(c * r) / g_func(a, r) ** 2, t - u, t,
                            epsabs=0.0, epsrel=1e-13, limit=200)
    first = math.exp(c * t) / g_func(a, t) ** 2 / val
    return math.exp(-p.x * (first + tail))


def simultaneous_extinction(p: QuadraticParams, t: float) -> float:
    """P(tau_Y0 = tau_X | tau_X = t)."""
    if t < 0:
        raise DomainError("t must be >= 0")
    return math.exp(-2.0 * p.theta * t)


def _A(p: QuadraticParams, lambda2: float, u: float) -> float:
    return math.exp(p.b * u) / lambda2 + g_func(p.b, u)


def _G(p: QuadraticParams, lambda2: float, u: float) -> float:
    a, b = p.alpha, p.b
    first = 2.0 / lambda2 * math.exp(b * u) * g_func(a, u)
    if a == 0:
        return first + 2.0 * dg_da(b, u)
    if a * u < _G_DIFF_CUTOFF:
        # (g(b+a,u) - g(b,u))/a = int_0^u e^{bs} g(a,s) ds, free of cancellation
        val, _ = integrate.quad(lambda s: math.exp(b * s) * g_func(a, s), 0.0, u,
                                epsabs=0.0, epsrel=1e-13, limit=100)
        return first + 2.0 * val
    return first + 2.0 * (g_func(b + a, u) - g_func(b, u)) / a


def cond_laplace_limit(p: QuadraticParams, lambda2: float, u: float) -> float:
    """lim_{t -> inf} E[exp(-lambda2 Y0_u) | X_t > 0]."""
    if lambda2 < 0 or u < 0:
        raise DomainError("need lambda2 >= 0 and u >= 0")
    if lambda2 == 0:
        return 1.0
    A = _A(p, lambda2, u)
    return math.exp(-p.x / A) * (1.0 - _G(p, lambda2, u) / A ** 2)


def cond_laplace_finite(p: QuadraticParams, lambda2: float, u: float, t: float) -> float:
    """E[exp(-lambda2 Y0_u) | X_t > 0] for u <= t.

    Written as the limit term times a correction so that the difference of two
    nearly equal probabilities is never formed explicitly.
    """
    if not 0 <= u <= t or t == 0:
        raise DomainError(f"need 0 <= u <= t and t > 0, got u={u}, t={t}")
    if lambda2 < 0:
        raise DomainError("lambda2 must be >= 0")
    if lambda2 == 0:
        return 1.0
    if p.x == 0:
        return 1.0
    a, b = p.alpha, p.b
    A = _A(p, lambda2, u)
    kt = _k(a, t)

    def eta(s):
        # (k_t / k_{t-s})**2 - 1
        kr = _k(a, t - s)
        return math.exp(-a * (t - s)) * _k(a, s) * (kt + kr) / kr ** 2

    E = math.exp(b * u) * eta(u) / lambda2
    if u > 0:
        val, _ = integrate.quad(lambda s: math.exp(b * s) * eta(s), 0.0, u,
                                epsabs=0.0, epsrel=1e-13, limit=200)
        E += val
    delta = -E / (A * (A + E)) + 1.0 / g_func(a, t)
    x = p.x
    return math.exp(-x / A) * (-math.expm1(-x * delta)) / (-math.expm1(-x / g_func(a, t)))


def extinction_density(p: QuadraticParams, s: float) -> float:
    """Density of tau_X at s > 0."""
    if s <= 0:
        return 0.0
    g = g_func(p.alpha, s)
    dg = math.exp(p.alpha * s)  # d/ds g(alpha, s)
    return math.exp(-p.x / g) * p.x * dg / (g * g)


def simultaneous_bucket(p: QuadraticParams, t: float, delta: float) -> float:
    """P(tau_Y0 = tau_X | |tau_X - t| <= delta), the bucketed version of the lemma."""
    if not 0 < delta < t:
        raise DomainError("need 0 < delta < t")
    lo, hi = t - delta, t + delta
    num, _ = integrate.quad(lambda s: math.exp(-2.0 * p.theta * s) * extinction_density(p, s), lo, hi,
                            epsabs=0.0, epsrel=1e-12)
    den = math.exp(-p.x / g_func(p.alpha, hi)) - math.exp(-p.x / g_func(p.alpha, lo))
    return num / den
