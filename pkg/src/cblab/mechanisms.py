"""Branching and immigration mechanisms.

A branching mechanism is

    psi(lam) = alpha*lam + beta*lam**2
               + int pi(dl) [exp(-lam*l) - 1 + lam*l*1{l <= 1}]

and an immigration mechanism is

    phi(lam) = alpha_bar*lam + int nu(dx) (1 - exp(-lam*x)).

Levy measures are finite sums of two kinds of components:

* ``Atom(location, mass)``;
* ``Density(c, gamma, rho, lower, rho_minus)`` with density
  ``c * l**(-1-gamma) * (exp(-rho*l) - exp(-rho_minus*l))`` on ``(lower, inf)``
  (``rho_minus = inf`` drops the second exponential).

``exp_density(c, rho)`` is ``Density(c, -1, rho)`` and ``stable_density(c, gamma)``
is ``Density(c, gamma)``.  The family is closed under exponential tilting,
which is what the shift operators and the immigration mechanisms derived
from them need.  Integrals have closed forms for atoms, exponential
densities and untempered stable densities; everything else goes through
adaptive Gauss-Kronrod quadrature split at ``l = 1``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import Iterable, Sequence, Union

import numpy as np
from scipy import integrate, optimize, special

QUAD_EPSABS = 1e-10
QUAD_EPSREL = 1e-10
QUAD_LIMIT = 200
_LOG_L_MAX = 690.0

# conservativity test when psi'(0+) = -inf
CONSERVATIVE_U_MIN = 1e-12
CONSERVATIVE_CUTOFF = 1e3
CONSERVATIVE_DECADE_RATIO = 0.5


class DomainError(ValueError):
    """Argument outside the domain of an operation."""


# ---------------------------------------------------------------------------
# Levy measure components
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Atom:
    location: float
    mass: float

    def __post_init__(self):
        if not (self.location > 0 and math.isfinite(self.location)):
            raise ValueError(f"atom location must be positive and finite, got {self.location}")
        if not math.isfinite(self.mass) or self.mass == 0:
            raise ValueError(f"atom mass must be finite and nonzero, got {self.mass}")


@dataclass(frozen=True)
class Density:
    """``c * l**(-1-gamma) * (exp(-rho*l) - exp(-rho_minus*l))`` on ``(lower, inf)``."""

    c: float
    gamma: float
    rho: float = 0.0
    lower: float = 0.0
    rho_minus: float = math.inf

    def __post_init__(self):
        if not math.isfinite(self.c) or self.c == 0:
            raise ValueError(f"density weight must be finite and nonzero, got {self.c}")
        if self.rho < 0 or not math.isfinite(self.rho):
            raise ValueError(f"rho must be finite and >= 0, got {self.rho}")
        if self.lower < 0 or not math.isfinite(self.lower):
            raise ValueError(f"lower must be finite and >= 0, got {self.lower}")
        if not self.rho_minus > self.rho:
            raise ValueError("rho_minus must exceed rho")

    @property
    def paired(self) -> bool:
        return math.isfinite(self.rho_minus)

    @property
    def is_exponential(self) -> bool:
        return self.gamma == -1.0

    @property
    def is_pure_stable(self) -> bool:
        return self.rho == 0.0 and self.lower == 0.0 and not self.paired

    def __call__(self, l):
        l = np.asarray(l, dtype=float)
        base = self.c * l ** (-1.0 - self.gamma) * np.exp(-self.rho * l)
        if self.paired:
            base = base * -np.expm1(-(self.rho_minus - self.rho) * l)
        return base

    def exp_terms(self):
        """(weight, rate) pairs of an exponential density."""
        terms = [(self.c, self.rho)]
        if self.paired:
            terms.append((-self.c, self.rho_minus))
        return terms


Component = Union[Atom, Density]


def exp_density(c: float, rho: float) -> Density:
    """``c * exp(-rho*l) dl``."""
    if c <= 0 or rho <= 0:
        raise ValueError("exponential density needs c > 0 and rho > 0")
    return Density(c, -1.0, rho)


def stable_density(c: float, gamma: float, lower: float = 0.0) -> Density:
    """``c * l**(-1-gamma) dl`` on ``(lower, inf)``."""
    if c <= 0:
        raise ValueError("stable density needs c > 0")
    return Density(c, gamma, 0.0, lower)


def atom(location: float, mass: float) -> Atom:
    if mass <= 0:
        raise ValueError("atom mass must be positive")
    return Atom(location, mass)


# ---------------------------------------------------------------------------
# elementary integrals
# ---------------------------------------------------------------------------


def _kernel_psi(x):
    """exp(-x) - 1 + x, accurate for small x."""
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 1e-3
    out = np.expm1(-x) + x
    xs = x[small] if out.ndim else x
    series = xs * xs * (0.5 - xs * (1.0 / 6.0 - xs * (1.0 / 24.0 - xs / 120.0)))
    if out.ndim:
        out[small] = series
        return out
    return series if small else out


def _exp_m0(a: float, lo: float, hi: float) -> float:
    """int_lo^hi exp(-a l) dl."""
    if hi <= lo:
        return 0.0
    if math.isinf(hi):
        if a <= 0:
            return math.inf
        return math.exp(-a * lo) / a
    if abs(a) * (hi - lo) < 1e-12:
        return (hi - lo) * math.exp(-a * lo)
    return math.exp(-a * lo) * -math.expm1(-a * (hi - lo)) / a


def _exp_m1(a: float, lo: float, hi: float) -> float:
    """int_lo^hi l exp(-a l) dl."""
    if hi <= lo:
        return 0.0
    if math.isinf(hi):
        if a <= 0:
            return math.inf
        return math.exp(-a * lo) * (a * lo + 1.0) / (a * a)
    if abs(a) * hi < 1e-6:
        # series in a
        return (hi**2 - lo**2) / 2 - a * (hi**3 - lo**3) / 3 + a * a * (hi**4 - lo**4) / 8

    def prim(l):
        return -math.exp(-a * l) * (a * l + 1.0) / (a * a)

    return prim(hi) - prim(lo)


def _quad(f, lo: float, hi: float, points: Sequence[float] = ()) -> float:
    """Adaptive quadrature on (lo, hi), split at interior points."""
    if hi <= lo:
        return 0.0
    cuts = sorted({p for p in points if lo < p < hi})
    edges = [lo, *cuts, hi]
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        val, _ = integrate.quad(f, a, b, epsabs=QUAD_EPSABS, epsrel=QUAD_EPSREL, limit=QUAD_LIMIT)
        total += val
    return total


def _quad_levy(f, lower: float, scale: float | None = None) -> float:
    """int_(lower, inf) f(l) dl for a Levy-type integrand.

    The piece below 1 is integrated directly, the tail in ``s = log l`` so that
    a kernel varying on the scale ``l ~ scale`` (typically ``1/lam``) is resolved
    however far out it sits.
    """
    total = 0.0
    if lower < 1:
        pts = [scale] if scale is not None and lower < scale < 1 else []
        total += _quad(f, lower, 1.0, pts)
    s0 = math.log(max(lower, 1.0))

    def g(s):
        l = math.exp(s)
        return f(l) * l

    if scale is None or math.log(scale) <= s0:
        pivot = s0
    else:
        pivot = math.log(scale)
        total += _quad(g, s0, pivot)
    # beyond l ~ 1e300 the remaining mass of any admissible component is negligible
    return total + _quad(g, pivot, _LOG_L_MAX, (pivot + 8.0, pivot + 40.0))


# ---------------------------------------------------------------------------
# per-component functionals of a Levy measure
# ---------------------------------------------------------------------------


def _psi_part(comp: Component, lam: float) -> float:
    """int comp(dl) [exp(-lam l) - 1 + lam l 1{l<=1}]."""
    if isinstance(comp, Atom):
        l = comp.location
        if l <= 1:
            return comp.mass * float(_kernel_psi(lam * l))
        return comp.mass * math.expm1(-lam * l)
    if comp.is_exponential:
        L = comp.lower
        total = 0.0
        for w, a in comp.exp_terms():
            # int_L^inf e^{-a l}(e^{-lam l} - 1) dl
            if L == 0:
                tail = -lam / (a * (a + lam))
            else:
                tail = math.exp(-a * L) * (a * math.expm1(-lam * L) - lam) / (a * (a + lam))
            total += w * (tail + lam * _exp_m1(a, L, max(L, 1.0)))
        return total
    if comp.is_pure_stable and 1 < comp.gamma < 2:
        g = comp.gamma
        return comp.c * special.gamma(-g) * lam**g - comp.c * lam / (g - 1)

    def f(l):
        k = _kernel_psi(lam * l) if l <= 1 else math.expm1(-lam * l)
        return float(comp(l)) * float(k)

    return _quad_levy(f, comp.lower, 1.0 / lam)


def _psi_prime_part(comp: Component, lam: float) -> float:
    """int comp(dl) l (1{l<=1} - exp(-lam l)), lam > 0."""
    if isinstance(comp, Atom):
        l = comp.location
        return comp.mass * l * ((1.0 if l <= 1 else 0.0) - math.exp(-lam * l))
    if comp.is_exponential:
        L = comp.lower
        total = 0.0
        for w, a in comp.exp_terms():
            if L < 1:
                # int_L^1 l (e^{-a l} - e^{-(a+lam) l}) - int_1^inf l e^{-(a+lam) l}
                total += w * (_exp_m1(a, L, 1.0) - _exp_m1(a + lam, L, math.inf))
            else:
                total += -w * _exp_m1(a + lam, L, math.inf)
        return total

    def f(l):
        ind = 1.0 if l <= 1 else 0.0
        if ind:
            k = -math.expm1(-lam * l)
        else:
            k = -math.exp(-lam * l)
        return float(comp(l)) * l * k

    return _quad_levy(f, comp.lower, 1.0 / lam)


def _phi_part(comp: Component, lam: float) -> float:
    """int comp(dx) (1 - exp(-lam x))."""
    if isinstance(comp, Atom):
        return comp.mass * -math.expm1(-lam * comp.location)
    if comp.is_exponential:
        L = comp.lower
        total = 0.0
        for w, a in comp.exp_terms():
            if L == 0:
                total += w * lam / (a * (a + lam))
            else:
                total += -w * math.exp(-a * L) * (a * math.expm1(-lam * L) - lam) / (a * (a + lam))
        return total
    if comp.is_pure_stable and 0 < comp.gamma < 1:
        return -comp.c * special.gamma(-comp.gamma) * lam**comp.gamma

    def f(x):
        return float(comp(x)) * -math.expm1(-lam * x)

    return _quad_levy(f, comp.lower, 1.0 / lam)


def _phi_prime_part(comp: Component, lam: float) -> float:
    """int comp(dx) x exp(-lam x), lam > 0."""
    if isinstance(comp, Atom):
        return comp.mass * comp.location * math.exp(-lam * comp.location)
    if comp.is_exponential:
        return sum(w * _exp_m1(a + lam, comp.lower, math.inf) for w, a in comp.exp_terms())

    def f(x):
        return float(comp(x)) * x * math.exp(-lam * x)

    return _quad_levy(f, comp.lower, 1.0 / lam)


def _moment_part(comp: Component, lo: float, hi: float) -> float:
    """int_{(lo, hi]} l comp(dl); may be +inf."""
    if isinstance(comp, Atom):
        return comp.mass * comp.location if lo < comp.location <= hi else 0.0
    lo = max(lo, comp.lower)
    if hi <= lo:
        return 0.0
    if comp.is_exponential:
        return sum(w * _exp_m1(a, lo, hi) for w, a in comp.exp_terms())
    g = comp.gamma
    if comp.rho == 0.0 and not comp.paired:
        if math.isinf(hi):
            return math.inf if g <= 1 else comp.c * lo ** (1 - g) / (g - 1)
        if lo == 0 and g >= 1:
            return math.inf
        if g == 1:
            return comp.c * math.log(hi / lo)
        return comp.c * (hi ** (1 - g) - lo ** (1 - g)) / (1 - g)
    if math.isinf(hi) and comp.rho == 0.0 and g <= 1:
        return math.inf
    if math.isinf(hi):
        return _quad(lambda l: float(comp(l)) * l, lo, max(lo, 1.0)) + _quad_levy(
            lambda l: float(comp(l)) * l, max(lo, 1.0))
    return _quad(lambda l: float(comp(l)) * l, lo, hi, (1.0,))


def _mass_part(comp: Component, lo: float, hi: float) -> float:
    """comp((lo, hi]); may be +inf."""
    if isinstance(comp, Atom):
        return comp.mass if lo < comp.location <= hi else 0.0
    lo = max(lo, comp.lower)
    if hi <= lo:
        return 0.0
    if comp.is_exponential:
        return sum(w * _exp_m0(a, lo, hi) for w, a in comp.exp_terms())
    g = comp.gamma
    if comp.rho == 0.0 and not comp.paired:
        if lo == 0 and g >= 0:
            return math.inf
        if math.isinf(hi):
            return math.inf if g <= 0 else comp.c * lo ** (-g) / g
        if g == 0:
            return comp.c * math.log(hi / lo)
        return comp.c * (lo ** (-g) - hi ** (-g)) / g
    if math.isinf(hi):
        return _quad(lambda l: float(comp(l)), lo, max(lo, 1.0)) + _quad_levy(
            lambda l: float(comp(l)), max(lo, 1.0))
    return _quad(lambda l: float(comp(l)), lo, hi, (1.0,))


def _shift_drift_part(comp: Component, theta: float) -> float:
    """int_{(0,1]} l (1 - exp(-theta l)) comp(dl)."""
    if isinstance(comp, Atom):
        l = comp.location
        return comp.mass * l * -math.expm1(-theta * l) if l <= 1 else 0.0
    if comp.lower >= 1:
        return 0.0
    if comp.is_exponential:
        return sum(
            w * (_exp_m1(a, comp.lower, 1.0) - _exp_m1(a + theta, comp.lower, 1.0))
            for w, a in comp.exp_terms()
        )
    return _quad(lambda l: float(comp(l)) * l * -math.expm1(-theta * l), comp.lower, 1.0)


# ---------------------------------------------------------------------------
# Levy measure operations
# ---------------------------------------------------------------------------


def _tilt(comp: Component, theta: float) -> Component:
    """exp(-theta l) comp(dl)."""
    if isinstance(comp, Atom):
        return Atom(comp.location, comp.mass * math.exp(-theta * comp.location))
    return replace(comp, rho=comp.rho + theta, rho_minus=comp.rho_minus + theta)


def _check_branching_component(comp: Component) -> None:
    if isinstance(comp, Atom):
        return
    g = comp.gamma
    if comp.lower == 0:
        bound = 3.0 if comp.paired else 2.0
        if not g < bound:
            raise ValueError(f"int (1 ^ l^2) pi(dl) diverges at 0 for gamma={g}")
    if comp.rho == 0 and not g > 0:
        raise ValueError(f"pi((1, inf)) is infinite for gamma={g}, rho=0")


def _check_immigration_component(comp: Component) -> None:
    if isinstance(comp, Atom):
        return
    g = comp.gamma
    if comp.lower == 0:
        bound = 2.0 if comp.paired else 1.0
        if not g < bound:
            raise ValueError(f"int (1 ^ x) nu(dx) diverges at 0 for gamma={g}")
    if comp.rho == 0 and not g > 0:
        raise ValueError(f"nu((1, inf)) is infinite for gamma={g}, rho=0")


# ---------------------------------------------------------------------------
# mechanisms
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BranchingMechanism:
    alpha: float
    beta: float = 0.0
    levy: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "levy", tuple(self.levy))
        if not self.beta >= 0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        for comp in self.levy:
            _check_branching_component(comp)

    def __call__(self, lam):
        return eval_psi(self, lam)

    @property
    def is_quadratic(self) -> bool:
        return not self.levy


@dataclass(frozen=True)
class ImmigrationMechanism:
    alpha_bar: float = 0.0
    nu: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "nu", tuple(self.nu))
        if not self.alpha_bar >= 0:
            raise ValueError(f"alpha_bar must be >= 0, got {self.alpha_bar}")
        for comp in self.nu:
            _check_immigration_component(comp)

    def __call__(self, lam):
        return eval_phi(self, lam)

    @property
    def is_zero(self) -> bool:
        return self.alpha_bar == 0 and not self.nu


class Criticality(str, enum.Enum):
    CRITICAL = "critical"
    SUBCRITICAL = "subcritical"
    SUPERCRITICAL = "supercritical"


@dataclass(frozen=True)
class MechanismClass:
    kind: Criticality
    conservative: bool
    psi_prime_0: float
    numerical: bool = False


def quadratic(alpha: float, beta: float = 1.0) -> BranchingMechanism:
    return BranchingMechanism(alpha, beta)


def _check_lambda(lam: float) -> float:
    lam = float(lam)
    if lam < 0 or math.isnan(lam):
        raise DomainError(f"lambda must be >= 0, got {lam}")
    return lam


def _scalar_or_array(fn, lam):
    if np.ndim(lam) == 0:
        return fn(_check_lambda(lam))
    arr = np.asarray(lam, dtype=float)
    return np.array([fn(_check_lambda(v)) for v in arr.ravel()]).reshape(arr.shape)


def eval_psi(m: BranchingMechanism, lam):
    def one(x):
        if x == 0:
            return 0.0
        return m.alpha * x + m.beta * x * x + sum(_psi_part(c, x) for c in m.levy)

    return _scalar_or_array(one, lam)


def eval_psi_prime(m: BranchingMechanism, lam):
    """psi'(lam) for lam > 0; at lam = 0 returns psi'(0+)."""

    def one(x):
        if x == 0:
            return psi_prime_at_zero(m)
        return m.alpha + 2 * m.beta * x + sum(_psi_prime_part(c, x) for c in m.levy)

    return _scalar_or_array(one, lam)


def eval_phi(f: ImmigrationMechanism, lam):
    def one(x):
        if x == 0:
            return 0.0
        return f.alpha_bar * x + sum(_phi_part(c, x) for c in f.nu)

    return _scalar_or_array(one, lam)


def eval_phi_prime(f: ImmigrationMechanism, lam):
    def one(x):
        if x == 0:
            return f.alpha_bar + sum(_moment_part(c, 0.0, math.inf) for c in f.nu)
        return f.alpha_bar + sum(_phi_prime_part(c, x) for c in f.nu)

    return _scalar_or_array(one, lam)


def psi_prime_at_zero(m: BranchingMechanism) -> float:
    """alpha - int_(1,inf) l pi(dl), or -inf when the tail moment diverges."""
    tail = sum(_moment_part(c, 1.0, math.inf) for c in m.levy)
    if math.isinf(tail):
        return -math.inf
    return m.alpha - tail


def levy_mass(levy: Iterable[Component], lo: float, hi: float = math.inf) -> float:
    return sum(_mass_part(c, lo, hi) for c in levy)


def levy_moment(levy: Iterable[Component], lo: float, hi: float = math.inf) -> float:
    return sum(_moment_part(c, lo, hi) for c in levy)


def levy_density(levy: Iterable[Component]):
    """Vectorized total density of the absolutely continuous part."""
    dens = [c for c in levy if isinstance(c, Density)]

    def f(l):
        l = np.asarray(l, dtype=float)
        out = np.zeros_like(l)
        for c in dens:
            out = out + np.where(l > c.lower, c(np.maximum(l, 1e-300)), 0.0)
        return out

    return f


def positive_root(m: BranchingMechanism) -> float | None:
    """Largest root of psi in (0, inf), None if psi has no positive root."""
    d0 = psi_prime_at_zero(m)
    if d0 >= 0:
        return None
    hi = 1.0
    for _ in range(200):
        if eval_psi(m, hi) > 0:
            break
        hi *= 2.0
    else:
        return None
    lo = hi / 2.0
    while lo > 1e-300 and eval_psi(m, lo) > 0:
        lo /= 2.0
    if eval_psi(m, lo) > 0:
        return None
    return optimize.brentq(lambda v: eval_psi(m, v), lo, hi, xtol=1e-15, rtol=1e-14)


def _decide_conservative(m: BranchingMechanism) -> bool:
    root = positive_root(m)
    eps = 1.0 if root is None else min(1.0, root / 2.0)
    top = math.floor(math.log10(eps))
    edges = [eps] + [10.0**k for k in range(top, -13, -1) if 10.0**k < eps]
    edges = [e for e in edges if e >= CONSERVATIVE_U_MIN]
    if edges[-1] > CONSERVATIVE_U_MIN:
        edges.append(CONSERVATIVE_U_MIN)
    pieces = []
    for hi, lo in zip(edges[:-1], edges[1:]):
        val, _ = integrate.quad(lambda u: 1.0 / abs(eval_psi(m, u)), lo, hi, epsrel=1e-8, limit=100)
        pieces.append(val)
    total = sum(pieces)
    if total >= CONSERVATIVE_CUTOFF:
        return True
    if len(pieces) >= 2 and pieces[-2] > 0:
        ratio = pieces[-1] / pieces[-2]
        # decade contributions shrinking slower than geometrically: log-type divergence
        if ratio > CONSERVATIVE_DECADE_RATIO:
            return True
    return False


def classify(m: BranchingMechanism) -> MechanismClass:
    d0 = psi_prime_at_zero(m)
    if d0 == 0:
        kind = Criticality.CRITICAL
    elif d0 > 0:
        kind = Criticality.SUBCRITICAL
    else:
        kind = Criticality.SUPERCRITICAL
    if d0 > -math.inf:
        return MechanismClass(kind, True, d0)
    return MechanismClass(kind, _decide_conservative(m), d0, numerical=True)


def subtract_immigration(psi0: BranchingMechanism, phi: ImmigrationMechanism) -> BranchingMechanism:
    """Mechanism of psi0 - phi."""
    small = levy_moment(phi.nu, 0.0, 1.0)
    if not math.isfinite(small):
        raise ValueError("int_(0,1] l nu(dl) must be finite")
    return BranchingMechanism(psi0.alpha - phi.alpha_bar - small, psi0.beta, psi0.levy + phi.nu)


def theta_zero(m: BranchingMechanism) -> tuple[float, bool]:
    """(sup{theta >= 0: int_(1,inf) e^{theta l} pi(dl) < inf}, boundary admissible)."""
    dens = [c for c in m.levy if isinstance(c, Density)]
    if not dens:
        return math.inf, True
    theta0 = min(c.rho for c in dens)
    # at the boundary the tilted tail is c l^{-1-gamma}, integrable iff gamma > 0
    closed = all(c.gamma > 0 for c in dens if c.rho == theta0)
    return theta0, closed


def _check_theta_admissible(m: BranchingMechanism, theta: float) -> None:
    theta0, closed = theta_zero(m)
    if theta > theta0 or (theta == theta0 and not closed):
        raise DomainError(f"theta={theta} outside Theta=(0, {theta0}{']' if closed else ')'}")


def shift(m: BranchingMechanism, theta: float) -> BranchingMechanism:
    """Mechanism of T_theta(psi) = psi(theta + .) - psi(theta)."""
    if theta == 0:
        return m
    if theta < 0:
        _check_theta_admissible(m, -theta)
    drift = m.alpha + 2 * m.beta * theta + sum(_shift_drift_part(c, theta) for c in m.levy)
    return BranchingMechanism(drift, m.beta, tuple(_tilt(c, theta) for c in m.levy))


def phi_theta(m: BranchingMechanism, theta: float) -> ImmigrationMechanism:
    """(e^{theta x} - 1) pi(dx) with drift 2 beta theta, so that T_{-theta}(psi) = psi - phi_theta."""
    if not theta > 0:
        raise DomainError("theta must be > 0")
    _check_theta_admissible(m, theta)
    nu = []
    for c in m.levy:
        if isinstance(c, Atom):
            nu.append(Atom(c.location, c.mass * math.expm1(theta * c.location)))
            continue
        nu.append(Density(c.c, c.gamma, c.rho - theta, c.lower, c.rho))
        if c.paired:
            nu.append(Density(-c.c, c.gamma, c.rho_minus - theta, c.lower, c.rho_minus))
    return ImmigrationMechanism(2 * m.beta * theta, tuple(nu))


def tilde_phi_theta(m: BranchingMechanism, theta: float) -> ImmigrationMechanism:
    """(1 - e^{-theta x}) pi(dx) with drift 2 beta theta, so that T_theta(psi) - psi = tilde_phi."""
    if not theta > 0:
        raise DomainError("theta must be > 0")
    nu = []
    for c in m.levy:
        if isinstance(c, Atom):
            nu.append(Atom(c.location, -c.mass * math.expm1(-theta * c.location)))
            continue
        nu.append(Density(c.c, c.gamma, c.rho, c.lower, c.rho + theta))
        if c.paired:
            nu.append(Density(-c.c, c.gamma, c.rho_minus, c.lower, c.rho_minus + theta))
    return ImmigrationMechanism(2 * m.beta * theta, tuple(nu))


ZERO_IMMIGRATION = ImmigrationMechanism()


# ---------------------------------------------------------------------------
# config blocks
# ---------------------------------------------------------------------------


_COMPONENT_KEYS = {
    "atom": ({"location", "mass"}, set()),
    "exp": ({"c", "rho"}, set()),
    "stable": ({"c", "gamma"}, {"lower"}),
    "density": ({"c", "gamma"}, {"rho", "lower", "rho_minus"}),
}


def _component_from_dict(d: dict) -> Component:
    d = dict(d)
    kind = d.pop("kind", None)
    if kind not in _COMPONENT_KEYS:
        raise ValueError(f"unknown levy component kind {kind!r}")
    required, optional = _COMPONENT_KEYS[kind]
    missing = required - set(d)
    if missing:
        raise ValueError(f"levy component {kind!r} missing keys {sorted(missing)}")
    unknown = set(d) - required - optional
    if unknown:
        raise ValueError(f"unknown keys for levy component {kind!r}: {sorted(unknown)}")
    d = {k: float(v) for k, v in d.items()}
    if kind == "atom":
        return atom(d["location"], d["mass"])
    if kind == "exp":
        return exp_density(d["c"], d["rho"])
    if kind == "stable":
        return stable_density(d["c"], d["gamma"], d.get("lower", 0.0))
    return Density(d["c"], d["gamma"], d.get("rho", 0.0), d.get("lower", 0.0),
                   d.get("rho_minus", math.inf))


def _component_to_dict(c: Component) -> dict:
    if isinstance(c, Atom):
        return {"kind": "atom", "location": c.location, "mass": c.mass}
    if c.is_exponential and not c.paired and c.lower == 0:
        return {"kind": "exp", "c": c.c, "rho": c.rho}
    if c.rho == 0 and not c.paired:
        out = {"kind": "stable", "c": c.c, "gamma": c.gamma}
        if c.lower:
            out["lower"] = c.lower
        return out
    return {"kind": "density", "c": c.c, "gamma": c.gamma, "rho": c.rho,
            "lower": c.lower, "rho_minus": c.rho_minus}


def branching_from_dict(d: dict) -> BranchingMechanism:
    unknown = set(d) - {"alpha", "beta", "levy"}
    if unknown:
        raise ValueError(f"unknown mechanism keys: {sorted(unknown)}")
    levy = tuple(_component_from_dict(c) for c in d.get("levy", []) or [])
    return BranchingMechanism(float(d.get("alpha", 0.0)), float(d.get("beta", 0.0)), levy)


def immigration_from_dict(d: dict) -> ImmigrationMechanism:
    unknown = set(d) - {"alpha_bar", "nu"}
    if unknown:
        raise ValueError(f"unknown immigration keys: {sorted(unknown)}")
    nu = tuple(_component_from_dict(c) for c in d.get("nu", []) or [])
    return ImmigrationMechanism(float(d.get("alpha_bar", 0.0)), nu)


def branching_to_dict(m: BranchingMechanism) -> dict:
    return {"alpha": m.alpha, "beta": m.beta, "levy": [_component_to_dict(c) for c in m.levy]}


def immigration_to_dict(f: ImmigrationMechanism) -> dict:
    return {"alpha_bar": f.alpha_bar, "nu": [_component_to_dict(c) for c in f.nu]}
