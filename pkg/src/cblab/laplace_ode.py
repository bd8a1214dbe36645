"""Backward integration of Laplace-exponent equations.

Everything here reduces to one engine: a vector ODE ``y' = F(s, y)``
integrated from the top of the support of a finite measure down to a
requested time, with exact upward jumps at atom locations.  The scalar
cumulant ``u(t, lam)`` is integrated forward in time instead.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate, optimize

from .mechanisms import (
    BranchingMechanism,
    Criticality,
    DomainError,
    ImmigrationMechanism,
    classify,
    eval_phi,
    eval_phi_prime,
    eval_psi,
    eval_psi_prime,
    positive_root,
    psi_prime_at_zero,
    subtract_immigration,
)

SOLVER_RTOL = 1e-10
SOLVER_ATOL = 1e-10
# grid resolution of returned GridFunctions: keeps the end-corrected trapezoid
# residual quadrature (error ~ h^4) well below the solver tolerance
MAX_STEP = 0.005
# log-space integration of u kicks in above this multiple of the root scale
LOG_SPACE_FACTOR = 10.0
_LOG_OVERFLOW = 700.0


class BlowUpError(ArithmeticError):
    def __init__(self, time: float, message: str):
        super().__init__(message)
        self.time = time


# ---------------------------------------------------------------------------
# measures and grid functions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FiniteMeasureOnR:
    """Atoms ``(location, mass)`` plus constant densities ``(a, b, rate)`` on ``[a, b)``."""

    atoms: tuple = ()
    densities: tuple = ()

    def __post_init__(self):
        atoms = tuple((float(l), float(m)) for l, m in self.atoms)
        dens = tuple((float(a), float(b), float(r)) for a, b, r in self.densities)
        for l, m in atoms:
            if not math.isfinite(l):
                raise DomainError("support must be bounded above")
            if not m > 0:
                raise ValueError(f"atom mass must be > 0, got {m}")
        for a, b, r in dens:
            if not (math.isfinite(a) and math.isfinite(b)):
                raise DomainError("density intervals must be finite")
            if not a < b:
                raise ValueError(f"empty density interval [{a}, {b})")
            if not r >= 0:
                raise ValueError(f"density rate must be >= 0, got {r}")
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "densities", dens)

    @classmethod
    def dirac(cls, location: float, mass: float) -> "FiniteMeasureOnR":
        """``mass * delta_location``; zero mass gives the zero measure."""
        return cls(((location, mass),)) if mass > 0 else cls()

    @property
    def H(self) -> float:
        tops = [l for l, _ in self.atoms] + [b for _, b, r in self.densities if r > 0]
        return max(tops) if tops else -math.inf

    @property
    def has_top_atom(self) -> bool:
        H = self.H
        return any(l == H for l, _ in self.atoms)

    @property
    def is_zero(self) -> bool:
        return self.H == -math.inf

    def total_mass(self) -> float:
        return sum(m for _, m in self.atoms) + sum((b - a) * r for a, b, r in self.densities)

    def tail_mass(self, s: float) -> float:
        """mu([s, inf))."""
        out = sum(m for l, m in self.atoms if l >= s)
        for a, b, r in self.densities:
            out += r * max(0.0, b - max(a, s))
        return out

    def density(self, s: float) -> float:
        return sum(r for a, b, r in self.densities if a <= s < b)

    def atom_masses(self) -> dict:
        out: dict = {}
        for l, m in self.atoms:
            out[l] = out.get(l, 0.0) + m
        return out

    def breakpoints(self) -> list:
        pts = {l for l, _ in self.atoms}
        for a, b, _ in self.densities:
            pts.update((a, b))
        return sorted(pts)


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Function sampled on a strictly increasing grid.

    ``values`` are left-continuous values at the nodes; ``right_values``
    differ from them only where the function jumps.  ``slopes`` and
    ``right_slopes`` are the one-sided derivatives, used for Hermite
    interpolation and for the residual quadrature.  Beyond the last node
    the function equals ``right_value``.
    """

    grid: np.ndarray
    values: np.ndarray
    right_values: np.ndarray | None = None
    slopes: np.ndarray | None = None
    right_slopes: np.ndarray | None = None
    solver_tol: float = 0.0
    right_value: float = 0.0

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if grid.ndim != 1 or grid.shape != values.shape or grid.size == 0:
            raise ValueError("grid and values must be equal-length non-empty 1-d arrays")
        if np.any(np.diff(grid) <= 0):
            raise ValueError("grid must be strictly increasing")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)
        rv = values.copy() if self.right_values is None else np.asarray(self.right_values, float)
        object.__setattr__(self, "right_values", rv)
        for name in ("slopes", "right_slopes"):
            arr = getattr(self, name)
            if arr is not None:
                object.__setattr__(self, name, np.asarray(arr, dtype=float))
        if self.right_slopes is None and self.slopes is not None:
            object.__setattr__(self, "right_slopes", self.slopes.copy())

    @classmethod
    def constant(cls, value: float, start: float = 0.0, stop: float = 1.0) -> "GridFunction":
        return cls(np.array([start, stop]), np.array([value, value]),
                   slopes=np.zeros(2), right_value=value)

    def __call__(self, s, kind: str = "linear"):
        if np.ndim(s) == 0:
            return self._eval(float(s), kind)
        arr = np.asarray(s, dtype=float)
        return np.array([self._eval(v, kind) for v in arr.ravel()]).reshape(arr.shape)

    def _eval(self, s: float, kind: str) -> float:
        g = self.grid
        if s > g[-1]:
            return float(self.right_value)
        if s < g[0]:
            raise DomainError(f"s={s} below grid start {g[0]}")
        i = int(np.searchsorted(g, s, side="left"))
        if g[i] == s:
            return float(self.values[i])
        a, b = g[i - 1], g[i]
        ya, yb = self.right_values[i - 1], self.values[i]
        x = (s - a) / (b - a)
        if kind == "linear" or self.slopes is None:
            return float(ya + x * (yb - ya))
        if kind != "hermite":
            raise ValueError(f"unknown interpolation {kind!r}")
        h = b - a
        da, db = self.right_slopes[i - 1] * h, self.slopes[i] * h
        h00 = (1 + 2 * x) * (1 - x) ** 2
        h10 = x * (1 - x) ** 2
        h01 = x * x * (3 - 2 * x)
        h11 = x * x * (x - 1)
        return float(h00 * ya + h10 * da + h01 * yb + h11 * db)

    def to_csv(self, dest=None) -> str:
        buf = io.StringIO(newline="")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["s", "value"])
        for s, v in zip(self.grid, self.values):
            w.writerow([format(s, ".17g"), format(v, ".17g")])
        text = buf.getvalue()
        if dest is not None:
            with open(dest, "w", newline="") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, src) -> "GridFunction":
        text = src if "\n" in str(src) else open(src, newline="").read()
        rows = list(csv.reader(io.StringIO(text)))
        if rows[0] != ["s", "value"]:
            raise ValueError(f"unexpected header {rows[0]}")
        data = np.array([[float(a), float(b)] for a, b in rows[1:]])
        return cls(data[:, 0], data[:, 1])


def sup_gap(a: GridFunction, b: GridFunction, lo: float | None = None) -> float:
    """sup |a - b| over the union of both grids (Hermite interpolation)."""
    pts = np.union1d(a.grid, b.grid)
    start = max(a.grid[0], b.grid[0]) if lo is None else lo
    pts = pts[pts >= start]
    return float(np.max(np.abs(a(pts, "hermite") - b(pts, "hermite"))))


# ---------------------------------------------------------------------------
# fast evaluators
# ---------------------------------------------------------------------------


def _psi_vec(m: BranchingMechanism) -> Callable:
    if not m.levy:
        a, b = m.alpha, m.beta
        return lambda w: a * w + b * w * w
    return lambda w: np.asarray(eval_psi(m, w), dtype=float)


def _phi_vec(f: ImmigrationMechanism) -> Callable:
    if not f.nu:
        ab = f.alpha_bar
        return lambda w: ab * w
    return lambda w: np.asarray(eval_phi(f, w), dtype=float)


def _require_conservative(psi: BranchingMechanism) -> None:
    if not classify(psi).conservative:
        raise DomainError("mechanism is not conservative")


def _require_unique(psi: BranchingMechanism, mus: Sequence[FiniteMeasureOnR]) -> None:
    if psi_prime_at_zero(psi) > -math.inf:
        return
    for mu in mus:
        if not mu.is_zero and not mu.has_top_atom:
            raise DomainError(
                "psi'(0+) = -inf and the measure has no atom at the top of its support: "
                "the solution need not be unique")


# ---------------------------------------------------------------------------
# backward engine
# ---------------------------------------------------------------------------


@dataclass
class _Trace:
    grid: list = field(default_factory=list)
    values: list = field(default_factory=list)
    right_values: list = field(default_factory=list)
    slopes: list = field(default_factory=list)
    right_slopes: list = field(default_factory=list)


def _backward(rhs_factory, dim: int, top: float, s_end: float, jumps: dict, breaks,
              rtol: float = SOLVER_RTOL, atol: float = SOLVER_ATOL, max_step: float = MAX_STEP):
    """Integrate from ``top`` down to ``s_end``.

    ``rhs_factory(mid)`` returns ``f(s, y)`` valid on the open segment
    containing ``mid``.  ``jumps`` maps locations to increments applied
    when the integration reaches them (the function is left-continuous).
    Returns arrays in increasing order of s.
    """
    zero = np.zeros(dim)
    y = zero + np.asarray(jumps.get(top, zero), dtype=float)
    knots = sorted({p for p in breaks if s_end < p < top} | {s_end}, reverse=True)
    # records built top-down, reversed at the end
    tr = _Trace()
    hi = top
    f_hi = None
    tr.grid.append(top)
    tr.values.append(y.copy())
    tr.right_values.append(zero.copy())
    tr.right_slopes.append(zero.copy())
    for lo in knots:
        if lo >= hi:
            continue
        f = rhs_factory(0.5 * (lo + hi))
        tr.slopes.append(np.asarray(f(hi, y), dtype=float))
        sol = integrate.solve_ivp(f, (hi, lo), y, method="RK45", rtol=rtol, atol=atol,
                                  max_step=max_step)
        if not sol.success:
            raise ArithmeticError(f"integration failed on [{lo}, {hi}]: {sol.message}")
        for k in range(1, sol.t.size - 1):
            yk = sol.y[:, k]
            dk = np.asarray(f(sol.t[k], yk), dtype=float)
            tr.grid.append(sol.t[k])
            tr.values.append(yk.copy())
            tr.right_values.append(yk.copy())
            tr.right_slopes.append(dk)
            tr.slopes.append(dk)
        y_right = sol.y[:, -1].copy()
        d_right = np.asarray(f(lo, y_right), dtype=float)
        y = y_right + np.asarray(jumps.get(lo, zero), dtype=float)
        tr.grid.append(lo)
        tr.values.append(y.copy())
        tr.right_values.append(y_right)
        tr.right_slopes.append(d_right)
        hi = lo
    # slope on the left of the bottom node: continue with the last segment's field
    if len(tr.grid) > 1:
        f = rhs_factory(0.5 * (tr.grid[-1] + tr.grid[-2]))
    else:
        f = rhs_factory(top - 1.0)
    tr.slopes.append(np.asarray(f(tr.grid[-1], y), dtype=float))
    grid = np.array(tr.grid[::-1])
    out = [np.array(getattr(tr, n)[::-1]).reshape(len(grid), dim)
           for n in ("values", "right_values", "slopes", "right_slopes")]
    return grid, out


def _split(grid, arrays, dim: int, tol: float) -> list:
    values, right_values, slopes, right_slopes = arrays
    return [GridFunction(grid, values[:, k], right_values[:, k], slopes[:, k], right_slopes[:, k],
                         solver_tol=tol) for k in range(dim)]


def _trivial(s: float, value: float = 0.0) -> GridFunction:
    return GridFunction(np.array([s]), np.array([value]), np.array([0.0]), np.zeros(1),
                        np.zeros(1), solver_tol=SOLVER_ATOL)


# ---------------------------------------------------------------------------
# u(t, lam)
# ---------------------------------------------------------------------------


def solve_u(psi: BranchingMechanism, t: float, lam: float,
            rtol: float = SOLVER_RTOL, atol: float = SOLVER_ATOL) -> float:
    """u(t, lam) from du/dt = -psi(u), u(0) = lam."""
    if t < 0 or lam < 0:
        raise DomainError("t and lambda must be >= 0")
    _require_conservative(psi)
    if lam == 0 or t == 0:
        return float(lam)
    f = _psi_vec(psi)
    cls = classify(psi)
    root = positive_root(psi) if cls.kind is Criticality.SUPERCRITICAL else None
    grows = cls.kind is Criticality.SUPERCRITICAL and (root is None or lam > LOG_SPACE_FACTOR * root)
    if not grows:
        sol = integrate.solve_ivp(lambda _, y: -f(np.maximum(y, 0.0)), (0.0, t), [lam],
                                  method="RK45", rtol=rtol, atol=atol)
        if not sol.success:
            raise ArithmeticError(sol.message)
        return max(float(sol.y[0, -1]), 0.0)

    # log-space: v = log u, dv/dt = -psi(u)/u
    def rhs(_, v):
        with np.errstate(over="ignore", invalid="ignore"):
            e = np.exp(np.minimum(v, _LOG_OVERFLOW + 5.0))
            return -f(e) / e

    def overflow(_, v):
        return _LOG_OVERFLOW - v[0]

    overflow.terminal = True
    sol = integrate.solve_ivp(rhs, (0.0, t), [math.log(lam)], method="RK45", rtol=rtol,
                              atol=atol * 1e-2, events=overflow)
    if sol.status == 1:
        t_fail = float(sol.t_events[0][0])
        raise BlowUpError(t_fail, f"u(t, {lam}) overflows at t = {t_fail:.6g}")
    if not sol.success:
        raise ArithmeticError(sol.message)
    return float(math.exp(sol.y[0, -1]))


def solve_u_inverse(psi: BranchingMechanism, t: float, lam: float) -> float:
    """u(t, lam) by root-finding on int_v^lam dr/psi(r) = t."""
    if t < 0 or not lam > 0:
        raise DomainError("need t >= 0 and lambda > 0")
    if t == 0:
        return float(lam)
    p_lam = eval_psi(psi, lam)
    if p_lam == 0:
        return float(lam)
    root = positive_root(psi)
    if root is not None and abs(root - lam) <= 1e-14 * lam:
        return float(lam)

    def F(v):
        val, _ = integrate.quad(lambda r: 1.0 / eval_psi(psi, r), v, lam,
                                epsabs=1e-13, epsrel=1e-12, limit=200)
        return val - t

    if p_lam > 0:
        floor = root if (root is not None and root < lam) else 0.0
        lo = floor + 0.5 * (lam - floor)
        for _ in range(2000):
            if F(lo) > 0:
                break
            lo = floor + 0.5 * (lo - floor)
            if lo == floor:
                raise ArithmeticError("no bracket found")
        return float(optimize.brentq(F, lo, lam, xtol=1e-15, rtol=1e-13))
    # psi(lam) < 0: u increases towards the next root (or without bound)
    ceil = root if (root is not None and root > lam) else math.inf
    hi = lam
    for _ in range(2000):
        hi = 2 * hi if math.isinf(ceil) else ceil - 0.5 * (ceil - hi)
        if F(hi) > 0:
            break
        if hi == ceil or math.isinf(hi):
            raise BlowUpError(t, "no bracket found before overflow")
    return float(optimize.brentq(F, lam, hi, xtol=1e-15, rtol=1e-13))


# ---------------------------------------------------------------------------
# w against a finite measure
# ---------------------------------------------------------------------------


def solve_w(psi: BranchingMechanism, mu: FiniteMeasureOnR, s: float = 0.0,
            max_step: float = MAX_STEP) -> GridFunction:
    """Solution of w(r) + int_r^inf psi(w) = mu([r, inf)) on [s, H]; evaluate with ``gf(s)``."""
    _require_conservative(psi)
    _require_unique(psi, [mu])
    H = mu.H
    if not math.isfinite(H) and H > 0:
        raise DomainError("support must be bounded above")
    if mu.is_zero or s > H:
        return _trivial(s)
    if s == H:
        return _trivial(s, mu.atom_masses().get(H, 0.0))
    f = _psi_vec(psi)
    jumps = {l: np.array([m]) for l, m in mu.atom_masses().items()}

    def factory(mid):
        d = mu.density(mid)
        return lambda r, y: f(np.maximum(y, 0.0)) - d

    grid, arrays = _backward(factory, 1, H, s, jumps, mu.breakpoints(), max_step=max_step)
    return _split(grid, arrays, 1, SOLVER_ATOL)[0]


def _rate_function(h) -> Callable:
    if isinstance(h, GridFunction) or callable(h):
        return h
    c = float(h)
    return lambda r: c


def cbi_laplace(psi: BranchingMechanism, phi: ImmigrationMechanism, h, mu: FiniteMeasureOnR,
                x: float, s: float = 0.0) -> float:
    """exp(-x w(s) - int_0^inf h(r) phi(w(s + r)) dr) for a CBI with immigration rate h.

    ``h`` may be a GridFunction, a callable or a constant.
    """
    if x < 0:
        raise DomainError("x must be >= 0")
    _require_conservative(psi)
    _require_unique(psi, [mu])
    if mu.is_zero or s > mu.H:
        return 1.0
    rate = _rate_function(h)
    f = _psi_vec(psi)
    g = _phi_vec(phi)
    jumps = {l: np.array([m, 0.0]) for l, m in mu.atom_masses().items()}
    breaks = list(mu.breakpoints())
    if isinstance(h, GridFunction):
        breaks += [s + r for r in h.grid]

    def factory(mid):
        d = mu.density(mid)

        def rhs(r, y):
            w = max(y[0], 0.0)
            return np.array([f(w) - d, -rate(r - s) * g(w)])

        return rhs

    grid, arrays = _backward(factory, 2, mu.H, s, jumps, breaks)
    w0, J0 = arrays[0][0]
    return math.exp(-x * w0 - J0)


# ---------------------------------------------------------------------------
# multitype iteration
# ---------------------------------------------------------------------------


def iterate_wk(psi0: BranchingMechanism, phi: ImmigrationMechanism,
               mus: Sequence[FiniteMeasureOnR], s: float = 0.0,
               with_limit: bool = False) -> list:
    """w_0..w_n on a shared grid, w_k driven by mu_{n-k} + phi(w_{k-1}).

    With ``with_limit`` the solution for ``psi0 - phi`` against ``mus[0]``
    is appended (the monotone limit when all measures coincide).
    """
    mus = list(mus)
    if not mus:
        raise ValueError("need at least one measure")
    n = len(mus) - 1
    _require_conservative(psi0)
    _require_unique(psi0, mus)
    drivers = [mus[n - k] for k in range(n + 1)]
    psi = None
    if with_limit:
        psi = subtract_immigration(psi0, phi)
        _require_conservative(psi)
        drivers.append(mus[0])
    dim = len(drivers)
    H = max(mu.H for mu in drivers)
    if not math.isfinite(H) or s >= H:
        if s == H:
            vals = [mu.atom_masses().get(H, 0.0) for mu in drivers]
            for k in range(1, n + 1):
                vals[k] = mus[n - k].atom_masses().get(H, 0.0)
            return [_trivial(s, v) for v in vals]
        return [_trivial(s) for _ in range(dim)]
    f0 = _psi_vec(psi0)
    g = _phi_vec(phi)
    f = _psi_vec(psi) if psi is not None else None
    jumps: dict = {}
    breaks = set()
    for k, mu in enumerate(drivers):
        for l, m in mu.atom_masses().items():
            jumps.setdefault(l, np.zeros(dim))[k] += m
        breaks.update(mu.breakpoints())

    def factory(mid):
        dens = np.array([mu.density(mid) for mu in drivers])

        def rhs(r, y):
            y = np.maximum(y, 0.0)
            out = np.empty(dim)
            out[: n + 1] = f0(y[: n + 1])
            if n > 0:
                out[1: n + 1] -= g(y[:n])
            if psi is not None:
                out[n + 1] = f(y[n + 1: n + 2])[0]
            return out - dens

        return rhs

    grid, arrays = _backward(factory, dim, H, s, jumps, breaks)
    return _split(grid, arrays, dim, SOLVER_ATOL)


def iteration_gaps(ws: Sequence[GridFunction]) -> list:
    """sup-norm gaps between consecutive iterates."""
    return [sup_gap(b, a) for a, b in zip(ws[:-1], ws[1:])]


# ---------------------------------------------------------------------------
# coupled (w, w*) systems
# ---------------------------------------------------------------------------


def _pair_system(psi0, phi, t, y_top, jump_at=None, jump=0.0, max_step=math.inf):
    psi = subtract_immigration(psi0, phi)
    _require_conservative(psi)
    f0, g, f = _psi_vec(psi0), _phi_vec(phi), _psi_vec(psi)

    def factory(_mid):
        def rhs(r, y):
            w, ws = max(y[0], 0.0), max(y[1], 0.0)
            return np.array([f0(w) - g(ws), f(ws)])

        return rhs

    jumps = {t: np.asarray(y_top, dtype=float)}
    breaks = []
    if jump_at is not None:
        jumps[jump_at] = jumps.get(jump_at, np.zeros(2)) + np.array([jump, 0.0])
        breaks.append(jump_at)
    return _backward(factory, 2, t, 0.0, jumps, breaks, max_step=max_step)


def solve_joint_pair(psi0: BranchingMechanism, phi: ImmigrationMechanism, t: float,
                     lambda1: float, lambda2: float, full: bool = False):
    """(w(0), w*(0)) with E[exp(-lambda1 X_t - lambda2 Y0_t)] = exp(-x w(0)).

    Only the values at 0 are needed, so the step size is left to the
    error control; ``full=True`` returns both GridFunctions on a fine grid.
    """
    if t < 0 or lambda1 < 0 or lambda2 < 0:
        raise DomainError("t and lambdas must be >= 0")
    if t == 0:
        return (lambda1 + lambda2, float(lambda1))
    grid, arrays = _pair_system(psi0, phi, t, [lambda1 + lambda2, lambda1],
                                max_step=MAX_STEP if full else math.inf)
    if full:
        return _split(grid, arrays, 2, SOLVER_ATOL)
    w0, ws0 = arrays[0][0]
    return float(w0), float(ws0)


def solve_joint_two_times(psi0: BranchingMechanism, phi: ImmigrationMechanism, u: float, t: float,
                          lambda1: float, lambda2: float) -> float:
    """w(0) with E[exp(-lambda1 X_t - lambda2 Y0_u)] = exp(-x w(0)), 0 <= u < t."""
    if not 0 <= u < t:
        raise DomainError(f"need 0 <= u < t, got u={u}, t={t}")
    if lambda1 < 0 or lambda2 < 0:
        raise DomainError("lambdas must be >= 0")
    grid, arrays = _pair_system(psi0, phi, t, [lambda1, lambda1], jump_at=u, jump=lambda2)
    return float(arrays[0][0][0])


# ---------------------------------------------------------------------------
# residual
# ---------------------------------------------------------------------------


def residual(psi: BranchingMechanism, w: GridFunction, mu: FiniteMeasureOnR,
             source: tuple | None = None) -> float:
    """max_s |w(s) + int_s^H psi(w) - mu([s, inf)) - int_s^H phi(w_prev)|.

    ``source`` is an optional ``(phi, w_prev)`` pair; ``w_prev`` must share
    the grid of ``w``.  The integral uses the end-corrected trapezoid rule
    with the stored one-sided slopes (plain trapezoid when slopes are absent).
    """
    g = w.grid
    if g.size == 1:
        return abs(float(w.values[0]) - mu.tail_mass(g[0]))

    def integrand(vals, slopes):
        v = np.maximum(vals, 0.0)
        f = np.asarray(eval_psi(psi, v), dtype=float)
        if slopes is None:
            return f, None
        with np.errstate(invalid="ignore"):
            d = np.where(v > 0, np.asarray(eval_psi_prime(psi, np.where(v > 0, v, 1.0))) * slopes, 0.0)
        return f, d

    fl, dl = integrand(w.right_values[:-1], None if w.slopes is None else w.right_slopes[:-1])
    fr, dr = integrand(w.values[1:], None if w.slopes is None else w.slopes[1:])
    if source is not None:
        phi, prev = source
        if prev.grid.shape != g.shape or np.any(prev.grid != g):
            raise ValueError("source function must share the grid")

        def src(vals, slopes):
            v = np.maximum(vals, 0.0)
            f = np.asarray(eval_phi(phi, v), dtype=float)
            if slopes is None:
                return f, None
            return f, np.asarray(eval_phi_prime(phi, v)) * slopes

        sl, sdl = src(prev.right_values[:-1], None if prev.slopes is None else prev.right_slopes[:-1])
        sr, sdr = src(prev.values[1:], None if prev.slopes is None else prev.slopes[1:])
        fl, fr = fl - sl, fr - sr
        if dl is not None and sdl is not None:
            dl, dr = dl - sdl, dr - sdr
        else:
            dl = dr = None
    h = np.diff(g)
    pieces = 0.5 * h * (fl + fr)
    if dl is not None and dr is not None:
        pieces += h * h / 12.0 * (dl - dr)
    tail = np.concatenate([np.cumsum(pieces[::-1])[::-1], [0.0]])
    tails = np.array([mu.tail_mass(v) for v in g])
    return float(np.max(np.abs(w.values + tail - tails)))
