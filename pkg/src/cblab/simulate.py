"""Path simulation of CB processes and of the multitype immigration cascade.

Three schemes:

* ``ExactQuadratic``: exact transitions for psi(u) = alpha*u + beta*u**2.
  From mass z, the state after dt is ``beta*k*Gamma(N)`` with
  ``N ~ Poisson(z/(beta*g(alpha, dt)))`` and ``k = (1 - e^{-alpha dt})/alpha``.
  Immigration at constant rate c adds ``c/beta`` to the Gamma shape.
* ``EulerDiffusion``: Poisson large jumps on top of a continuous step; jumps
  below a threshold are dropped and their compensator folded into the drift.
  The continuous step is the exact Feller transition by default, or a
  truncated Gaussian Euler-Maruyama step.
* ``GaltonWatson``: linear birth-death particle system with mass unit
  ``1/levels``, stepped exactly between grid times.

Randomness comes in fixed blocks of paths; each block owns a Philox stream
keyed by ``(seed, tag, block)``, so a path depends only on the seed and its
index, whatever the number of workers.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .mechanisms import (
    Atom,
    BranchingMechanism,
    Density,
    DomainError,
    ImmigrationMechanism,
    classify,
    levy_density,
    levy_mass,
    levy_moment,
    subtract_immigration,
)
from .quadratic import g_func

BLOCK_SIZE = 4096
EULER_JUMP_THRESHOLD = 1e-4
STREAM_PATHS = 0
STREAM_RESOLVE = 1


# ---------------------------------------------------------------------------
# small value types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PathGrid:
    dt: float
    n_steps: int
    t0: float = 0.0

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be > 0, got {self.dt}")
        if self.n_steps < 0 or int(self.n_steps) != self.n_steps:
            raise ValueError("n_steps must be a non-negative integer")

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_steps + 1)

    @property
    def t_end(self) -> float:
        return self.t0 + self.dt * self.n_steps

    def index(self, t: float) -> int:
        k = (t - self.t0) / self.dt
        i = int(round(k))
        if abs(k - i) > 1e-9 or not 0 <= i <= self.n_steps:
            raise DomainError(f"t={t} is not a grid time")
        return i


@dataclass(frozen=True)
class RngSpec:
    seed: int
    block_size: int = BLOCK_SIZE

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must fit in 64 bits")

    def generator(self, tag: int, block: int) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.seed), spawn_key=(tag, block))
        return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class MCEstimate:
    mean: float
    stderr: float
    n_samples: int

    @classmethod
    def from_samples(cls, samples) -> "MCEstimate":
        s = np.asarray(samples, dtype=float)
        n = s.size
        if n < 2:
            raise ValueError("need at least two samples")
        return cls(float(s.mean()), float(s.std(ddof=1) / math.sqrt(n)), n)

    def z(self, target: float) -> float:
        diff = self.mean - target
        if self.stderr == 0:
            return 0.0 if diff == 0 else math.copysign(math.inf, diff)
        return diff / self.stderr


@dataclass(frozen=True)
class ExactQuadratic:
    substeps: int = 1
    name = "exact"


@dataclass(frozen=True)
class EulerDiffusion:
    """Jump-diffusion discretization.

    Jumps above ``threshold`` are compound Poisson, smaller ones are replaced
    by their compensator.  ``diffusion="feller"`` moves the continuous part
    (linear drift plus sqrt(2 beta Z) noise) with its exact transition and
    adds jumps and immigration on top; ``"gaussian"`` is the plain truncated
    step max(0, Z + drift dt + sqrt(2 beta Z dt) N + jumps), whose
    truncation inflates masses of order dt.

    Jump rates are frozen at the start of each step, so the scheme is first
    order in dt; supercritical mechanisms with heavy jumps need small steps.
    """

    threshold: float = EULER_JUMP_THRESHOLD
    diffusion: str = "feller"
    name = "euler"

    def __post_init__(self):
        if self.diffusion not in ("feller", "gaussian"):
            raise ValueError(f"unknown diffusion step {self.diffusion!r}")
        if not self.threshold > 0:
            raise ValueError("threshold must be > 0")


@dataclass(frozen=True)
class GaltonWatson:
    levels: int = 1000
    name = "gw"


def make_scheme(name: str, levels: int = 1000, substeps: int = 1, threshold: float = EULER_JUMP_THRESHOLD,
                diffusion: str = "feller"):
    key = name.lower().replace("_", "").replace("-", "")
    if key in ("exact", "exactquadratic"):
        return ExactQuadratic(substeps)
    if key in ("euler", "eulerdiffusion"):
        return EulerDiffusion(threshold, diffusion)
    if key in ("gw", "galtonwatson"):
        return GaltonWatson(levels)
    raise ValueError(f"unknown scheme {name!r}")


@dataclass(frozen=True, eq=False)
class PathEnsemble:
    """Simulated paths; ``X`` and ``Y0`` have shape (n_paths, n_steps + 1).

    ``types`` holds every component (n_types + 1, n_paths, n_steps + 1) when
    kept.  ``tau_x`` and ``simultaneous`` come from the within-step extinction
    resolution of the exact scheme (``None`` otherwise).
    """

    grid: PathGrid
    X: np.ndarray
    Y0: np.ndarray
    type_means: np.ndarray
    rng_spec: RngSpec
    scheme: object
    x: float
    n_types: int = 0
    types: np.ndarray | None = None
    tau_x: np.ndarray | None = None
    simultaneous: np.ndarray | None = None

    @property
    def paths(self) -> np.ndarray:
        return self.X

    @property
    def n_paths(self) -> int:
        return self.X.shape[0]

    def tail_diagnostic(self) -> float:
        """sup_t E[Y^n_t] / E[X_t] over times with E[X_t] > 0."""
        top = self.type_means[-1]
        total = self.type_means.sum(axis=0)
        mask = total > 0
        if not mask.any():
            return 0.0
        return float(np.max(top[mask] / total[mask]))

    def to_csv(self, dest=None) -> str:
        if self.types is None:
            raise ValueError("per-type paths were not kept; simulate with keep_types=True")
        buf = io.StringIO(newline="")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["path", "t"] + [f"Y{k}" for k in range(self.n_types + 1)] + ["X"])
        times = self.grid.times
        for p in range(self.n_paths):
            for i, t in enumerate(times):
                row = [str(p), format(t, ".17g")]
                row += [format(v, ".17g") for v in self.types[:, p, i]]
                row.append(format(self.X[p, i], ".17g"))
                w.writerow(row)
        text = buf.getvalue()
        if dest is not None:
            with open(dest, "w", newline="") as fh:
                fh.write(text)
        return text


# ---------------------------------------------------------------------------
# exact quadratic transitions
# ---------------------------------------------------------------------------


def _k(alpha: float, dt: float) -> float:
    return g_func(-alpha, dt)


def sample_quadratic_transition(alpha: float, x, dt: float, rng: np.random.Generator,
                                beta: float = 1.0, immigration: float = 0.0):
    """Draw Z_dt given Z_0 = x for psi(u) = alpha*u + beta*u**2.

    ``immigration`` is a constant immigration rate c (phi(u) = c*u over the step).
    Vectorized over ``x``.
    """
    xa = np.asarray(x, dtype=float)
    if np.any(xa < 0):
        raise DomainError("x must be >= 0")
    if not dt > 0:
        raise DomainError("dt must be > 0")
    if not beta > 0:
        raise DomainError("beta must be > 0")
    n = rng.poisson(xa / (beta * g_func(alpha, dt)))
    shape = n + immigration / beta
    out = beta * _k(alpha, dt) * rng.standard_gamma(shape)
    return float(out) if np.ndim(x) == 0 else out


# ---------------------------------------------------------------------------
# Euler jump tables
# ---------------------------------------------------------------------------


class _JumpSampler:
    """Sizes of jumps above a threshold for a Levy measure of the family."""

    def __init__(self, levy, threshold: float):
        self.threshold = threshold
        atoms = [c for c in levy if isinstance(c, Atom) and c.location > threshold]
        dens = [c for c in levy if isinstance(c, Density)]
        self.atom_locs = np.array([a.location for a in atoms])
        self.atom_mass = np.array([a.mass for a in atoms])
        self.dens_mass = levy_mass(dens, threshold) if dens else 0.0
        self.rate = float(self.atom_mass.sum() + self.dens_mass)
        self._table = None
        if self.dens_mass > 0:
            top = max(1.0, 10 * threshold)
            while top < 1e15 and levy_mass(dens, top) > 1e-10 * self.dens_mass:
                top *= 10.0
            grid = np.geomspace(threshold, top, 4000)
            f = levy_density(dens)(grid) * grid  # density in log l
            cdf = np.concatenate([[0.0], np.cumsum(0.5 * (f[1:] + f[:-1]) * np.diff(np.log(grid)))])
            self._table = (cdf / cdf[-1], np.log(grid))

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if n == 0:
            return np.zeros(0)
        pick_dens = rng.random(n) * self.rate < self.dens_mass
        out = np.empty(n)
        k = int(pick_dens.sum())
        if k:
            cdf, logl = self._table
            out[pick_dens] = np.exp(np.interp(rng.random(k), cdf, logl))
        if n - k:
            p = self.atom_mass / self.atom_mass.sum()
            out[~pick_dens] = self.atom_locs[rng.choice(len(p), size=n - k, p=p)]
        return out

    def total(self, counts: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Sum of ``counts[i]`` independent jumps for each i."""
        total = int(counts.sum())
        if total == 0:
            return np.zeros(counts.shape)
        sizes = self.sample(total, rng)
        idx = np.repeat(np.arange(counts.size), counts)
        return np.bincount(idx, weights=sizes, minlength=counts.size).astype(float)


@dataclass
class _EulerPlan:
    alpha: float
    beta: float
    compensation: float
    jumps: _JumpSampler | None
    feller: bool = True
    imm_drift: float = 0.0
    imm_jumps: _JumpSampler | None = None


def _euler_plan(psi: BranchingMechanism, phi: ImmigrationMechanism | None, scheme: EulerDiffusion) -> _EulerPlan:
    threshold = scheme.threshold
    jumps = _JumpSampler(psi.levy, threshold) if psi.levy else None
    comp = levy_moment(psi.levy, threshold, 1.0) if psi.levy else 0.0
    plan = _EulerPlan(psi.alpha, psi.beta, comp, jumps if jumps and jumps.rate > 0 else None,
                      scheme.diffusion == "feller")
    if phi is not None:
        plan.imm_drift = phi.alpha_bar + (levy_moment(phi.nu, 0.0, threshold) if phi.nu else 0.0)
        if phi.nu:
            js = _JumpSampler(phi.nu, threshold)
            plan.imm_jumps = js if js.rate > 0 else None
    return plan


def _euler_step(z: np.ndarray, plan: _EulerPlan, dt: float, rng: np.random.Generator,
                source: np.ndarray | None = None) -> np.ndarray:
    n = z.size
    drift = plan.alpha + plan.compensation
    if plan.feller:
        if plan.beta > 0:
            base = sample_quadratic_transition(drift, z, dt, rng, plan.beta)
        else:
            base = z * math.exp(-drift * dt)
        incr = np.zeros(n)
    else:
        base = z
        incr = -drift * z * dt + np.sqrt(2.0 * plan.beta * z * dt) * rng.standard_normal(n)
    if plan.jumps is not None:
        incr += plan.jumps.total(rng.poisson(z * dt * plan.jumps.rate), rng)
    if source is not None:
        incr += plan.imm_drift * source * dt
        if plan.imm_jumps is not None:
            incr += plan.imm_jumps.total(rng.poisson(source * dt * plan.imm_jumps.rate), rng)
    return np.maximum(base + incr, 0.0)


# ---------------------------------------------------------------------------
# Galton-Watson particle system
# ---------------------------------------------------------------------------


def _gw_rates(psi: BranchingMechanism, levels: int) -> tuple[float, float]:
    """(birth, death) rates per particle."""
    if psi.levy or not psi.beta > 0:
        raise DomainError("GaltonWatson needs pi = 0 and beta > 0")
    r = 2.0 * psi.beta * levels
    drift = -psi.alpha / r  # p2 - p0
    if abs(drift) > 1:
        raise DomainError("levels too small for this drift: need |alpha| <= 2*beta*levels")
    p2 = 0.5 * (1.0 + drift)
    return r * p2, r * (1.0 - p2)


def _gw_step(n: np.ndarray, birth: float, death: float, dt: float, rng) -> np.ndarray:
    if birth == death:
        p0 = death * dt / (1.0 + death * dt)
        q = birth * dt / (1.0 + birth * dt)
    else:
        e = math.exp((birth - death) * dt)
        den = birth * e - death
        p0 = death * (e - 1.0) / den
        q = birth * (e - 1.0) / den
    surv = rng.binomial(n, 1.0 - p0)
    extra = np.zeros_like(surv)
    pos = surv > 0
    if pos.any():
        extra[pos] = rng.negative_binomial(surv[pos], 1.0 - q)
    return surv + extra


# ---------------------------------------------------------------------------
# single CB paths
# ---------------------------------------------------------------------------


def _check_scheme(psi: BranchingMechanism, scheme) -> None:
    if isinstance(scheme, ExactQuadratic):
        if psi.levy or not psi.beta > 0:
            raise DomainError("ExactQuadratic needs pi = 0 and beta > 0")
    elif isinstance(scheme, GaltonWatson):
        _gw_rates(psi, scheme.levels)
    elif not isinstance(scheme, EulerDiffusion):
        raise ValueError(f"unknown scheme {scheme!r}")


def _cb_block(psi: BranchingMechanism, x: np.ndarray, grid: PathGrid, scheme, rng) -> np.ndarray:
    _check_scheme(psi, scheme)
    out = np.empty((x.size, grid.n_steps + 1))
    out[:, 0] = x
    z = x.astype(float).copy()
    if isinstance(scheme, GaltonWatson):
        birth, death = _gw_rates(psi, scheme.levels)
        cnt = np.rint(z * scheme.levels).astype(np.int64)
        out[:, 0] = cnt / scheme.levels
        for i in range(grid.n_steps):
            cnt = _gw_step(cnt, birth, death, grid.dt, rng)
            out[:, i + 1] = cnt / scheme.levels
        return out
    plan = _euler_plan(psi, None, scheme) if isinstance(scheme, EulerDiffusion) else None
    for i in range(grid.n_steps):
        if plan is None:
            for _ in range(scheme.substeps):
                z = sample_quadratic_transition(psi.alpha, z, grid.dt / scheme.substeps, rng, psi.beta)
        else:
            z = _euler_step(z, plan, grid.dt, rng)
        out[:, i + 1] = z
    return out


def simulate_cb_path(psi: BranchingMechanism, x: float, grid: PathGrid, scheme,
                     rng: np.random.Generator) -> np.ndarray:
    """One path on the grid; 0 is absorbing."""
    if x < 0:
        raise DomainError("x must be >= 0")
    return _cb_block(psi, np.array([float(x)]), grid, scheme, rng)[0]


def simulate_cb(psi: BranchingMechanism, x: float, grid: PathGrid, scheme, rng_spec: RngSpec,
                n_paths: int) -> np.ndarray:
    """Many independent paths, (n_paths, n_steps + 1), keyed by (seed, path index)."""
    blocks = []
    B = rng_spec.block_size
    for blk in range(-(-n_paths // B)):
        rng = rng_spec.generator(STREAM_PATHS, blk)
        blocks.append(_cb_block(psi, np.full(B, float(x)), grid, scheme, rng))
    return np.concatenate(blocks)[:n_paths] if blocks else np.zeros((0, grid.n_steps + 1))


# ---------------------------------------------------------------------------
# multitype cascade
# ---------------------------------------------------------------------------


def _resolve_extinction(prev: np.ndarray, new_total: np.ndarray, t_start: float, delta: float,
                        alpha: float, theta: float, rng) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Extinction time within (t_start, t_start + delta] and simultaneity flag.

    Given total mass X = y + r at the start (y of the Eve type) and extinction by
    the end, tau - t_start has CDF exp(-X/g(alpha, s)) / exp(-X/g(alpha, delta));
    given tau - t_start = s, the Eve type dies last with probability
    exp(-2 theta s) * y / X.
    """
    total = prev.sum(axis=0)
    idx = np.flatnonzero((total > 0) & (new_total == 0))
    if idx.size == 0:
        return idx, np.zeros(0), np.zeros(0, dtype=bool)
    X = total[idx]
    y = prev[0, idx]
    U = rng.random(idx.size)
    G = X / (X / g_func(alpha, delta) - np.log(U))
    s = G if alpha == 0 else np.log1p(alpha * G) / alpha
    s = np.minimum(s, delta)
    p = np.exp(-2.0 * theta * s) * y / X
    sim = rng.random(idx.size) < p
    return idx, t_start + s, sim


def _multitype_block(args):
    (psi0, phi, x, grid, n_types, scheme, rng_spec, block, n_valid, keep_types) = args
    B = rng_spec.block_size
    rng = rng_spec.generator(STREAM_PATHS, block)
    n_t = n_types + 1
    n_pts = grid.n_steps + 1
    Y = np.zeros((n_t, B))
    Y[0] = x
    rec_types = np.empty((n_t, B, n_pts)) if keep_types else None
    rec_X = np.empty((B, n_pts))
    rec_Y0 = np.empty((B, n_pts))
    sums = np.zeros((n_t, n_pts))

    def record(i):
        if keep_types:
            rec_types[:, :, i] = Y
        rec_Y0[:, i] = Y[0]
        rec_X[:, i] = Y.sum(axis=0)
        sums[:, i] = Y[:, :n_valid].sum(axis=1)

    tau = sim = None
    if isinstance(scheme, ExactQuadratic):
        rng_res = rng_spec.generator(STREAM_RESOLVE, block)
        tau = np.full(B, math.inf)
        sim = np.zeros(B, dtype=bool)
        if x == 0:
            tau[:] = grid.t0
        # Y/beta is the beta = 1 cascade with drift b, immigration rate 2*theta = alpha_bar
        b, theta = psi0.alpha, 0.5 * phi.alpha_bar
        beta = psi0.beta
        alpha = b - phi.alpha_bar
        delta = grid.dt / scheme.substeps
        half = 0.5 * delta
        g_full, m_full = beta * g_func(b, delta), beta * _k(b, delta)
        g_half, m_half = beta * g_func(b, half), beta * _k(b, half)
        c = phi.alpha_bar / beta  # Gamma shape per unit of parent mass
        record(0)
        for i in range(grid.n_steps):
            for j in range(scheme.substeps):
                prev = Y.copy()
                for k in range(n_t):
                    old = rng.standard_gamma(rng.poisson(prev[k] / g_full)) * m_full
                    if k == 0:
                        Y[0] = old
                        continue
                    first = m_half * rng.standard_gamma(c * prev[k - 1])
                    n_mid = rng.poisson(first / g_half)
                    Y[k] = old + m_half * rng.standard_gamma(n_mid + c * Y[k - 1])
                t_start = grid.t0 + i * grid.dt + j * delta
                idx, when, flag = _resolve_extinction(prev / beta, Y.sum(axis=0), t_start, delta,
                                                      alpha, theta, rng_res)
                tau[idx] = when
                sim[idx] = flag
            record(i + 1)
    else:
        if isinstance(scheme, GaltonWatson):
            birth, death = _gw_rates(psi0, scheme.levels)
            K = scheme.levels
            cnt = np.zeros((n_t, B), dtype=np.int64)
            cnt[0] = int(round(x * K))
            Y[:] = cnt / K
            record(0)
            for i in range(grid.n_steps):
                prev = cnt.copy()
                for k in range(n_t):
                    cnt[k] = _gw_step(prev[k], birth, death, grid.dt, rng)
                    if k:
                        cnt[k] += rng.poisson(phi.alpha_bar * prev[k - 1] * grid.dt)
                Y[:] = cnt / K
                record(i + 1)
        else:
            plan = _euler_plan(psi0, phi, scheme)
            record(0)
            for i in range(grid.n_steps):
                prev = Y.copy()
                for k in range(n_t):
                    Y[k] = _euler_step(prev[k], plan, grid.dt, rng, prev[k - 1] if k else None)
                record(i + 1)
    sl = slice(0, n_valid)
    return (rec_X[sl], rec_Y0[sl], sums, None if rec_types is None else rec_types[:, sl],
            None if tau is None else tau[sl], None if sim is None else sim[sl])


def _check_multitype(psi0, phi, scheme):
    _check_scheme(psi0, scheme)
    if isinstance(scheme, (ExactQuadratic, GaltonWatson)) and phi.nu:
        raise DomainError(f"{type(scheme).__name__} supports drift immigration only (nu = 0)")
    if not classify(psi0).conservative:
        raise DomainError("psi0 is not conservative")
    if not classify(subtract_immigration(psi0, phi)).conservative:
        raise DomainError("psi0 - phi is not conservative")


def simulate_multitype(psi0: BranchingMechanism, phi: ImmigrationMechanism, x: float, grid: PathGrid,
                       n_types: int, rng_spec: RngSpec, n_paths: int, scheme=None,
                       workers: int = 1, keep_types: bool = False) -> PathEnsemble:
    """Simulate Y0 (CB(psi0) from x) and the types Y1..Y^n_types fed by phi(Y^{k-1})."""
    scheme = ExactQuadratic() if scheme is None else scheme
    if n_types < 0:
        raise ValueError("n_types must be >= 0")
    if x < 0:
        raise DomainError("x must be >= 0")
    if n_paths < 1:
        raise ValueError("need at least one path")
    _check_multitype(psi0, phi, scheme)
    B = rng_spec.block_size
    n_blocks = -(-n_paths // B)
    jobs = [(psi0, phi, float(x), grid, n_types, scheme, rng_spec, blk,
             min(B, n_paths - blk * B), keep_types) for blk in range(n_blocks)]
    if workers > 1 and n_blocks > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(_multitype_block, jobs))
    else:
        parts = [_multitype_block(j) for j in jobs]
    X = np.concatenate([p[0] for p in parts])
    Y0 = np.concatenate([p[1] for p in parts])
    means = sum(p[2] for p in parts) / n_paths
    types = np.concatenate([p[3] for p in parts], axis=1) if keep_types else None
    tau = np.concatenate([p[4] for p in parts]) if parts[0][4] is not None else None
    sim = np.concatenate([p[5] for p in parts]) if parts[0][5] is not None else None
    return PathEnsemble(grid, X, Y0, means, rng_spec, scheme, float(x), n_types, types, tau, sim)


# ---------------------------------------------------------------------------
# estimators
# ---------------------------------------------------------------------------


def mc_laplace(ens: PathEnsemble, lam, t: float, selector: str = "X", u: float | None = None) -> MCEstimate:
    """Monte Carlo estimate of a Laplace transform.

    ``selector`` is ``"X"``, ``"Y0"`` or ``"pair"``; for ``"pair"``, ``lam`` is
    ``(lambda1, lambda2)`` and the estimand is E[exp(-lambda1 X_t - lambda2 Y0_u)]
    with ``u = t`` by default.
    """
    i = ens.grid.index(t)
    if selector == "X":
        expo = float(lam) * ens.X[:, i]
    elif selector == "Y0":
        expo = float(lam) * ens.Y0[:, i]
    elif selector == "pair":
        l1, l2 = lam
        j = i if u is None else ens.grid.index(u)
        expo = l1 * ens.X[:, i] + l2 * ens.Y0[:, j]
    else:
        raise ValueError(f"unknown selector {selector!r}")
    if np.any(np.asarray(lam) < 0):
        raise DomainError("lambda must be >= 0")
    return MCEstimate.from_samples(np.exp(-expo))


def _first_absorbed(paths: np.ndarray, times: np.ndarray, eps: float) -> np.ndarray:
    low = paths <= eps
    # absorbed from index i on: all later entries low as well
    stays = np.flip(np.logical_and.accumulate(np.flip(low, axis=1), axis=1), axis=1)
    has = stays.any(axis=1)
    first = np.argmax(stays, axis=1)
    return np.where(has, times[first], math.inf)


def extinction_times(ens: PathEnsemble, eps: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Per-path first grid times (tau_Y0, tau_X) after which the component stays <= eps."""
    if eps < 0:
        raise ValueError("eps must be >= 0")
    if isinstance(ens.scheme, EulerDiffusion) and eps == 0:
        raise DomainError("Euler paths need eps > 0 for extinction times")
    times = ens.grid.times
    return _first_absorbed(ens.Y0, times, eps), _first_absorbed(ens.X, times, eps)


def extinction_fraction(ens: PathEnsemble, t: float, which: str = "X") -> MCEstimate:
    i = ens.grid.index(t)
    arr = ens.X if which == "X" else ens.Y0
    return MCEstimate.from_samples((arr[:, i] == 0).astype(float))
