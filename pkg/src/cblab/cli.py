"""Command-line front end.

Every subcommand writes its CSV into ``--out DIR`` (with a text summary on
stdout) or, without ``--out``, the CSV to stdout and the summary to stderr.
Exit codes: 0 success, 1 failed checks, 2 invalid configuration.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
import sys
from pathlib import Path

import click
import numpy as np

from . import quadratic as qd
from .config import ConfigError, RunConfig, as_list, load_config
from .laplace_ode import BlowUpError, solve_joint_pair, solve_joint_two_times
from .mechanisms import (
    DomainError,
    classify,
    eval_phi,
    eval_psi,
    subtract_immigration,
    theta_zero,
)
from .simulate import PathGrid, RngSpec, make_scheme, simulate_multitype
from .verify import SUITES, SuiteConfig, run_suites

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2
GENERAL_SUITES = ("theorem", "shift", "iteration")


def _f(v: float) -> str:
    return format(float(v), ".17g")


def _csv_text(header, rows) -> str:
    buf = io.StringIO(newline="")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


class _Sink:
    """Routes CSV files and summaries to --out or to the standard streams."""

    def __init__(self, out: str | None):
        self.out = Path(out) if out else None
        if self.out is not None:
            self.out.mkdir(parents=True, exist_ok=True)

    def table(self, name: str, text: str) -> None:
        if self.out is None:
            sys.stdout.write(text)
        else:
            with open(self.out / name, "w", newline="") as fh:
                fh.write(text)

    def summary(self, name: str, text: str) -> None:
        if self.out is None:
            sys.stderr.write(text)
        else:
            with open(self.out / name, "w", newline="") as fh:
                fh.write(text)
            sys.stdout.write(text)


def _fail(msg: str, code: int = EXIT_CONFIG):
    click.echo(f"error: {msg}", err=True)
    sys.exit(code)


@click.group()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
              help="YAML or JSON run configuration.")
@click.option("--seed", type=click.IntRange(0, 2**64 - 1), default=None, help="Overrides mc.seed.")
@click.option("--out", type=click.Path(file_okay=False), default=None, help="Output directory.")
@click.option("--set", "assignments", multiple=True, metavar="KEY=VALUE",
              help="Override a config key, e.g. --set mc.n_paths=500 (repeatable).")
@click.pass_context
def main(ctx, config_path, seed, out, assignments):
    """Branching-process toolkit: mechanisms, Laplace exponents, simulation, verification."""
    try:
        cfg = load_config(config_path, {"mc.seed": seed}, assignments)
    except ConfigError as exc:
        _fail(str(exc))
    ctx.obj = {"cfg": cfg, "sink": _Sink(out)}


# ---------------------------------------------------------------------------
# mechanism
# ---------------------------------------------------------------------------


def mechanism_report(cfg: RunConfig) -> tuple[str, str]:
    psi0, phi = cfg.mechanisms()
    psi = subtract_immigration(psi0, phi)
    rows = []
    for lam in cfg.lambda_grid:
        a, b = eval_psi(psi0, lam), eval_phi(phi, lam)
        rows.append([_f(lam), _f(a), _f(b), _f(a - b)])
    table = _csv_text(["lambda", "psi0", "phi", "psi_minus_phi"], rows)
    lines = []
    for name, m in (("psi0", psi0), ("psi", psi)):
        c = classify(m)
        th, closed = theta_zero(m)
        lines.append(f"{name}: class={c.kind.value} conservative={str(c.conservative).lower()}"
                     f" psi_prime_0={c.psi_prime_0:.10g} theta0={th:.10g}"
                     f" theta0_admissible={str(closed).lower()}"
                     + (" (numerical verdict)" if c.numerical else ""))
    return table, "\n".join(lines) + "\n"


@main.command()
@click.pass_obj
def mechanism(obj):
    """Tabulate psi0, phi and psi0 - phi on lambda_grid and classify them."""
    try:
        table, text = mechanism_report(obj["cfg"])
    except (DomainError, ValueError) as exc:
        _fail(str(exc))
    obj["sink"].table("mechanism.csv", table)
    obj["sink"].summary("mechanism.txt", text)


# ---------------------------------------------------------------------------
# laplace
# ---------------------------------------------------------------------------


def _closed_w0(p: qd.QuadraticParams, l1, l2, u, t) -> float:
    return qd.v0(p, l1, l2, t) if u == t else qd.v1(p, l1, l2, u, t)


def _ode_w0(psi0, phi, l1, l2, u, t) -> float:
    if u == t:
        return solve_joint_pair(psi0, phi, t, l1, l2)[0]
    return solve_joint_two_times(psi0, phi, u, t, l1, l2)


def laplace_report(cfg: RunConfig) -> tuple[str, str]:
    block = cfg.laplace
    method = block.method
    p = cfg.quadratic_params()
    if method in ("closed", "both") and p is None:
        raise ConfigError(f"method={method} needs a quadratic mechanism pair")
    psi0, phi = cfg.mechanisms()
    header = ["t", "lambda1", "lambda2", "u", "w0", "laplace"]
    if method == "both":
        header += ["w0_closed", "agreement"]
    rows, worst = [], 0.0
    u_values = None if block.u is None else as_list(block.u)
    for t, l1, l2 in itertools.product(as_list(block.t), as_list(block.lambda1), as_list(block.lambda2)):
        for u in (u_values if u_values is not None else [t]):
            if not 0 <= u <= t:
                raise ConfigError(f"laplace.u={u} must lie in [0, t={t}]")
            if method == "closed":
                w0 = _closed_w0(p, l1, l2, u, t)
            else:
                w0 = _ode_w0(psi0, phi, l1, l2, u, t)
            row = [_f(t), _f(l1), _f(l2), _f(u), _f(w0), _f(math.exp(-cfg.x * w0))]
            if method == "both":
                wc = _closed_w0(p, l1, l2, u, t)
                gap = abs(w0 - wc)
                worst = max(worst, gap)
                row += [_f(wc), _f(gap)]
            rows.append(row)
    text = f"method={method} rows={len(rows)}"
    if method == "both":
        text += f" max_agreement_gap={worst:.3e}"
    return _csv_text(header, rows), text + "\n"


@main.command()
@click.pass_obj
def laplace(obj):
    """Joint Laplace transforms E[exp(-l1 X_t - l2 Y0_u)] = exp(-x w0)."""
    try:
        table, text = laplace_report(obj["cfg"])
    except BlowUpError as exc:
        _fail(str(exc), EXIT_FAIL)
    except (ConfigError, DomainError, ValueError) as exc:
        _fail(str(exc))
    obj["sink"].table("laplace.csv", table)
    obj["sink"].summary("laplace.txt", text)


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def _mean_se(a: np.ndarray) -> tuple[float, float]:
    n = a.shape[0]
    se = float(a.std(ddof=1) / math.sqrt(n)) if n > 1 else math.nan
    return float(a.mean()), se


def simulate_report(cfg: RunConfig):
    mc = cfg.mc
    psi0, phi = cfg.mechanisms()
    scheme = make_scheme(mc.scheme, levels=mc.levels, substeps=mc.substeps, diffusion=mc.diffusion)
    ens = simulate_multitype(psi0, phi, cfg.x, PathGrid(mc.dt, mc.n_steps), mc.n_types,
                             RngSpec(mc.seed), mc.n_paths, scheme, workers=mc.workers, keep_types=True)
    rows = []
    for i, t in enumerate(ens.grid.times):
        mx, sx = _mean_se(ens.X[:, i])
        my, sy = _mean_se(ens.Y0[:, i])
        rows.append([_f(t), _f(mx), _f(sx), _f(my), _f(sy),
                     _f(np.mean(ens.X[:, i] == 0)), _f(np.mean(ens.Y0[:, i] == 0))])
    summary = _csv_text(["t", "mean_X", "stderr_X", "mean_Y0", "stderr_Y0", "frac_X_zero", "frac_Y0_zero"],
                        rows)
    text = (f"seed={mc.seed} n_paths={mc.n_paths} n_types={mc.n_types} scheme={mc.scheme}"
            f" t_end={ens.grid.t_end:.10g}\n"
            f"mean_X(t_end)={float(rows[-1][1]):.10g} stderr={float(rows[-1][2]):.4g}"
            f" frac_X_zero(t_end)={float(rows[-1][5]):.10g}"
            f" tail_diagnostic={ens.tail_diagnostic():.4g}\n")
    return ens, summary, text


@main.command()
@click.pass_obj
def simulate(obj):
    """Simulate the multitype cascade and write the ensemble with a per-time summary."""
    try:
        ens, summary, text = simulate_report(obj["cfg"])
    except (DomainError, ValueError) as exc:
        _fail(str(exc))
    sink = obj["sink"]
    if sink.out is None:
        sys.stdout.write(ens.to_csv())
        sys.stderr.write(summary)
    else:
        ens.to_csv(sink.out / "ensemble.csv")
        sink.table("summary.csv", summary)
    sink.summary("simulate.txt", text)


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------


def suite_config(cfg: RunConfig) -> SuiteConfig:
    mc, v = cfg.mc, cfg.verify
    kw = dict(
        x=cfg.x, seed=mc.seed, dt=mc.dt, n_steps=mc.n_steps, n_types=mc.n_types, scheme=mc.scheme,
        diffusion=mc.diffusion,
        substeps=mc.substeps, levels=mc.levels, workers=mc.workers,
        t_values=tuple(v.t_values), lambdas=tuple(v.lambdas), pairs=tuple(tuple(p) for p in v.pairs),
        t=v.t, u=v.u, delta=v.delta, z_gate=v.gates.z, abs_gate=v.gates.abs,
        identity_gate=v.gates.identity, shift_theta=v.shift_theta, law_n_paths=v.law_n_paths,
        n_iter=v.n_iter, cond_lambda2=v.conditional.lambda2, cond_u=v.conditional.u,
        cond_t_values=tuple(v.conditional.t_values),
    )
    # the simulate default of 1000 paths is too few for the z gates
    if "n_paths" in mc.model_fields_set:
        kw["n_paths"] = mc.n_paths
    if "lambda_grid" in cfg.model_fields_set:
        kw["lambda_grid"] = tuple(cfg.lambda_grid)
    p = cfg.quadratic_params()
    if p is not None:
        kw.update(alpha=p.alpha, theta=p.theta)
    else:
        kw["psi0"], kw["phi"] = cfg.mechanisms()
    return SuiteConfig(**kw)


def select_suites(cfg: RunConfig, requested) -> tuple:
    if requested:
        suites = tuple(requested)
    else:
        suites = tuple(cfg.verify.suites)
        if cfg.quadratic_params() is None and "suites" not in cfg.verify.model_fields_set:
            suites = GENERAL_SUITES
    if cfg.quadratic_params() is None:
        bad = sorted(set(suites) - set(GENERAL_SUITES))
        if bad:
            raise ConfigError(f"suites {bad} need a quadratic mechanism pair")
    return suites


@main.command()
@click.option("--suite", "suites", multiple=True, type=click.Choice(SUITES),
              help="Run only this suite (repeatable).")
@click.pass_obj
def verify(obj, suites):
    """Run verification suites; exit 0 iff every check passes."""
    cfg = obj["cfg"]
    try:
        chosen = select_suites(cfg, suites)
        report = run_suites(suite_config(cfg), chosen)
    except (ConfigError, DomainError, ValueError) as exc:
        _fail(str(exc))
    obj["sink"].table("report.csv", report.to_csv())
    obj["sink"].summary("report.txt", report.summary())
    sys.exit(EXIT_OK if report.passed else EXIT_FAIL)


if __name__ == "__main__":
    main()
