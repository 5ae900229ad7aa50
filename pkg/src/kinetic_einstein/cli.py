"""Command-line front end: ``kinetic-einstein SUBCOMMAND [--config PATH] [--set k=v ...] [--out DIR] [--seed N]``.

Exit codes: 0 success, 1 an acceptance criterion failed (``accept-all`` only),
2 configuration or domain error, 3 numerical failure.  Codes 2 and 3 also
leave an ``error.txt`` of ``key=value`` lines in the output directory.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from pathlib import Path

import numpy as np

from . import acceptance, diagrams, dyson, kinetic, lattice, reservoir
from .config import SCHEMA, RunConfig, parse_vector
from .errors import ConfigError, DomainError, NumericalError
from .kinetic import KineticModel, TorusGrid
from .lattice import DispersionLaw, FiniteHamiltonian
from .reservoir import FormFactor, ReservoirParams, SpectralDensity


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


class Output:
    def __init__(self, directory: Path):
        self.dir = directory
        self.written: list = []

    def csv(self, name: str, header, rows):
        path = self.dir / name
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_fmt(v) for v in row])
        self.written.append(name)
        return path

    def text(self, name: str, body: str):
        (self.dir / name).write_text(body)
        self.written.append(name)


# ---------------------------------------------------------------- builders

def _params(cfg: RunConfig) -> ReservoirParams:
    ff = FormFactor(cfg["reservoir.profile"], cfg["reservoir.sigma"], cfg["reservoir.d_res"])
    cut = cfg["reservoir.cutoff"].strip().lower()
    if cut == "auto":
        cutoff = None
    else:
        try:
            cutoff = float(cut)
        except ValueError as exc:
            raise ConfigError(f"reservoir.cutoff: expected a number or 'auto', got {cut!r}") from exc
    return ReservoirParams(cfg["reservoir.beta"], ff, cfg["reservoir.quad_nodes"], cutoff)


def _eps(cfg: RunConfig) -> DispersionLaw:
    return DispersionLaw.parse(cfg["dispersion.kind"], cfg["lattice.d"])


def _vector(cfg: RunConfig, key: str) -> tuple:
    d = cfg["lattice.d"]
    v = parse_vector(cfg[key], key)
    if len(v) == 1:
        v = v + (0.0,) * (d - 1)
    if len(v) != d:
        raise ConfigError(f"{key} must have 1 or {d} components")
    return v


def _kinetic_model(cfg: RunConfig, beta: float | None = None) -> KineticModel:
    params = _params(cfg)
    if beta is not None:
        params = ReservoirParams(beta, params.form_factor, params.quad_nodes, params.cutoff)
    d = cfg["lattice.d"]
    psd = SpectralDensity(params).scaled((2 * math.pi) ** (1 - d))
    return KineticModel(TorusGrid(d, cfg["kinetic.N"]), _eps(cfg), psd=psd,
                        kappa_cap=cfg["kinetic.kappa_cap"], field_cap=cfg["kinetic.field_cap"])


def _hamiltonian(cfg: RunConfig) -> FiniteHamiltonian:
    d = cfg["lattice.d"]
    return FiniteHamiltonian(cfg["lattice.L"], d, cfg["lattice.lambda"], _vector(cfg, "lattice.field"), _eps(cfg))


def _dyson_model(cfg: RunConfig) -> dyson.DysonModel:
    return dyson.DysonModel(_params(cfg), _eps(cfg), cfg["lattice.d"], L=cfg["dyson.L"],
                            T_cut=cfg["dyson.T_cut"], side_order=cfg["dyson.side_order"])


def _k_header(d: int, name: str) -> list:
    return [name] if d == 1 else [f"{name}{j + 1}" for j in range(d)]


# ---------------------------------------------------------------- subcommands

def cmd_psd(cfg, out):
    p = _params(cfg)
    n, top = cfg["reservoir.E_points"], cfg["reservoir.E_max"]
    if n < 2 or not top > 0:
        raise ConfigError("psd sweep needs E_points >= 2 and E_max > 0")
    E = np.linspace(-top, top, n)
    psi = reservoir.psd(p, E)
    neg = reservoir.psd(p, -E)
    diff = np.abs(neg - np.exp(p.beta * E) * psi)
    res = np.where(neg > 0, diff / np.where(neg > 0, neg, 1.0), diff)
    out.csv("psd.csv", ["E", "psi", "psi_neg", "db_residual"], zip(E, psi, neg, res))


def cmd_correlation(cfg, out):
    p = _params(cfg)
    t = np.linspace(0.0, cfg["reservoir.t_max"], cfg["reservoir.t_points"])
    c = np.asarray(reservoir.correlation(p, t), dtype=complex)
    out.csv("correlation.csv", ["t", "re", "im", "abs"], zip(t, c.real, c.imag, np.abs(c)))
    C, g = reservoir.decay_fit(p, cfg["reservoir.t_max"], max(8, cfg["reservoir.t_points"]))
    out.csv("decay_fit.csv", ["t_max", "C", "g_res"], [(cfg["reservoir.t_max"], C, g)])


def cmd_combes_thomas(cfg, out):
    h = _hamiltonian(cfg)
    nu = cfg["lattice.nu"]
    times = parse_vector(cfg["lattice.t_list"], "lattice.t_list")
    certs = []
    for t in times:
        C, ok = lattice.combes_thomas_fit(h, t, nu)
        certs.append((t, nu, C, ok))
    out.csv("combes_thomas.csv", ["t", "nu", "C", "ok"], certs)
    # propagator column U(x, 0) along axis 0
    s = h.sites
    on_axis = np.nonzero(np.all(s[:, 1:] == 0, axis=1))[0]
    origin = int(np.nonzero(np.all(s == 0, axis=1))[0][0])
    rows = []
    for t in times:
        U = lattice.propagator(h, t)
        for i in on_axis:
            u = U[i, origin]
            rows.append((t, s[i, 0], 0, u.real, u.imag, abs(u)))
    out.csv("propagator.csv", ["t", "x", "xprime", "re", "im", "abs"], rows)
    bad = [t for t, _, _, ok in certs if not ok]
    if bad:
        raise NumericalError(f"Combes-Thomas constant not stable under box doubling at t={bad}")


def cmd_bloch(cfg, out):
    h = _hamiltonian(cfg)
    t = np.linspace(0.0, cfg["lattice.t_max"], cfg["lattice.t_points"])
    X = lattice.bloch_trace(h, t)
    out.csv("bloch.csv", ["t"] + _k_header(h.d, "x"), (np.concatenate([[ti], xi]) for ti, xi in zip(t, X)))
    F = np.asarray(h.field, dtype=float)
    strength = h.lam**2 * float(np.linalg.norm(F))
    if h.d == 1 and strength > 0:
        period = lattice.oscillation_period(t, X[:, 0])
        out.csv("bloch_period.csv", ["measured", "expected"], [(period, 2 * math.pi / strength)])


def cmd_kinetic_stationary(cfg, out):
    m = _kinetic_model(cfg)
    gen = m.generator(0.0, _vector(cfg, "kinetic.field"))
    zeta = kinetic.stationary_state(gen)
    nodes = m.grid.nodes
    out.csv("stationary.csv", _k_header(m.grid.d, "k") + ["zeta"],
            (np.concatenate([k, [z]]) for k, z in zip(nodes, zeta)))


def cmd_kinetic_gap(cfg, out):
    m = _kinetic_model(cfg)
    F = _vector(cfg, "kinetic.field")
    gap = kinetic.spectral_gap(m.generator(0.0, F))
    out.csv("kinetic_gap.csv", _k_header(m.grid.d, "F") + ["gap"], [F + (gap,)])


def cmd_drift(cfg, out):
    m = _kinetic_model(cfg)
    F = np.linspace(-cfg["kinetic.field_cap"], cfg["kinetic.field_cap"], 21)
    v = kinetic.drift_curve(m, F)
    out.csv("drift.csv", ["F", "v"], zip(F, v))


def cmd_diffusion(cfg, out):
    m = _kinetic_model(cfg)
    gen = m.generator()
    D = kinetic.diffusion_gk(gen)
    _, Db = kinetic.branch_derivatives(m, h=cfg["kinetic.fd_step_kappa"])
    rows = [(i, j, D[i, j], Db[i, j]) for i in range(m.grid.d) for j in range(m.grid.d)]
    out.csv("diffusion.csv", ["i", "j", "D_gk", "D_branch"], rows)
    out.csv("diffusion_time.csv", ["D_time", "D_gk"], [(kinetic.diffusion_time_domain(gen), D[0, 0])])


def cmd_branch(cfg, out):
    m = _kinetic_model(cfg)
    k = np.linspace(-cfg["kinetic.kappa_max"], cfg["kinetic.kappa_max"], cfg["kinetic.kappa_points"])
    br = kinetic.eigen_branch(m, k, _vector(cfg, "kinetic.field"))
    out.csv("branch.csv", ["kappa", "re_u", "im_u"], zip(br.kappas, br.values.real, br.values.imag))


def cmd_einstein(cfg, out):
    rows = []
    for beta in sorted({cfg["reservoir.beta"], 2.0 * cfg["reservoir.beta"]}):
        r = kinetic.einstein_residual(_kinetic_model(cfg, beta), h=cfg["kinetic.fd_step_field"])
        rows.append((r.beta, r.N, r.h, r.dvdF, r.betaD, r.residual))
    out.csv("einstein.csv", ["beta", "N", "h", "dvdF", "betaD", "residual"], rows)


def cmd_diagram_bounds(cfg, out):
    rows = []
    for n in range(4):
        for I_len in (0.5, 1.0, 2.0):
            c = diagrams.bound_check_combi(n, I_len)
            rows.append((c.n, c.I_len, c.lhs, c.rhs, c.ok))
    out.csv("diagram_bounds.csv", ["n", "I_len", "lhs", "rhs", "ok"], rows)
    if not all(r[-1] for r in rows):
        raise NumericalError("a combinatorial bound certificate failed")


def _n2_envelope(cfg, model, kappa, lams, out):
    rows = []
    for i, lam in enumerate(lams):
        p = model.fiber_momentum(kappa, lam)
        est = dyson.vertex_n2_norm(model, p, cfg["dyson.n2_time"], lam,
                                   samples=cfg["dyson.mc_samples"], seed=cfg["dyson.seed"] + i)
        rows.append((lam, kappa, cfg["dyson.n2_time"], est.estimate, est.stderr, est.samples))
    out.csv("vertex_n2.csv", ["lambda", "kappa", "t", "norm", "stderr", "samples"], rows)


def cmd_ladder_check(cfg, out):
    model = _dyson_model(cfg)
    kappa = cfg["dyson.kappa"]
    lams = parse_vector(cfg["dyson.lambdas"], "dyson.lambdas")
    rows = dyson.ladder_limit_check(model, kappa, lams)
    out.csv("ladder_check.csv", ["lambda", "kappa", "opnorm_diff"], ((r.lam, r.kappa, r.opnorm_diff) for r in rows))
    out.csv("ladder_antihermitian.csv", ["lambda", "kappa", "antihermitian"],
            ((r.lam, r.kappa, r.antihermitian) for r in rows))
    if cfg["dyson.truncation"] == 2:
        _n2_envelope(cfg, model, kappa, lams, out)


def cmd_pole(cfg, out):
    model = _dyson_model(cfg)
    kappa = cfg["dyson.kappa"]
    rows = []
    for lam in parse_vector(cfg["dyson.lambdas"], "dyson.lambdas"):
        r = dyson.pole_track(model, kappa, lam)
        rows.append((r.lam, r.kappa, r.u.real, r.u.imag, r.defect))
    out.csv("pole.csv", ["lambda", "kappa", "re_u", "im_u", "defect"], rows)


def cmd_mixing(cfg, out):
    model = _dyson_model(cfg)
    r = dyson.mixing_check(model, cfg["dyson.lambda"], dt=cfg["dyson.dt"],
                           bromwich_nodes=cfg["dyson.bromwich_nodes"])
    out.csv("mixing.csv", ["t", "distance"], zip(r.times, r.distance))
    out.csv("mixing_summary.csv",
            ["lambda", "kappa", "rate", "kinetic_gap", "trace_drift", "laplace_deviation"],
            [(r.lam, r.kappa, r.rate, r.kinetic_gap, r.trace_drift, r.laplace_deviation)])


def cmd_accept_all(cfg, out):
    results = acceptance.run_all(cfg["dyson.seed"], report=lambda line: None)
    out.text("acceptance.txt", "".join(r.line() + "\n" for r in results))
    out.csv("acceptance.csv", ["criterion", "passed"], ((r.number, r.passed) for r in results))
    for r in results:
        print(r.line())
    return 0 if all(r.passed for r in results) else 1


COMMANDS = {
    "psd": cmd_psd,
    "correlation": cmd_correlation,
    "combes-thomas": cmd_combes_thomas,
    "bloch": cmd_bloch,
    "kinetic-stationary": cmd_kinetic_stationary,
    "kinetic-gap": cmd_kinetic_gap,
    "drift": cmd_drift,
    "diffusion": cmd_diffusion,
    "branch": cmd_branch,
    "einstein": cmd_einstein,
    "diagram-bounds": cmd_diagram_bounds,
    "ladder-check": cmd_ladder_check,
    "pole": cmd_pole,
    "mixing": cmd_mixing,
    "accept-all": cmd_accept_all,
}


def build_parser() -> argparse.ArgumentParser:
    keys = "\n".join(f"  {k:26s} {spec[2]} (default {spec[1]})" for k, spec in SCHEMA.items())
    ap = argparse.ArgumentParser(
        prog="kinetic-einstein",
        description="Kinetic limit, Einstein relation and ladder-diagram cross-checks.",
        epilog="configuration keys:\n" + keys,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    ap.add_argument("subcommand", choices=sorted(COMMANDS))
    ap.add_argument("--config", metavar="PATH", help="flat key = value file")
    ap.add_argument("--set", metavar="KEY=VALUE", action="append", default=[], dest="overrides",
                    help="override one key (repeatable)")
    ap.add_argument("--out", metavar="DIR", default="out", help="output directory (default: out)")
    ap.add_argument("--seed", type=int, help="master seed (sets dyson.seed)")
    return ap


def _write_error(out_dir: Path, code: int, subcommand: str, exc: Exception):
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        msg = " ".join(str(exc).split())
        (out_dir / "error.txt").write_text(
            f"exit_code={code}\nsubcommand={subcommand}\nerror_type={type(exc).__name__}\nmessage={msg}\n")
    except OSError:
        pass


def run(subcommand: str, config_path: str | None = None, overrides=(), out_dir="out",
        seed: int | None = None) -> int:
    out_dir = Path(out_dir)
    try:
        if subcommand not in COMMANDS:
            raise ConfigError(f"unknown subcommand {subcommand!r}")
        cfg = RunConfig.load(config_path, overrides, seed)
        out_dir.mkdir(parents=True, exist_ok=True)
        stale = out_dir / "error.txt"
        if stale.exists():
            stale.unlink()
        out = Output(out_dir)
        out.text("resolved_config.txt", f"# subcommand = {subcommand}\n" + cfg.echo())
        code = COMMANDS[subcommand](cfg, out) or 0
    except (ConfigError, DomainError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        _write_error(out_dir, 2, subcommand, exc)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        _write_error(out_dir, 3, subcommand, exc)
        return 3
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return run(args.subcommand, args.config, args.overrides, args.out, args.seed)


if __name__ == "__main__":
    sys.exit(main())
