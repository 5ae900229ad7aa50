"""Flat ``namespace.key = value`` run configuration."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError

# key -> (type, default, help)
SCHEMA: dict = {
    "reservoir.beta": (float, 1.0, "inverse temperature"),
    "reservoir.profile": (str, "gaussian", "form factor: gaussian | gaussian_linear"),
    "reservoir.sigma": (float, 1.0, "form factor width"),
    "reservoir.d_res": (int, 3, "reservoir dimension"),
    "reservoir.quad_nodes": (int, 1024, "radial Gauss-Legendre nodes for psi_hat"),
    "reservoir.cutoff": (str, "auto", "radial cutoff (auto = sigma*(9 + d_res/2))"),
    "reservoir.E_max": (float, 3.0, "psd sweep: largest |E|"),
    "reservoir.E_points": (int, 50, "psd sweep: number of energies"),
    "reservoir.t_max": (float, 10.0, "correlation sweep: largest t"),
    "reservoir.t_points": (int, 41, "correlation sweep: number of times"),
    "lattice.d": (int, 1, "lattice dimension"),
    "lattice.L": (int, 201, "Dirichlet box size"),
    "lattice.lambda": (float, 1.0, "coupling lambda (enters as lambda^2 F.X)"),
    "lattice.field": (str, "0", "force vector, comma separated"),
    "lattice.nu": (float, 0.5, "Combes-Thomas decay rate"),
    "lattice.t_list": (str, "0,1,2,4", "times for combes-thomas and correlation tables"),
    "lattice.t_max": (float, 80.0, "Bloch trace: final time"),
    "lattice.t_points": (int, 801, "Bloch trace: number of times"),
    "dispersion.kind": (str, "laplacian", "laplacian | coefficient list 'x:c;...'"),
    "kinetic.N": (int, 64, "momentum grid points per axis"),
    "kinetic.kappa_cap": (float, 0.2, "cap on |kappa|"),
    "kinetic.field_cap": (float, 0.2, "cap on |F|"),
    "kinetic.fd_step_field": (float, 1e-3, "finite-difference step in F"),
    "kinetic.fd_step_kappa": (float, 1e-2, "finite-difference step in kappa"),
    "kinetic.field": (str, "0", "force vector for kinetic subcommands"),
    "kinetic.kappa_max": (float, 0.2, "branch sweep: largest kappa"),
    "kinetic.kappa_points": (int, 21, "branch sweep: number of kappas"),
    "dyson.L": (int, 32, "periodic box size (= momentum grid N)"),
    "dyson.T_cut": (float, 48.0, "time cutoff of the vertex quadrature"),
    "dyson.bromwich_nodes": (int, 512, "points on the Bromwich line for the resolvent cross-check"),
    "dyson.mc_samples": (int, 4000, "Monte Carlo samples for the n=2 vertex"),
    "dyson.seed": (int, 0, "seed (overridden by --seed)"),
    "dyson.truncation": (int, 1, "1 = ladder; 2 = ladder plus the certified n=2 envelope"),
    "dyson.kappa": (float, 0.05, "kappa for ladder-check, pole and mixing"),
    "dyson.lambdas": (str, "0.3,0.1,0.03", "lambda values for ladder-check and pole"),
    "dyson.lambda": (float, 0.1, "lambda for mixing"),
    "dyson.side_order": (str, "matched", "pair-factor side order: matched | printed"),
    "dyson.dt": (float, 0.05, "time step of the mixing solver"),
    "dyson.n2_time": (float, 2.0, "time t of the n=2 vertex estimate"),
}


def _parse_value(key: str, raw: str):
    typ = SCHEMA[key][0]
    raw = raw.strip()
    try:
        if typ is int:
            v = int(raw)
        elif typ is float:
            v = float(raw)
            if not math.isfinite(v):
                raise ValueError
        else:
            v = raw
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {typ.__name__}") from exc
    return v


def parse_lines(text: str, origin: str = "<config>") -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{lineno}: expected key=value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"{origin}:{lineno}: unknown key {key!r}")
        out[key] = _parse_value(key, raw)
    return out


def parse_override(item: str) -> tuple:
    if "=" not in item:
        raise ConfigError(f"--set expects key=value, got {item!r}")
    key, raw = (s.strip() for s in item.split("=", 1))
    if key not in SCHEMA:
        raise ConfigError(f"unknown key {key!r}")
    return key, _parse_value(key, raw)


def parse_vector(text: str, name: str) -> tuple:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError as exc:
        raise ConfigError(f"{name}: expected comma-separated numbers, got {text!r}") from exc


@dataclass(frozen=True)
class RunConfig:
    values: dict

    @classmethod
    def load(cls, path: str | None = None, overrides=(), seed: int | None = None) -> "RunConfig":
        vals = {k: spec[1] for k, spec in SCHEMA.items()}
        if path is not None:
            try:
                text = Path(path).read_text()
            except OSError as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from exc
            vals.update(parse_lines(text, str(path)))
        for item in overrides:
            k, v = parse_override(item)
            vals[k] = v
        if seed is not None:
            vals["dyson.seed"] = int(seed)
        if vals["dyson.truncation"] not in (1, 2):
            raise ConfigError("dyson.truncation must be 1 or 2")
        return cls(vals)

    def __getitem__(self, key):
        return self.values[key]

    def echo(self) -> str:
        return "".join(f"{k} = {self.values[k]}\n" for k in sorted(self.values))
