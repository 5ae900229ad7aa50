"""The eleven acceptance checks, shared by the CLI and the test suite."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import diagrams, dyson, kinetic, lattice, reservoir
from .kinetic import KineticModel, TorusGrid
from .lattice import DispersionLaw, FiniteHamiltonian
from .reservoir import FormFactor, ReservoirParams, SpectralDensity


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} [{self.number:2d}] {self.name}: {self.detail}"


def _params(beta=1.0, d_res=3):
    return ReservoirParams(beta=beta, form_factor=FormFactor(d_res=d_res))


def _kinetic(N, beta=1.0, d_res=3, d=1):
    p = _params(beta, d_res)
    return KineticModel(TorusGrid(d, N), DispersionLaw.laplacian(d), psd=SpectralDensity(p))


def detailed_balance(seed: int = 0) -> CriterionResult:
    p = _params()
    E = np.linspace(0.5, 3.0, 50)
    closed = np.abs(reservoir.psd(p, -E) - np.exp(p.beta * E) * reservoir.psd(p, E)) / reservoir.psd(p, -E)
    fwd = reservoir.psd_fourier(p, E)
    bwd = reservoir.psd_fourier(p, -E)
    oracle = np.abs(bwd - np.exp(p.beta * E) * fwd) / np.abs(bwd)
    ok = closed.max() <= 1e-10 and oracle.max() <= 1e-6
    return CriterionResult(1, "detailed balance", bool(ok),
                           f"closed form {closed.max():.2e} (<=1e-10), Fourier route {oracle.max():.2e} (<=1e-6)")


def gibbs_stationarity(seed: int = 0) -> CriterionResult:
    r = kinetic.gibbs_residual(_kinetic(64))
    return CriterionResult(2, "Gibbs stationarity", r <= 1e-8, f"||M zeta_beta||_2 = {r:.2e} (<=1e-8)")


def einstein_relation(seed: int = 0) -> CriterionResult:
    res = [kinetic.einstein_residual(_kinetic(128, beta=b), h=1e-3) for b in (1.0, 2.0)]
    worst = max(r.residual for r in res)
    det = ", ".join(f"beta={r.beta:g}: {r.residual:.2e}" for r in res)
    return CriterionResult(3, "Einstein relation", worst <= 1e-3, f"{det} (<=1e-3)")


def two_route_diffusion(seed: int = 0) -> CriterionResult:
    m = _kinetic(64)
    D_gk = kinetic.diffusion_gk(m.generator())[0, 0]
    _, D_br = kinetic.branch_derivatives(m)
    rel = abs(D_br[0, 0] - D_gk) / D_gk
    return CriterionResult(4, "two-route diffusion", rel <= 1e-4,
                           f"D_gk={D_gk:.10f}, D_branch={D_br[0, 0]:.10f}, rel {rel:.2e} (<=1e-4)")


def ladder_limit(seed: int = 0) -> CriterionResult:
    model = dyson.DysonModel(_params(), L=32)
    rows = dyson.ladder_limit_check(model, 0.05, (0.3, 0.1, 0.03))
    slope = dyson.fit_slope([r.lam for r in rows], [r.opnorm_diff for r in rows])
    diffs = ", ".join(f"{r.opnorm_diff:.3e}" for r in rows)
    return CriterionResult(5, "ladder limit", abs(slope - 2.0) <= 0.3,
                           f"slope {slope:.4f} (2.0+-0.3); diffs {diffs}")


def pole_consistency(seed: int = 0) -> CriterionResult:
    model = dyson.DysonModel(_params(d_res=4), L=32)
    lams = (0.3, 0.1, 0.03)
    zero = [dyson.pole_track(model, 0.0, lam) for lam in lams]
    moving = [dyson.pole_track(model, 0.05, lam) for lam in lams]
    errs = [r.scaled_error for r in moving]
    slope = dyson.fit_slope(lams, errs)
    u0 = max(abs(r.u) for r in zero)
    defect = max(r.defect for r in zero + moving)
    ok = u0 <= 1e-10 and defect <= 1e-6 and errs[0] > errs[1] > errs[2] and abs(slope - 2.0) <= 0.3
    return CriterionResult(6, "pole consistency (d_res=4)", bool(ok),
                           f"|u(0)| {u0:.1e} (<=1e-10), defect {defect:.1e} (<=1e-6), "
                           f"scaled errors {', '.join(f'{e:.2e}' for e in errs)} slope {slope:.3f}")


def diagram_combinatorics(seed: int = 0) -> CriterionResult:
    counts_ok = all(len(diagrams.enumerate_pairings(n)) == diagrams.double_factorial(2 * n - 1) for n in range(7))
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7]))
    psd = SpectralDensity(_params(d_res=4, beta=4.0))
    round_trip = factor = True
    for _ in range(1000):
        D = diagrams.random_diagram(rng, int(rng.integers(1, 7)))
        parts = diagrams.irreducible_decomposition(D)
        round_trip &= diagrams.concatenate(parts) == D and all(diagrams.is_irreducible(P) for P in parts)
    for _ in range(100):
        D = diagrams.random_diagram(rng, int(rng.integers(1, 5)), sites=1)
        parts = diagrams.irreducible_decomposition(D)
        w = diagrams.weight(D, 0.5, psd, exact=True)
        prod = (1, 0)
        for P in parts:
            prod = diagrams._exact_mul(prod, diagrams.weight(P, 0.5, psd, exact=True))
        factor &= tuple(w) == tuple(prod)
    ok = counts_ok and round_trip and factor
    return CriterionResult(7, "diagram combinatorics", bool(ok),
                           f"counts {counts_ok}, round-trip (1000) {round_trip}, factorisation (100) {factor}")


def combinatorial_bounds(seed: int = 0) -> CriterionResult:
    certs = []
    for pinned in (False, True):
        for n in range(1 if pinned else 0, 4):
            for I_len in (0.5, 1.0, 2.0):
                certs.append(diagrams.bound_check_combi(n, I_len, pinned=pinned))
    ok = all(c.ok for c in certs)
    tight = max(c.lhs / c.rhs for c in certs)
    return CriterionResult(8, "combinatorial bounds", ok, f"{len(certs)} instances, max lhs/rhs {tight:.3f}")


def combes_thomas(seed: int = 0) -> CriterionResult:
    h = FiniteHamiltonian(201)
    out = [(t, *lattice.combes_thomas_fit(h, t, 0.5)) for t in (0.5, 1.0, 2.0, 3.0, 4.0)]
    ok = all(k for _, _, k in out)
    return CriterionResult(9, "Combes-Thomas", ok, ", ".join(f"t={t:g}: C={C:.4f}" for t, C, _ in out))


def mixing(seed: int = 0) -> CriterionResult:
    m = _kinetic(64)
    gen = m.generator()
    gap = kinetic.spectral_gap(gen)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 10]))
    f0 = rng.random(gen.grid.size)
    f0 /= gen.grid.integrate(f0)
    t = np.linspace(1.0 / gap, 6.0 / gap, 40)
    rate = kinetic.relaxation_rate(gen, f0, t)
    mx = dyson.mixing_check(dyson.DysonModel(_params(d_res=4), L=32), 0.1)
    ok = rate >= 0.9 * gap and mx.rate > 0
    return CriterionResult(10, "mixing", bool(ok),
                           f"kinetic rate {rate:.4f} vs 0.9*gap {0.9 * gap:.4f}; ladder g {mx.rate:.4f} "
                           f"(kinetic gap {mx.kinetic_gap:.4f}, d_res=4)")


def lambda_scaling(seed: int = 0) -> CriterionResult:
    model = dyson.DysonModel(_params(d_res=4), L=32)
    p = model.fiber_momentum(0.05, 0.1)
    v1 = dyson.ladder_vertex(model, p, 1.3, 0.1).matrix
    v2 = dyson.ladder_vertex(model, p, 1.3, 0.2).matrix
    ratio2 = float(np.abs(v2 - 4 * v1).max() / np.abs(4 * v1).max())
    a = dyson.vertex_n2_norm(model, p, 2.0, 0.1, samples=4000, seed=seed)
    b = dyson.vertex_n2_norm(model, p, 2.0, 0.2, samples=4000, seed=seed + 1)
    ratio4 = b.estimate / a.estimate
    err = ratio4 * math.hypot(a.stderr / a.estimate, b.stderr / b.estimate)
    ok = ratio2 <= 1e-13 and abs(ratio4 - 16) <= 3 * err
    return CriterionResult(11, "lambda scaling", bool(ok),
                           f"n=1 deviation from x4 {ratio2:.1e}; n=2 ratio {ratio4:.3f} +- {err:.3f} (16)")


CRITERIA = (
    detailed_balance,
    gibbs_stationarity,
    einstein_relation,
    two_route_diffusion,
    ladder_limit,
    pole_consistency,
    diagram_combinatorics,
    combinatorial_bounds,
    combes_thomas,
    mixing,
    lambda_scaling,
)


def run_all(seed: int = 0, report=print) -> list:
    results = []
    for fn in CRITERIA:
        try:
            r = fn(seed)
        except Exception as exc:  # a crash is a failed criterion, reported as such
            num = CRITERIA.index(fn) + 1
            r = CriterionResult(num, fn.__name__.replace("_", " "), False, f"{type(exc).__name__}: {exc}")
        report(r.line())
        results.append(r)
    return results
