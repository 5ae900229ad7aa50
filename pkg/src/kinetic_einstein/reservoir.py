"""Thermal reservoir: correlation function, spectral density, decay certificate.

The reservoir enters the rest of the package only through two functions:

* ``correlation(params, z)``: the time correlation psi_hat(z), defined on the
  strip 0 <= Im z <= beta by a radial integral over momenta,
* ``psd(params, E)``: its Fourier transform, the spectral density psi(E),
  available in closed form.

The momentum integral uses plain Lebesgue measure; the angular part for a
spherically symmetric form factor is the surface area of the unit sphere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import roots_legendre
from scipy import integrate

from .errors import AssumptionViolation, ConfigError, DomainError

PROFILES = ("gaussian", "gaussian_linear")


def sphere_area(m: int) -> float:
    """Surface area of the unit m-sphere in R^{m+1}."""
    n = m + 1
    return 2.0 * math.pi ** (n / 2.0) / math.gamma(n / 2.0)


@dataclass(frozen=True)
class FormFactor:
    """Radial coupling profile phi(r).

    ``gaussian``        phi(r) = exp(-r^2 / (2 sigma^2))
    ``gaussian_linear`` phi(r) = (r/sigma) exp(-r^2 / (2 sigma^2))   (phi(0) = 0)
    """

    profile: str = "gaussian"
    sigma: float = 1.0
    d_res: int = 3

    def __post_init__(self):
        if self.profile not in PROFILES:
            raise ConfigError(f"unknown form factor profile {self.profile!r}; choose from {PROFILES}")
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise ConfigError("form factor width sigma must be positive")
        if int(self.d_res) != self.d_res or self.d_res < 1:
            raise ConfigError("reservoir dimension d_res must be a positive integer")
        if self.d_res == 1 and self(0.0) != 0.0:
            # psi(E) ~ |phi(0)|^2 / (beta |E|) near 0: unbounded spectral density
            raise AssumptionViolation("d_res = 1 requires phi(0) = 0; the spectral density is unbounded otherwise")

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        g = np.exp(-(r * r) / (2.0 * self.sigma**2))
        if self.profile == "gaussian_linear":
            g = g * (r / self.sigma)
        return g

    def natural_cutoff(self) -> float:
        """Radius beyond which r^{d-1} |phi(r)|^2 is below 1e-18 of its scale."""
        return self.sigma * (9.0 + 0.5 * self.d_res)


@dataclass(frozen=True)
class ReservoirParams:
    beta: float = 1.0
    form_factor: FormFactor = field(default_factory=FormFactor)
    quad_nodes: int = 1024
    cutoff: float | None = None

    def __post_init__(self):
        if not (self.beta > 0 and math.isfinite(self.beta)):
            raise ConfigError("beta must be positive and finite")
        if self.quad_nodes < 16:
            raise ConfigError("quad_nodes must be at least 16")
        if self.cutoff is None:
            object.__setattr__(self, "cutoff", self.form_factor.natural_cutoff())
        if not self.cutoff > 0:
            raise ConfigError("cutoff must be positive")
        # tail check: the radial weight at the cutoff must be negligible
        ff = self.form_factor
        rr = np.linspace(0.0, self.cutoff, 2001)
        dens = rr ** (ff.d_res - 1) * ff(rr) ** 2
        scale = max(dens.max(), 1e-300)
        if dens[-1] > 1e-16 * scale:
            raise ConfigError(
                f"cutoff {self.cutoff} too small: tail weight {dens[-1] / scale:.2e} relative to peak"
            )

    @property
    def d_res(self) -> int:
        return self.form_factor.d_res


def _bose(x, beta):
    """n_beta(x) = 1/(exp(beta x) - 1) for x > 0."""
    return 1.0 / np.expm1(beta * x)


def _bose_plus_one(x, beta):
    """1 + n_beta(x) for x > 0, written to avoid cancellation."""
    return -1.0 / np.expm1(-beta * x)


def psd(params: ReservoirParams, E):
    """Spectral density psi(E), closed form; vectorised over ``E``."""
    E = np.asarray(E, dtype=float)
    ff = params.form_factor
    d = ff.d_res
    a = np.abs(E)
    radial = sphere_area(d - 1) * a ** (d - 1) * ff(a) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        occ = np.where(E > 0, _bose(a, params.beta), _bose_plus_one(a, params.beta))
        out = radial * occ
    zero = E == 0
    if np.any(zero):
        # continuous limit: |E|^{d-2} |phi(|E|)|^2 / beta at E -> 0
        lim = sphere_area(d - 1) * ff(0.0) ** 2 / params.beta if d == 2 else 0.0
        out = np.where(zero, lim, out)
    return out if out.ndim else float(out)


class SpectralDensity:
    """Callable wrapper bundling psi and psi_hat for one parameter set."""

    def __init__(self, params: ReservoirParams, scale: float = 1.0):
        self.params = params
        self.scale = float(scale)

    @property
    def beta(self) -> float:
        return self.params.beta

    def __call__(self, E):
        return self.scale * psd(self.params, E)

    def correlation(self, z):
        return self.scale * correlation(self.params, z)

    def laplace(self, w):
        return self.scale * laplace_correlation(self.params, w)

    def scaled(self, c: float) -> "SpectralDensity":
        return SpectralDensity(self.params, self.scale * c)


class _RadialRule:
    """Gauss-Legendre nodes on [0, cutoff] with the reservoir weights folded in."""

    def __init__(self, params: ReservoirParams, nodes: int):
        x, w = roots_legendre(nodes)
        R = params.cutoff
        r = 0.5 * R * (x + 1.0)
        w = 0.5 * R * w
        ff = params.form_factor
        base = w * sphere_area(ff.d_res - 1) * r ** (ff.d_res - 1) * ff(r) ** 2
        self.r = r
        self.wn = base * _bose(r, params.beta)
        self.wn1 = base * _bose_plus_one(r, params.beta)


_RULES: dict = {}


def _rule(params: ReservoirParams, nodes: int) -> _RadialRule:
    key = (params, nodes)
    if key not in _RULES:
        _RULES[key] = _RadialRule(params, nodes)
    return _RULES[key]


def correlation(params: ReservoirParams, z, nodes: int | None = None):
    """psi_hat(z) for z in the strip 0 <= Im z <= beta, by radial quadrature."""
    z = np.asarray(z, dtype=complex)
    tol = 1e-12 * max(1.0, params.beta)
    if np.any(z.imag < -tol) or np.any(z.imag > params.beta + tol):
        raise DomainError("correlation is defined only for 0 <= Im z <= beta")
    rule = _rule(params, nodes or params.quad_nodes)
    flat = z.reshape(-1)
    out = np.empty(flat.shape, dtype=complex)
    # chunk to keep the (n_z, n_r) phase matrix small
    step = max(1, 2_000_000 // rule.r.size)
    for i in range(0, flat.size, step):
        zr = np.outer(flat[i : i + step], rule.r)
        out[i : i + step] = np.exp(-1j * zr) @ rule.wn + np.exp(1j * zr) @ rule.wn1
    out = out.reshape(z.shape)
    return out if out.ndim else complex(out)


def laplace_correlation(params: ReservoirParams, w, rel_tol: float = 1e-11):
    """F(w) = int_0^inf exp(-w t) psi_hat(t) dt for Re w >= 0.

    Evaluated through the spectral representation F(w) = int psi(E)/(w + iE) dE,
    which stays exact when psi_hat decays only algebraically. On Re w = 0 the
    value is pi psi(-Im w) - i PV int psi(E)/(E + Im w) dE.
    """
    w = np.asarray(w, dtype=complex)
    if np.any(w.real < 0):
        raise DomainError("laplace_correlation requires Re w >= 0")
    A = params.cutoff
    flat = w.reshape(-1)
    out = np.empty(flat.shape, dtype=complex)
    cache: dict = {}
    for i, wi in enumerate(flat):
        key = (wi.real, wi.imag)
        if key not in cache:
            cache[key] = _laplace_scalar(params, wi.real, wi.imag, A, rel_tol)
        out[i] = cache[key]
    out = out.reshape(w.shape)
    return out if out.ndim else complex(out)


def is_analytic(params: ReservoirParams) -> bool:
    """psi(E) = |E|^{d-2} E n(E) |phi(|E|)|^2 S is real-analytic iff d_res is even
    (both shipped profiles have |phi|^2 even in r)."""
    return params.d_res % 2 == 0


def _psd_scalar(params: ReservoirParams):
    """Plain-float version of ``psd`` for scalar quadrature integrands."""
    ff = params.form_factor
    d = ff.d_res
    S = sphere_area(d - 1)
    beta = params.beta
    inv2s2 = 1.0 / (2.0 * ff.sigma**2)
    linear = ff.profile == "gaussian_linear"
    lim = S * (0.0 if linear else 1.0) / beta if d == 2 else 0.0

    def f(E):
        if E == 0.0:
            return lim
        a = abs(E)
        phi2 = math.exp(-2.0 * a * a * inv2s2)
        if linear:
            phi2 *= (a / ff.sigma) ** 2
        occ = 1.0 / math.expm1(beta * a) if E > 0 else -1.0 / math.expm1(-beta * a)
        return S * a ** (d - 1) * phi2 * occ

    return f


def _laplace_scalar(params, delta, eta, A, rel_tol):
    # F = -i int psi(E)/(E - x - i delta) dE with x = -eta; subtract psi(x) to
    # remove the (near-)singularity, then add the analytic remainder.
    x = -eta
    ps = _psd_scalar(params)
    px = ps(x) if abs(x) < A else 0.0
    pts = sorted({0.0, min(max(x, -A), A)})
    kw = dict(points=pts, limit=400, epsabs=0.0, epsrel=rel_tol)
    if delta == 0.0:

        def g(E):
            dE = E - x
            return 0.0 if dE == 0.0 else (ps(E) - px) / dE

        pv, _ = integrate.quad(g, -A, A, **kw)
        if px != 0.0:
            pv += px * math.log(abs(A - x) / abs(A + x))
        return complex(math.pi * px, -pv)
    zeta = complex(x, delta)

    def gr(E):
        return ((ps(E) - px) / (E - zeta)).real

    def gi(E):
        return ((ps(E) - px) / (E - zeta)).imag

    re, _ = integrate.quad(gr, -A, A, **kw)
    im, _ = integrate.quad(gi, -A, A, **kw)
    s = complex(re, im)
    if px != 0.0:
        s += px * (np.log(A - zeta) - np.log(-A - zeta))
    return -1j * s


def psd_fourier(params: ReservoirParams, E, eps0: float = 2e-3, levels: int = 5, dt: float = 0.2):
    """Independent route to psi(E): damped Fourier transform of psi_hat.

    psi_eps(E) = (1/2pi) int psi_hat(t) exp(itE - eps t^2) dt is the closed form
    smoothed by a Gaussian of variance 2 eps, so it is a power series in eps
    away from E = 0; Richardson extrapolation over eps0/2^j removes it.
    """
    E = np.atleast_1d(np.asarray(E, dtype=float))
    eps = eps0 / 2.0 ** np.arange(levels)
    T = math.sqrt(40.0 / eps[-1])
    t = np.arange(0.0, T + dt, dt)
    # radial rule fine enough to resolve exp(i t r) up to t = T
    nodes = int(1.2 * T * params.cutoff) + 256
    ph = correlation(params, t, nodes=nodes)
    wt = np.full(t.size, 2.0)
    wt[0] = 1.0
    phase = np.exp(1j * np.outer(E, t))
    table = []
    for e in eps:
        damp = wt * np.exp(-e * t * t)
        table.append((dt / (2 * math.pi)) * (phase @ (damp * ph)).real)
    # Richardson: error expansion in powers of eps, ratio 2
    for j in range(1, levels):
        f = 2.0**j
        table = [(f * table[i + 1] - table[i]) / (f - 1.0) for i in range(len(table) - 1)]
    return table[0]


def decay_fit(params: ReservoirParams, t_max: float, n_samples: int):
    """Fit log|psi_hat(t)| ~ log C - g t over [1, t_max]; returns (C, g)."""
    if not t_max > 1.0:
        raise ConfigError("t_max must exceed 1")
    if n_samples < 8:
        raise ConfigError("n_samples must be at least 8")
    t = np.linspace(1.0, t_max, n_samples)
    nodes = max(params.quad_nodes, int(1.2 * t_max * params.cutoff) + 256)
    y = np.log(np.abs(correlation(params, t, nodes=nodes)))
    slope, intercept = np.polyfit(t, y, 1)
    g = -float(slope)
    if not g > 0:
        raise AssumptionViolation(f"reservoir correlation does not decay: fitted rate {g:.3e}")
    return float(math.exp(intercept)), g
