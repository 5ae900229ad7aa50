"""Linear Boltzmann generator on the momentum torus.

M^{kappa,F} = i kappa.grad eps - F.grad + G + L acting on grid functions over
[-pi, pi)^d, with gain (G f)(k) = sum_k' w R[k',k] f(k'), loss
(L f)(k) = -(sum_k' w R[k,k']) f(k) and R[k,k'] = psi(eps(k') - eps(k)).
Kinetic time absorbs the coupling, so no lambda appears anywhere here.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import linalg

from .errors import AssumptionViolation, ConfigError, NumericalError
from .lattice import DispersionLaw

KAPPA_CAP = 0.2
FIELD_CAP = 0.2


@dataclass(frozen=True)
class TorusGrid:
    d: int
    N: int

    def __post_init__(self):
        if self.N < 4 or self.N % 2:
            raise ConfigError("N must be an even integer >= 4")
        if self.d < 1:
            raise ConfigError("d must be positive")

    @cached_property
    def axis(self):
        return -math.pi + 2 * math.pi * np.arange(self.N) / self.N

    @cached_property
    def nodes(self):
        """Node coordinates, shape (N^d, d); axis 0 varies slowest."""
        return np.array(list(itertools.product(self.axis, repeat=self.d)))

    @property
    def weight(self) -> float:
        return (2 * math.pi / self.N) ** self.d

    @property
    def size(self) -> int:
        return self.N**self.d

    def integrate(self, f):
        return self.weight * np.sum(f, axis=-1)

    @cached_property
    def diff_matrices(self):
        """Fourier-collocation d/dk_j on the full grid, one matrix per axis."""
        N = self.N
        i = np.arange(N)
        dx = (i[:, None] - i[None, :]) * (2 * math.pi / N)
        with np.errstate(divide="ignore"):
            D1 = 0.5 * (-1.0) ** (i[:, None] - i[None, :]) / np.tan(dx / 2)
        D1[i, i] = 0.0
        eye = np.eye(N)
        out = []
        for j in range(self.d):
            mats = [D1 if a == j else eye for a in range(self.d)]
            M = mats[0]
            for m in mats[1:]:
                M = np.kron(M, m)
            out.append(M)
        return out

    def reflect_index(self):
        """Permutation sending the node k to -k (mod 2 pi)."""
        idx1 = (-np.arange(self.N)) % self.N
        grids = np.array(list(itertools.product(range(self.N), repeat=self.d)))
        refl = idx1[grids]
        return np.ravel_multi_index(refl.T, (self.N,) * self.d)


def rate_matrix(grid: TorusGrid, psd, eps: DispersionLaw):
    """R[k, k'] = psi(eps(k') - eps(k)) on the grid nodes."""
    e = eps(grid.nodes)
    R = np.asarray(psd(e[None, :] - e[:, None]), dtype=float)
    if R.shape != (grid.size, grid.size):
        R = np.broadcast_to(R, (grid.size, grid.size)).copy()
    if np.any(R < 0):
        raise ConfigError("rate matrix has negative entries")
    return R


@dataclass(frozen=True, eq=False)
class KineticGenerator:
    grid: TorusGrid
    kappa: tuple
    field: tuple
    gain: np.ndarray
    loss: np.ndarray
    transport: np.ndarray
    drift_term: np.ndarray
    velocity: np.ndarray  # grad eps on the nodes, shape (n, d)

    @cached_property
    def matrix(self):
        M = self.gain + self.transport
        M = M + np.diag(self.loss + self.drift_term)
        return M

    @cached_property
    def eigvals(self):
        return np.linalg.eigvals(self.matrix)


def _check_vector(v, d, cap, name):
    v = tuple(float(x) for x in np.atleast_1d(v))
    if len(v) == 1 and d > 1:
        v = v + (0.0,) * (d - 1)
    if len(v) != d:
        raise ConfigError(f"{name} must have {d} components")
    if np.linalg.norm(v) > cap + 1e-15:
        raise ConfigError(f"|{name}| = {np.linalg.norm(v):.3g} exceeds the cap {cap}")
    return v


def generator(grid: TorusGrid, rate, eps: DispersionLaw, kappa=0.0, field=0.0,
              kappa_cap: float = KAPPA_CAP, field_cap: float = FIELD_CAP) -> KineticGenerator:
    rate = np.asarray(rate, dtype=float)
    if rate.shape != (grid.size, grid.size):
        raise ConfigError(f"rate matrix shape {rate.shape} does not match grid size {grid.size}")
    if eps.d != grid.d:
        raise ConfigError("dispersion and grid dimensions differ")
    kappa = _check_vector(kappa, grid.d, kappa_cap, "kappa")
    field = _check_vector(field, grid.d, field_cap, "field")
    w = grid.weight
    vel = eps.grad(grid.nodes).reshape(grid.size, grid.d)
    gain = w * rate.T
    loss = -w * rate.sum(axis=1)
    transport = np.zeros((grid.size, grid.size))
    for j, Fj in enumerate(field):
        if Fj:
            transport -= Fj * grid.diff_matrices[j]
    drift = 1j * (vel @ np.asarray(kappa)) if any(kappa) else np.zeros(grid.size)
    return KineticGenerator(grid, kappa, field, gain, loss, transport, drift, vel)


class KineticModel:
    """Grid, dispersion and rate bundled so generator families are cheap to build."""

    def __init__(self, grid: TorusGrid, eps: DispersionLaw, psd=None, rate=None, beta=None,
                 kappa_cap: float = KAPPA_CAP, field_cap: float = FIELD_CAP):
        self.grid = grid
        self.eps = eps
        self.psd = psd
        self.rate = rate_matrix(grid, psd, eps) if rate is None else np.asarray(rate, dtype=float)
        self.beta = beta if beta is not None else getattr(psd, "beta", None)
        self.kappa_cap = kappa_cap
        self.field_cap = field_cap

    def generator(self, kappa=0.0, field=0.0) -> KineticGenerator:
        return generator(self.grid, self.rate, self.eps, kappa, field, self.kappa_cap, self.field_cap)

    def gibbs(self):
        e = self.eps(self.grid.nodes)
        g = np.exp(-self.beta * (e - e.min()))
        return g / self.grid.integrate(g)


def gibbs_residual(model: KineticModel) -> float:
    """||M^{0,0} (e^{-beta eps}/Z)||_2 (plain Euclidean norm of the grid vector)."""
    return float(np.linalg.norm(model.generator().matrix @ model.gibbs()))


def _sorted_spectrum(gen: KineticGenerator):
    mu = gen.eigvals
    return mu[np.argsort(-mu.real)]


def stationary_state(gen: KineticGenerator, simplicity_tol: float = 1e-8):
    """Normalised null vector of M^{0,F}: M zeta = 0, sum_k w zeta(k) = 1."""
    if any(gen.kappa):
        raise ConfigError("stationary_state needs kappa = 0")
    mu = _sorted_spectrum(gen)
    if mu.size > 1 and -mu[1].real <= simplicity_tol:
        raise NumericalError(f"null space not simple: second eigenvalue {mu[1]:.3e} (gap estimate {-mu[1].real:.3e})")
    n = gen.grid.size
    A = np.vstack([gen.matrix.real, np.full((1, n), gen.grid.weight)])
    b = np.zeros(n + 1)
    b[-1] = 1.0
    zeta, *_ = np.linalg.lstsq(A, b, rcond=None)
    if zeta.min() < -1e-10:
        raise NumericalError(f"stationary state has negative entries ({zeta.min():.3e})")
    return zeta


def spectral_gap(gen: KineticGenerator) -> float:
    """-max Re mu over the spectrum without the branch eigenvalue."""
    mu = _sorted_spectrum(gen)
    g = -float(mu[1].real)
    if not g > 0:
        raise AssumptionViolation(f"non-positive spectral gap {g:.3e}")
    return g


def drift(gen: KineticGenerator, zeta=None):
    """v^j = sum_k w d_j eps(k) zeta(k)."""
    if zeta is None:
        zeta = stationary_state(gen)
    return gen.grid.weight * (gen.velocity.T @ zeta)


def _bordered_solve(gen: KineticGenerator, zeta, rhs):
    # (-M) g = rhs with sum w g = 0; the border makes the system regular
    n = gen.grid.size
    A = np.zeros((n + 1, n + 1))
    A[:n, :n] = -gen.matrix.real
    A[:n, n] = zeta
    A[n, :n] = gen.grid.weight
    b = np.zeros((n + 1,) + rhs.shape[1:])
    b[:n] = rhs
    try:
        sol = linalg.solve(A, b)
    except linalg.LinAlgError as exc:
        raise NumericalError("reduced resolvent solve is singular") from exc
    return sol[:n]


def diffusion_gk(gen: KineticGenerator, zeta=None):
    """Green-Kubo tensor D^{ij} = sum_k w d_i eps g^j with (-M) g^j = d_j eps zeta."""
    if any(gen.kappa) or any(gen.field):
        raise ConfigError("diffusion_gk is the equilibrium route: kappa = 0 and field = 0")
    if zeta is None:
        zeta = stationary_state(gen)
    rhs = gen.velocity * zeta[:, None]
    g = _bordered_solve(gen, zeta, rhs)
    D = gen.grid.weight * (gen.velocity.T @ g)
    if np.max(np.abs(D - D.T)) > 1e-8 * np.abs(D).max():
        raise NumericalError("diffusion tensor is not symmetric")
    if np.linalg.eigvalsh(0.5 * (D + D.T)).min() <= 0:
        raise NumericalError("diffusion tensor is not positive definite")
    return D


def evolve(gen: KineticGenerator, f0, t, cond_max: float = 1e10):
    """exp(t M) f0 for scalar or array t. Returns (values, method)."""
    M = gen.matrix
    ts = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(ts < 0):
        raise ConfigError("evolve needs t >= 0")
    f0 = np.asarray(f0, dtype=complex)
    lam, V = np.linalg.eig(M)
    resid = np.linalg.norm(M @ V - V * lam) / max(np.linalg.norm(M), 1.0)
    cond = np.linalg.cond(V)
    if resid <= 1e-8 and cond <= cond_max:
        c = np.linalg.solve(V, f0)
        out = np.array([V @ (np.exp(lam * s) * c) for s in ts])
        method = "eig"
    else:
        out = np.array([linalg.expm(s * M) @ f0 for s in ts])
        method = "expm"
    if np.isrealobj(M) and np.isrealobj(np.asarray(f0).real):
        if np.max(np.abs(out.imag)) <= 1e-9 * max(1.0, np.max(np.abs(out))):
            out = out.real
    return (out[0] if np.ndim(t) == 0 else out), method


def fit_decay_rate(t, y) -> float:
    """Least-squares rate g in y ~ C exp(-g t)."""
    slope, _ = np.polyfit(np.asarray(t, float), np.log(np.asarray(y, float)), 1)
    return -float(slope)


def relaxation_rate(gen: KineticGenerator, f0, t_grid):
    """Fitted rate of ||exp(tM) f0 - zeta <1, f0>||_2 over t_grid."""
    zeta = stationary_state(gen)
    mass = gen.grid.integrate(f0)
    ft, _ = evolve(gen, f0, t_grid)
    dist = np.linalg.norm(ft - zeta * mass, axis=-1)
    return fit_decay_rate(t_grid, dist)


def velocity_autocorrelation(gen: KineticGenerator, t, zeta=None):
    """C(t) = <grad eps, exp(|t| M)(grad eps zeta)> for d = 1 (or axis 0)."""
    if zeta is None:
        zeta = stationary_state(gen)
    v = gen.velocity[:, 0]
    ft, _ = evolve(gen, v * zeta, np.abs(np.asarray(t, float)))
    return gen.grid.weight * (np.asarray(ft) @ v)


def diffusion_time_domain(gen: KineticGenerator, T: float | None = None, nodes: int = 400, panels: int = 8):
    """D = (1/2) int_{-T}^{T} C(t) dt by composite Gauss-Legendre (axis 0)."""
    zeta = stationary_state(gen)
    if T is None:
        T = 20.0 / spectral_gap(gen)
    x, w = leggauss(nodes // panels)
    edges = np.linspace(0.0, T, panels + 1)
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        tt = 0.5 * (b - a) * (x + 1) + a
        total += 0.5 * (b - a) * np.dot(w, velocity_autocorrelation(gen, tt, zeta))
    # C is even in t, so (1/2) int_{-T}^{T} = int_0^T
    return float(total)


@dataclass
class EigenBranch:
    kappas: np.ndarray
    values: np.ndarray
    right: list
    left: list


def eigen_branch(model: KineticModel, kappas, field=0.0, axis: int = 0) -> EigenBranch:
    """Track the isolated eigenvalue that equals 0 at kappa = 0 along kappa e_axis.

    ``kappas`` is walked outward from 0 in both directions; the eigenvalue
    closest to a linear predictor is taken, and a near-tie raises.
    """
    kappas = np.asarray(kappas, dtype=float)
    order = np.argsort(np.abs(kappas), kind="stable")
    vals = np.empty(kappas.size, dtype=complex)
    right = [None] * kappas.size
    left = [None] * kappas.size
    d = model.grid.d
    history = {+1: [(0.0, 0.0j)], -1: [(0.0, 0.0j)]}
    for idx in order:
        kap = kappas[idx]
        vec = np.zeros(d)
        vec[axis] = kap
        gen = model.generator(vec, field)
        mu, VL, VR = linalg.eig(gen.matrix, left=True, right=True)
        side = history[1 if kap >= 0 else -1]
        if len(side) >= 2:
            (k1, u1), (k2, u2) = side[-2], side[-1]
            pred = u2 + (u2 - u1) * (kap - k2) / (k2 - k1) if k2 != k1 else u2
        else:
            pred = side[-1][1]
        dist = np.abs(mu - pred)
        j = int(np.argmin(dist))
        others = np.delete(dist, j)
        step = max(abs(kap - side[-1][0]), 1e-12)
        if others.size and others.min() < max(10 * dist[j], 1e-3 * step):
            raise NumericalError(
                f"branch crossing near kappa={kap:.4g}: chosen {mu[j]:.6g}, competitor at distance {others.min():.3e}"
            )
        vals[idx] = mu[j]
        r = VR[:, j]
        l = VL[:, j]
        l = l / np.conj(np.vdot(l, r))  # <l, r> = 1
        right[idx], left[idx] = r, l
        if kap != 0.0:
            side.append((kap, mu[j]))
        else:
            for s in (1, -1):
                history[s][-1] = (0.0, mu[j])
    return EigenBranch(kappas, vals, right, left)


def _richardson_second(fun, h: float, levels: int = 3):
    """f''(0) from central differences at h, h/2, ... with Richardson."""
    f0 = fun(0.0)
    col = []
    for i in range(levels):
        s = h / 2**i
        col.append((fun(s) + fun(-s) - 2 * f0) / (s * s))
    for j in range(1, levels):
        f = 4.0**j
        col = [(f * col[i + 1] - col[i]) / (f - 1) for i in range(len(col) - 1)]
    return col[0]


def _richardson_first(fun, h: float, levels: int = 3):
    col = []
    for i in range(levels):
        s = h / 2**i
        col.append((fun(s) - fun(-s)) / (2 * s))
    for j in range(1, levels):
        f = 4.0**j
        col = [(f * col[i + 1] - col[i]) / (f - 1) for i in range(len(col) - 1)]
    return col[0]


def branch_derivatives(model: KineticModel, field=0.0, h: float = 1e-2, levels: int = 3):
    """(v_from_branch, D_from_branch) along each axis.

    u(kappa) ~ i kappa.v - (kappa, D kappa): v^j = Im du/dkappa_j and
    D^{jj} = -(1/2) d^2 Re u / dkappa_j^2. Off-diagonal entries use the mixed
    second difference along e_i + e_j.
    """
    d = model.grid.d
    steps = np.concatenate([-h / 2.0 ** np.arange(levels), [0.0], h / 2.0 ** np.arange(levels)])
    v = np.zeros(d)
    D = np.zeros((d, d))
    cache = {}

    def u_axis(j):
        if j not in cache:
            br = eigen_branch(model, steps, field, axis=j)
            cache[j] = dict(zip(np.round(br.kappas, 15), br.values))
        return lambda s: cache[j][round(s, 15)]

    for j in range(d):
        u = u_axis(j)
        v[j] = _richardson_first(lambda s: u(s).imag, h, levels)
        D[j, j] = -0.5 * _richardson_second(lambda s: u(s).real, h, levels)
    for i in range(d):
        for j in range(i + 1, d):
            def u_diag(s, i=i, j=j):
                vec = np.zeros(d)
                vec[i] = vec[j] = s
                return _track_single(model, vec, field)
            second = _richardson_second(lambda s: u_diag(s).real, h, levels)
            D[i, j] = D[j, i] = -0.5 * (second - (-2 * D[i, i]) - (-2 * D[j, j])) / 2
    return v, D


def _track_single(model, vec, field):
    mu = model.generator(vec, field).eigvals
    return mu[np.argmin(np.abs(mu))]


def drift_curve(model: KineticModel, field_values, axis: int = 0):
    """v^axis(F e_axis) for each value in field_values."""
    out = []
    for F in field_values:
        vec = np.zeros(model.grid.d)
        vec[axis] = F
        gen = model.generator(0.0, vec)
        out.append(drift(gen)[axis])
    return np.array(out)


@dataclass
class EinsteinResult:
    beta: float
    N: int
    h: float
    dvdF: float
    betaD: float
    residual: float


def einstein_residual(model: KineticModel, h: float = 1e-3, levels: int = 3) -> EinsteinResult:
    """max_ij |dv^j/dF^i - beta D^{ij}| / (beta D^{ij}) on the diagonal of the isotropic default."""
    if model.beta is None:
        raise ConfigError("einstein_residual needs a finite beta")
    D = diffusion_gk(model.generator())
    worst = None
    for i in range(model.grid.d):
        def v_of(F, i=i):
            vec = np.zeros(model.grid.d)
            vec[i] = F
            return drift(model.generator(0.0, vec))[i]
        dv = _richardson_first(v_of, h, levels)
        bD = model.beta * D[i, i]
        res = abs(dv - bD) / abs(bD)
        if worst is None or res > worst.residual:
            worst = EinsteinResult(model.beta, model.grid.N, h, float(dv), float(bD), float(res))
    return worst
