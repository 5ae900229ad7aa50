"""Fiber-resolved reduced dynamics at ladder order.

Density matrices on the periodic box {0..L-1}^d are expanded in plane waves
|k + p/2><k - p/2|, k on the kinetic momentum grid.  For a fiber momentum p
that is not a lattice momentum the left and right plane waves live on grids
twisted by +p/2 and -p/2; the twisted free Hamiltonians have them as exact
eigenvectors, so every translation-covariant super-operator leaves the span
of a fiber invariant and its fiber block is read off exactly.

Conventions used throughout:

* the free Liouvillian is L_S rho = -i [H, rho]; its fiber symbol is
  -i Omega_p(k) - lambda^2 F.grad with Omega_p(k) = eps(k + p/2) - eps(k - p/2);
* the kinetic momentum kappa sits at fiber p = -lambda^2 kappa, which turns
  lambda^-2 (L_S)_p into +i kappa.grad eps;
* the ladder vertex is sum_{s1,s2} lambda^2 h(0, t, s1, s2) sum_x Pi_{x,s2} U_t Pi_{x,s1}.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field as dc_field
from functools import cached_property

import numpy as np
from scipy.special import roots_legendre

from . import diagrams
from .diagrams import LEFT, RIGHT, SIDE_ORDER_AS_PRINTED, SIDE_ORDER_TIME_MATCHED
from .errors import AssumptionViolation, ConfigError, InsufficientSamples, NumericalError
from .kinetic import KineticModel, TorusGrid, eigen_branch, spectral_gap
from .lattice import DispersionLaw
from .reservoir import ReservoirParams, SpectralDensity, correlation, decay_fit, is_analytic, laplace_correlation

TAIL_TOL = 1e-10


@dataclass(frozen=True)
class PeriodicFiberBasis:
    """Momentum grid of the periodic box and the plane-wave pairs of each fiber."""

    d: int
    L: int
    eps: DispersionLaw

    def __post_init__(self):
        if self.eps.d != self.d:
            raise ConfigError("dispersion and box dimensions differ")
        if self.L < 4 or self.L % 2:
            raise ConfigError("L must be an even integer >= 4")

    @cached_property
    def grid(self) -> TorusGrid:
        return TorusGrid(self.d, self.L)

    @property
    def size(self) -> int:
        return self.L**self.d

    @cached_property
    def _multi(self):
        return np.array(list(itertools.product(range(self.L), repeat=self.d)), dtype=int)

    @cached_property
    def shift_table(self):
        """table[m, j] = flat index of multi-index j + m (mod L)."""
        mi = self._multi
        s = (mi[:, None, :] + mi[None, :, :]) % self.L
        return np.ravel_multi_index(tuple(np.moveaxis(s, -1, 0)), (self.L,) * self.d)

    @cached_property
    def neg_index(self):
        """flat index of -m (mod L)."""
        mi = (-self._multi) % self.L
        return np.ravel_multi_index(tuple(mi.T), (self.L,) * self.d)

    @cached_property
    def sites(self):
        return self._multi.astype(float)

    def momentum(self, p):
        p = np.asarray(p, dtype=float).reshape(self.d)
        return self.grid.nodes + p / 2, self.grid.nodes - p / 2

    def energies(self, p):
        kp, km = self.momentum(p)
        return self.eps(kp), self.eps(km)

    def plane_waves(self, p):
        """Unitary matrices whose columns are the left and right plane waves."""
        kp, km = self.momentum(p)
        x = self.sites
        norm = self.size**-0.5
        return norm * np.exp(1j * x @ kp.T), norm * np.exp(1j * x @ km.T)

    def embed(self, p, f):
        """sum_k f(k) |k + p/2><k - p/2| as a position-space matrix; f may be (n, ...)."""
        Bp, Bm = self.plane_waves(p)
        f = np.asarray(f, dtype=complex)
        return np.einsum("xa,a...,ya->...xy", Bp, f, Bm.conj())

    def coefficients(self, p, rho):
        """Plane-wave coefficients C[a, b] of rho, batched over leading axes."""
        Bp, Bm = self.plane_waves(p)
        return Bp.conj().T @ rho @ Bm

    def extract(self, p, rho):
        """Fiber-p component (diagonal of the coefficient matrix)."""
        return np.diagonal(self.coefficients(p, rho), axis1=-2, axis2=-1)

    def leakage(self, p, rho) -> float:
        """Largest coefficient outside fiber p."""
        C = self.coefficients(p, rho)
        off = C - np.einsum("...aa->...a", C)[..., None] * np.eye(self.size)
        return float(np.abs(off).max())


@dataclass(frozen=True, eq=False)
class FiberOperator:
    """Operator on functions of k for one fiber p."""

    p: tuple
    matrix: np.ndarray
    meta: dict = dc_field(default_factory=dict)

    def __matmul__(self, other):
        if isinstance(other, FiberOperator):
            return FiberOperator(self.p, self.matrix @ other.matrix, {})
        return self.matrix @ other

    def norm(self) -> float:
        return float(np.linalg.norm(self.matrix, 2))


def _as_vector(v, d, name):
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if v.size == 1 and d > 1:
        v = np.concatenate([v, np.zeros(d - 1)])
    if v.size != d:
        raise ConfigError(f"{name} must have {d} components")
    return v


def _pair_weights(psi_t, side_order):
    """Coefficients of the four (s1, s2) ladder terms given psi_hat(t), t >= 0."""
    fwd, bwd = psi_t, np.conj(psi_t)  # psi_hat(t), psi_hat(-t)
    if side_order == SIDE_ORDER_TIME_MATCHED:
        lr, rl = bwd, fwd
    elif side_order == SIDE_ORDER_AS_PRINTED:
        lr, rl = fwd, bwd
    else:
        raise ConfigError(f"unknown side order {side_order!r}")
    return {(LEFT, LEFT): -bwd, (RIGHT, RIGHT): -fwd, (LEFT, RIGHT): lr, (RIGHT, LEFT): rl}


class DysonModel:
    """Reservoir, dispersion and box bundled with caches for the ladder objects."""

    def __init__(self, params: ReservoirParams, eps: DispersionLaw | None = None, d: int = 1,
                 L: int = 32, T_cut: float = 48.0, side_order: str = SIDE_ORDER_TIME_MATCHED,
                 panel_nodes: int = 24):
        eps = DispersionLaw.laplacian(d) if eps is None else eps
        self.params = params
        self.psd = SpectralDensity(params)
        self.basis = PeriodicFiberBasis(d, L, eps)
        self.T_cut = float(T_cut)
        if side_order not in (SIDE_ORDER_TIME_MATCHED, SIDE_ORDER_AS_PRINTED):
            raise ConfigError(f"unknown side order {side_order!r}")
        self.side_order = side_order
        self.panel_nodes = int(panel_nodes)
        self._stacks: dict = {}

    @property
    def d(self) -> int:
        return self.basis.d

    @property
    def analytic(self) -> bool:
        return is_analytic(self.params)

    def fiber_momentum(self, kappa, lam) -> np.ndarray:
        return -(lam**2) * _as_vector(kappa, self.d, "kappa")

    def kinetic_model(self) -> KineticModel:
        """Kinetic generator on the same grid; the (2 pi)^(1-d) factor matches fiber normalisation."""
        scale = (2 * math.pi) ** (1 - self.d)
        return KineticModel(self.basis.grid, self.basis.eps, psd=self.psd.scaled(scale))

    @cached_property
    def time_nodes(self):
        x, w = roots_legendre(self.panel_nodes)
        panels = max(1, math.ceil(self.T_cut))
        edges = np.linspace(0.0, self.T_cut, panels + 1)
        h = np.diff(edges)
        t = (edges[:-1, None] + h[:, None] * (x[None, :] + 1) / 2).ravel()
        wt = (h[:, None] * w[None, :] / 2).ravel()
        return t, wt

    @cached_property
    def psi_hat_nodes(self):
        return np.asarray(correlation(self.params, self.time_nodes[0]), dtype=complex)

    @cached_property
    def tail_certificate(self):
        """(C, g) with |psi_hat(t)| <= C exp(-g t), fitted from t = 1 up to where
        |psi_hat| falls below 1e-10 |psi_hat(0)| (beyond that only roundoff is left)."""
        t_end = max(2.0, min(self.T_cut, _memory_length(self)))
        return decay_fit(self.params, t_end, 200)

    def check_tail(self, lam, re_z: float = 0.0):
        if not self.analytic:
            raise ConfigError(
                "time-domain ladder quadrature needs an exponentially decaying psi_hat; "
                f"d_res={self.params.d_res} gives an algebraic tail (use an even d_res)"
            )
        C, g = self.tail_certificate
        rate = g / 3 + re_z
        bound = C * lam**2 * math.exp(-rate * self.T_cut) if rate > 0 else math.inf
        if not bound < TAIL_TOL:
            raise ConfigError(
                f"tail bound {bound:.3e} >= {TAIL_TOL:g} at T_cut={self.T_cut}; increase dyson.T_cut"
            )
        return bound

    def free_generator(self, p, lam, field=0.0) -> np.ndarray:
        """(L_S)_p = -i Omega_p - lambda^2 F.grad on the fiber grid."""
        Ep, Em = self.basis.energies(p)
        G = np.diag(-1j * (Ep - Em)).astype(complex)
        F = _as_vector(field, self.d, "field")
        for j, Fj in enumerate(F):
            if Fj:
                G -= lam**2 * Fj * self.basis.grid.diff_matrices[j]
        return G


def _trig_shift_matrix(basis: PeriodicFiberBasis, delta) -> np.ndarray:
    """Matrix of f -> f(k - delta) through trigonometric interpolation on the grid."""
    L, d = basis.L, basis.d
    n = basis.size
    freqs = np.fft.fftfreq(L, d=1.0 / L)
    eye = np.eye(n).reshape((L,) * d + (n,))
    spec = np.fft.fftn(eye, axes=tuple(range(d)))
    for j in range(d):
        shape = [1] * (d + 1)
        shape[j] = L
        spec = spec * np.exp(-1j * freqs * delta[j]).reshape(shape)
    return np.fft.ifftn(spec, axes=tuple(range(d))).reshape(n, n)


def _diagonal_propagators(model: DysonModel, p, t, lam, field, diagonals=None):
    """Free propagators along the coefficient diagonals b = a - m.

    Returns an array P[m] (n x n) acting on vectors indexed by a.  At zero
    field each P[m] is diagonal; otherwise the characteristics
    f(k, t) = f(k - c t, 0) exp(-i int_0^t Omega(k - c (t - s)) ds), c = lambda^2 F,
    are followed with trigonometric interpolation for the shift.
    """
    basis = model.basis
    n = basis.size
    diagonals = np.arange(n) if diagonals is None else np.asarray(diagonals)
    kp, km = basis.momentum(p)
    c = lam**2 * _as_vector(field, basis.d, "field")
    bidx = basis.shift_table[basis.neg_index[diagonals]]  # index of a - m, shape (nm, n)
    if not np.any(c) or t == 0:
        omega = basis.eps(kp)[None, :] - basis.eps(km)[bidx]
        ph = np.exp(-1j * t * omega)
        P = np.zeros((len(diagonals), n, n), dtype=complex)
        P[:, np.arange(n), np.arange(n)] = ph
        return P
    nq = max(16, int(4 * np.abs(c).max() * abs(t)) + 8)
    x, w = roots_legendre(nq)
    s = t * (x + 1) / 2
    ws = t * w / 2
    phase = np.zeros((len(diagonals), n), dtype=complex)
    for si, wi in zip(s, ws):
        off = c * (t - si)
        e_left = basis.eps(kp - off)
        e_right = basis.eps(km - off)
        phase += wi * (e_left[None, :] - e_right[bidx])
    S = _trig_shift_matrix(basis, c * t)
    return np.exp(-1j * phase)[:, :, None] * S[None, :, :]


def free_fiber_propagator(model: DysonModel, p, t, lam, field=0.0) -> FiberOperator:
    """exp(t (L_S)_p) along characteristics; exact group property at zero field."""
    P = _diagonal_propagators(model, p, t, lam, field, diagonals=[0])[0]
    return FiberOperator(tuple(np.atleast_1d(p)), P, {"t": t})


def _vertex_shift(model: DysonModel, p, t, lam, field, psi_t):
    """Ladder vertex with site sums resolved into momentum shifts."""
    basis = model.basis
    n = basis.size
    tbl = basis.shift_table
    neg = basis.neg_index
    P = _diagonal_propagators(model, p, t, lam, field)
    w = _pair_weights(psi_t, model.side_order)
    V = np.zeros((n, n), dtype=complex)
    cols = np.arange(n)
    for m in range(n):
        Pm = P[m]
        Pneg = P[neg[m]]
        src = tbl[m]  # j + m
        # (L, L): S_{-m} P_m S_m ; (L, R): P_m S_m
        PmS = Pm[:, src]
        V += w[(LEFT, LEFT)] * PmS[tbl[m], :]
        V += w[(LEFT, RIGHT)] * PmS
        # (R, R): P_{-m} ; (R, L): S_m P_{-m}
        V += w[(RIGHT, RIGHT)] * Pneg
        shifted = np.zeros_like(Pneg)
        shifted[src, :] = Pneg[cols, :]
        V += w[(RIGHT, LEFT)] * shifted
    return lam**2 * V / n


def _vertex_closed(model: DysonModel, p, t, lam, psi_t):
    """Zero-field ladder vertex in closed form."""
    Ep, Em = model.basis.energies(p)
    E = np.exp(-1j * t * (Ep[:, None] - Em[None, :]))
    return _kernel_from_laplace(psi_t * E, np.conj(psi_t) * E, model.side_order, lam, model.basis.size)


def _kernel_from_laplace(Fab, Gab, side_order, lam, n):
    """Assemble the fiber matrix from F[a, b] = F(z + i(Ep[a] - Em[b])) and the
    matching values of G(w) = conj F(conj w); at a fixed time the same algebra
    applies with psi_hat(+-t) exp(-i t (Ep[a] - Em[b]))."""
    loss = -np.diag(Gab.sum(axis=0)) - np.diag(Fab.sum(axis=1))
    if side_order == SIDE_ORDER_TIME_MATCHED:
        gain = Gab + Fab.T
    else:
        gain = Fab + Gab.T
    return lam**2 * (loss + gain) / n


def _vertex_superoperator(model: DysonModel, p, t, lam):
    """Build sum_x Pi U_t Pi on L x L density matrices and read off fiber p."""
    basis = model.basis
    n = basis.size
    Bp, Bm = basis.plane_waves(p)
    Ep, Em = basis.energies(p)
    ph = np.exp(-1j * t * (Ep[:, None] - Em[None, :]))
    Bph, Bmh = Bp.conj().T, Bm.conj().T

    def U(r):
        return Bp @ ((Bph @ r @ Bm) * ph) @ Bmh

    rho = basis.embed(p, np.eye(n))  # (n inputs, n, n)
    h = {}
    for s1, s2 in itertools.product((LEFT, RIGHT), repeat=2):
        a, b = (s1, s2) if model.side_order == SIDE_ORDER_TIME_MATCHED else (s2, s1)
        h[(s1, s2)] = diagrams.h_real_time(0.0, t, a, b, model.psd)
    out = np.zeros_like(rho)
    for x in range(n):
        left_in = np.zeros_like(rho)
        left_in[:, x, :] = rho[:, x, :]
        right_in = np.zeros_like(rho)
        right_in[:, :, x] = rho[:, :, x]
        for s1, inp in ((LEFT, left_in), (RIGHT, right_in)):
            v = U(inp)
            out[:, x, :] += h[(s1, LEFT)] * v[:, x, :]
            out[:, :, x] += h[(s1, RIGHT)] * v[:, :, x]
    leak = basis.leakage(p, out)
    scale = max(1.0, float(np.abs(out).max()))
    if leak > 1e-10 * scale:
        raise NumericalError(f"fiber block extraction leaked {leak:.3e}")
    return lam**2 * basis.extract(p, out).T  # column j is the image of e_j


def ladder_vertex(model: DysonModel, p, t, lam, field=0.0, method: str = "superoperator") -> FiberOperator:
    """V^(1)_[0,t] restricted to fiber p.

    ``superoperator`` builds the operator on the L^(2d)-dimensional matrix
    space and extracts the block; ``shift`` resolves the site sums into
    momentum shifts (needed for a nonzero field); ``closed`` is the
    zero-field formula.
    """
    if t < 0:
        raise ConfigError("vertex time must be non-negative")
    psi_t = complex(correlation(model.params, t))
    has_field = np.any(_as_vector(field, model.d, "field"))
    if method == "superoperator":
        if has_field:
            raise ConfigError("the position-space route has no field term; use method='shift'")
        M = _vertex_superoperator(model, p, t, lam)
    elif method == "shift":
        M = _vertex_shift(model, p, t, lam, field, psi_t)
    elif method == "closed":
        if has_field:
            raise ConfigError("the closed form holds at zero field only")
        M = _vertex_closed(model, p, t, lam, psi_t)
    else:
        raise ConfigError(f"unknown vertex method {method!r}")
    return FiberOperator(tuple(np.atleast_1d(p)), M, {"t": t, "method": method})


def _vertex_stack(model: DysonModel, p, lam, field):
    """V_t / lambda^2 on the composite Gauss-Legendre time nodes."""
    c = lam**2 * _as_vector(field, model.d, "field")
    key = (tuple(np.round(np.atleast_1d(p), 15)), tuple(np.round(c, 15)))
    if key not in model._stacks:
        t, _ = model.time_nodes
        psi = model.psi_hat_nodes
        if np.any(c):
            stack = np.array([_vertex_shift(model, p, ti, lam, field, pi) / lam**2 for ti, pi in zip(t, psi)])
        else:
            stack = np.array([_vertex_closed(model, p, ti, 1.0, pi) for ti, pi in zip(t, psi)])
        if len(model._stacks) > 16:
            model._stacks.clear()
        model._stacks[key] = stack
    return model._stacks[key]


def ladder_transfer(model: DysonModel, p, z, lam, field=0.0, route: str = "auto") -> FiberOperator:
    """M(z)_p = int_0^inf e^{-z t} V^(1)_[0,t] dt.

    ``spectral`` (zero field, Re z >= 0) uses exact Laplace transforms of
    psi_hat and works for algebraic tails; ``time`` integrates the vertex on
    [0, T_cut] and needs the exponential tail certificate.
    """
    z = complex(z)
    has_field = bool(np.any(_as_vector(field, model.d, "field")))
    if route == "auto":
        route = "time" if (model.analytic or has_field) else "spectral"
    if route == "spectral":
        if has_field:
            raise ConfigError("the spectral route holds at zero field only")
        if z.real < 0:
            raise AssumptionViolation("M(z) with an algebraic reservoir tail is defined for Re z >= 0 only")
        Ep, Em = model.basis.energies(p)
        w = z + 1j * (Ep[:, None] - Em[None, :])
        F = laplace_correlation(model.params, w)
        G = np.conj(laplace_correlation(model.params, np.conj(z) - 1j * (Ep[:, None] - Em[None, :])))
        M = _kernel_from_laplace(F, G, model.side_order, lam, model.basis.size)
    elif route == "time":
        model.check_tail(lam, z.real)
        stack = _vertex_stack(model, p, lam, field)
        t, wt = model.time_nodes
        M = lam**2 * np.tensordot(wt * np.exp(-z * t), stack, axes=1)
    else:
        raise ConfigError(f"unknown route {route!r}")
    return FiberOperator(tuple(np.atleast_1d(p)), M, {"z": z, "route": route})


def pseudo_resolvent_generator(model: DysonModel, p, z, lam, field=0.0, route: str = "auto") -> np.ndarray:
    """S(z) = (L_S)_p + M(z)_p at ladder truncation."""
    return model.free_generator(p, lam, field) + ladder_transfer(model, p, z, lam, field, route).matrix


@dataclass
class LadderLimitRow:
    lam: float
    kappa: float
    opnorm_diff: float
    antihermitian: float


def ladder_limit_check(model: DysonModel, kappa: float, lams, axis: int = 0):
    """||lambda^-2 (L_S + M(0))_{p} - M^{kappa,0}|| for each lambda; p = -lambda^2 kappa."""
    kin = model.kinetic_model()
    kvec = np.zeros(model.d)
    kvec[axis] = kappa
    target = kin.generator(kvec, 0.0).matrix
    rows = []
    for lam in lams:
        p = model.fiber_momentum(kvec, lam)
        S = pseudo_resolvent_generator(model, p, 0.0, lam)
        D = S / lam**2 - target
        rows.append(LadderLimitRow(float(lam), float(kappa), float(np.linalg.norm(D, 2)),
                                   float(np.linalg.norm((D - D.conj().T) / 2, 2))))
    return rows


def fit_slope(x, y) -> float:
    """Least-squares slope of log y against log x."""
    return float(np.polyfit(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)), 1)[0])


@dataclass
class VertexEstimate:
    estimate: float
    stderr: float
    matrix: np.ndarray
    samples: int


_CROSSING = ((0, 2), (1, 3))
_NESTED = ((0, 3), (1, 2))


def vertex_n2_norm(model: DysonModel, p, t, lam, samples: int = 4000, seed: int = 0,
                   batches: int = 20) -> VertexEstimate:
    """Monte Carlo estimate of the max column sum of V^(2)_[0,t] in fiber p (zero field).

    Endpoints are pinned at 0 and t; the two interior times are uniform on the
    ordered simplex and the two pair sites enter as uniformly drawn momentum
    transfers.  Streams are keyed by (seed, purpose) so results are bit-exact.
    """
    if samples < batches or samples % batches:
        raise ConfigError("samples must be a positive multiple of the batch count")
    if t <= 0:
        raise ConfigError("t must be positive")
    basis = model.basis
    n = basis.size
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 2]))
    u = np.sort(rng.random((samples, 2)) * t, axis=1)
    q = rng.integers(0, n, size=(samples, 2))
    times = np.column_stack([np.zeros(samples), u[:, 0], u[:, 1], np.full(samples, t)])
    Ep, Em = basis.energies(p)
    tbl, neg = basis.shift_table, basis.neg_index
    # psi_hat at every ordered difference t_s - t_r
    diffs = {(r, s): times[:, s] - times[:, r] for r in range(4) for s in range(r + 1, 4)}
    keys = list(diffs)
    vals = np.asarray(correlation(model.params, np.concatenate([diffs[k] for k in keys])), dtype=complex)
    psi = {k: vals[i * samples:(i + 1) * samples] for i, k in enumerate(keys)}

    def h(r, s, sr, ss):
        a, b = (sr, ss) if model.side_order == SIDE_ORDER_TIME_MATCHED else (ss, sr)
        f = psi[(r, s)]  # psi_hat(t_s - t_r)
        if a == LEFT and b == LEFT:
            return -np.conj(f)
        if a == RIGHT and b == RIGHT:
            return -f
        if a == RIGHT and b == LEFT:
            return f
        return np.conj(f)

    est = np.zeros((samples, n, n), dtype=complex)
    j0 = np.broadcast_to(np.arange(n), (samples, n))
    rows = np.arange(samples)[:, None]
    for pairing in (_CROSSING, _NESTED):
        owner = {}
        for pi, (r, s) in enumerate(pairing):
            owner[r] = (pi, True)
            owner[s] = (pi, False)
        for sides in itertools.product((LEFT, RIGHT), repeat=4):
            a = j0.copy()
            b = j0.copy()
            amp = np.ones((samples, n), dtype=complex)
            for pi, (r, s) in enumerate(pairing):
                amp = amp * h(r, s, sides[r], sides[s])[:, None]
            for ev in range(4):
                if ev:
                    dt = (times[:, ev] - times[:, ev - 1])[:, None]
                    amp = amp * np.exp(-1j * dt * (Ep[a] - Em[b]))
                pi, first = owner[ev]
                m = q[:, pi][:, None]
                r, _ = pairing[pi]
                same = sides[r] == sides[ev]
                shift = m if (first or not same) else neg[m]
                if sides[ev] == LEFT:
                    a = tbl[shift, a]
                else:
                    b = tbl[shift, b]
            if np.any(a != b):
                raise NumericalError("diagram amplitude left the fiber")
            np.add.at(est, (rows, a, j0), amp)
    est *= lam**4 * t**2 / 2
    per_batch = est.reshape(batches, samples // batches, n, n).mean(axis=1)
    mean = per_batch.mean(axis=0)
    surrogate = float(np.abs(mean).sum(axis=0).max())
    jack = np.array([np.abs((mean * batches - per_batch[i]) / (batches - 1)).sum(axis=0).max()
                     for i in range(batches)])
    stderr = float(math.sqrt((batches - 1) / batches * np.sum((jack - jack.mean()) ** 2)))
    if not surrogate > 0 or stderr > 0.3 * surrogate:
        raise InsufficientSamples(
            f"vertex estimate {surrogate:.3e} has standard error {stderr:.3e} above 30%; raise dyson.mc_samples"
        )
    return VertexEstimate(surrogate, stderr, mean, samples)


@dataclass
class PoleResult:
    lam: float
    kappa: float
    u: complex
    u_kinetic: complex
    defect: float
    iterations: int
    residue: np.ndarray
    radius: float

    @property
    def scaled_error(self) -> float:
        return abs(self.u / self.lam**2 - self.u_kinetic)


def _require_analytic(model: DysonModel, what: str):
    if not model.analytic:
        raise AssumptionViolation(
            f"{what} continues M(z) into Re z < 0, which needs an analytic psi "
            f"(even d_res); d_res={model.params.d_res} has a kink at E=0. "
            "Try --set reservoir.d_res=4"
        )


def pole_track(model: DysonModel, kappa, lam, field=0.0, alpha: float = 0.5, tol: float = 1e-10,
               max_iter: int = 200, contour_nodes: int = 64, axis: int = 0) -> PoleResult:
    """Isolated pole of (z - S(z))^-1 continued from the kinetic branch.

    Fixed point of z <- (1 - alpha) z + alpha mu(z), mu the eigenvalue of S(z)
    nearest z; convergence is declared when the step is below tol * lambda^2.
    The residue is the trapezoid contour integral on |z - u| = lambda^2 g / 4,
    g the kinetic gap.
    """
    _require_analytic(model, "pole tracking")
    kvec = np.zeros(model.d)
    kvec[axis] = kappa
    fvec = _as_vector(field, model.d, "field")
    kin = model.kinetic_model()
    u_kin = complex(eigen_branch(kin, [kappa], fvec, axis).values[0])
    gap = spectral_gap(kin.generator(kvec, fvec))
    p = model.fiber_momentum(kvec, lam)
    z = lam**2 * u_kin
    for it in range(1, max_iter + 1):
        mu = np.linalg.eigvals(pseudo_resolvent_generator(model, p, z, lam, fvec))
        dist = np.abs(mu - z)
        j = int(np.argmin(dist))
        z_new = (1 - alpha) * z + alpha * mu[j]
        step = abs(z_new - z)
        z = z_new
        if step <= tol * lam**2:
            break
    else:
        raise NumericalError(f"pole iteration did not converge in {max_iter} steps (last step {step:.3e})")
    radius = lam**2 * gap / 4
    theta = 2 * math.pi * (np.arange(contour_nodes) + 0.5) / contour_nodes
    n = model.basis.size
    P = np.zeros((n, n), dtype=complex)
    eye = np.eye(n)
    for th in theta:
        dz = radius * np.exp(1j * th)
        S = pseudo_resolvent_generator(model, p, z + dz, lam, fvec)
        P += dz * np.linalg.solve((z + dz) * eye - S, eye)
    P /= contour_nodes
    sv = np.linalg.svd(P, compute_uv=False)
    defect = float(sv[1] / sv[0])
    return PoleResult(float(lam), float(kappa), complex(z), u_kin, defect, it, P, radius)


@dataclass
class MixingResult:
    lam: float
    kappa: float
    rate: float  # fitted g in kinetic units: ||Z_t - e^{ut} P|| ~ C exp(-g lambda^2 t)
    kinetic_gap: float
    times: np.ndarray
    distance: np.ndarray
    trace_drift: float
    pole: PoleResult
    laplace_deviation: float  # max ||L[Z](z) - (z - S(z))^-1|| / ||(z - S(z))^-1|| on the Bromwich line


def _memory_length(model: DysonModel, rel: float = 1e-10) -> float:
    t, _ = model.time_nodes
    a = np.abs(model.psi_hat_nodes)
    big = np.nonzero(a > rel * a[0])[0]
    return float(t[big[-1]]) if big.size else float(t[0])


def mixing_check(model: DysonModel, lam, kappa=0.0, field=0.0, dt: float = 0.05,
                 horizon: float = 6.0, window=(1.0, 4.0), axis: int = 0,
                 bromwich_nodes: int = 512) -> MixingResult:
    """Solve the ladder Dyson equation dZ/dt = L_S Z + int_0^t V_{t-s} Z_s ds in fiber p
    and fit the decay of ||Z_t - e^{ut} P||.

    Time stepping is trapezoidal in both the memory integral and the time
    derivative.  ``horizon`` and ``window`` are in units of 1/(lambda^2 g_kin).
    The solution is validated against the resolvent: its Laplace transform is
    compared with (z - S(z))^-1 at ``bromwich_nodes`` points of the line
    Re z = lambda^2 g_kin / 10, |Im z| <= 5 lambda^2 g_kin.
    """
    _require_analytic(model, "the mixing check")
    pole = pole_track(model, kappa, lam, field, axis=axis)
    kvec = np.zeros(model.d)
    kvec[axis] = kappa
    fvec = _as_vector(field, model.d, "field")
    gap = spectral_gap(model.kinetic_model().generator(kvec, fvec))
    p = model.fiber_momentum(kvec, lam)
    n = model.basis.size
    Ls = model.free_generator(p, lam, fvec)
    mem = max(1, math.ceil(_memory_length(model) / dt))
    psi = np.asarray(correlation(model.params, dt * np.arange(mem + 1)), dtype=complex)
    if np.any(fvec):
        K = np.array([_vertex_shift(model, p, m * dt, lam, fvec, psi[m]) for m in range(mem + 1)])
    else:
        K = np.array([_vertex_closed(model, p, m * dt, lam, psi[m]) for m in range(mem + 1)])
    t_end = horizon / (lam**2 * gap)
    steps = math.ceil(t_end / dt)
    eye = np.eye(n)
    A = eye - dt / 2 * (Ls + dt / 2 * K[0])
    Ainv = np.linalg.inv(A)
    Kcat = np.ascontiguousarray(K[1:].transpose(1, 0, 2)).reshape(n, mem * n)
    H = np.zeros((steps + 1, n, n), dtype=complex)
    H[0] = eye

    def memory(nn):
        # dt * sum_{m=1}^{min(nn, mem)} w_m K_m Z_{nn-m}; endpoint weight 1/2 when it reaches Z_0
        top = min(nn, mem)
        if top == 0:
            return np.zeros((n, n), dtype=complex)
        hist = H[nn - top:nn][::-1]
        out = Kcat[:, : top * n] @ hist.reshape(top * n, n)
        if nn <= mem:
            out -= 0.5 * K[nn] @ H[0]
        return dt * out

    Fprev = Ls @ H[0]
    for s in range(steps):
        J = memory(s + 1)
        H[s + 1] = Ainv @ (H[s] + dt / 2 * Fprev + dt / 2 * J)
        Fprev = Ls @ H[s + 1] + dt / 2 * K[0] @ H[s + 1] + J
    times = dt * np.arange(steps + 1)
    decay = np.exp(pole.u * times)[:, None, None] * pole.residue[None]
    dist = np.linalg.norm(H - decay, ord=2, axis=(1, 2))
    lo, hi = (w / (lam**2 * gap) for w in window)
    sel = (times >= lo) & (times <= hi)
    if sel.sum() < 8 or np.any(dist[sel] <= 0):
        raise NumericalError("fit window for the mixing rate is empty or degenerate")
    slope = float(np.polyfit(times[sel], np.log(dist[sel]), 1)[0])
    drift = float(np.abs(H.sum(axis=1) - 1.0).max()) if not np.any(p) else math.nan
    rate = -slope / lam**2
    if not rate > 0:
        raise NumericalError(f"non-positive fitted mixing rate {rate:.3e}")
    dev = _laplace_deviation(model, p, lam, fvec, pole, H, times, gap, bromwich_nodes)
    return MixingResult(float(lam), float(kappa), rate, gap, times, dist, drift, pole, dev)


def _laplace_deviation(model, p, lam, fvec, pole, H, times, gap, nodes):
    if nodes <= 0:
        return math.nan
    c = lam**2 * gap / 10
    ys = np.linspace(-5, 5, nodes) * lam**2 * gap
    dt = times[1] - times[0]
    w = np.full(times.size, dt)
    w[0] = w[-1] = dt / 2
    T = times[-1]
    n = model.basis.size
    eye = np.eye(n)
    worst = 0.0
    for y in ys:
        z = c + 1j * y
        approx = np.tensordot(w * np.exp(-z * times), H, axes=1)
        approx += np.exp((pole.u - z) * T) / (z - pole.u) * pole.residue
        exact = np.linalg.solve(z * eye - pseudo_resolvent_generator(model, p, z, lam, fvec), eye)
        worst = max(worst, float(np.linalg.norm(approx - exact, 2) / np.linalg.norm(exact, 2)))
    return worst
