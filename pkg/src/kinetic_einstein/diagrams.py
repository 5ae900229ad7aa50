"""Paths, Wick pairings, irreducible decomposition and diagram weights.

Indices into a path are 0-based throughout; a pair (r, s) always has r < s.
Times may be floats or ``fractions.Fraction`` (exact, tie-free orderings).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np
from scipy import linalg

from .errors import ConfigError, DomainError, NumericalError

LEFT = "L"
RIGHT = "R"
SIDES = (LEFT, RIGHT)
PAIRING_CAP = 8


@dataclass(frozen=True)
class Triple:
    x: tuple
    side: str
    t: object

    def __post_init__(self):
        if self.side not in SIDES:
            raise ConfigError(f"side must be one of {SIDES}, got {self.side!r}")


@dataclass(frozen=True)
class Path:
    triples: tuple

    def __post_init__(self):
        ts = [tr.t for tr in self.triples]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ConfigError("path times must be strictly increasing")

    def __len__(self):
        return len(self.triples)

    @property
    def times(self):
        return [tr.t for tr in self.triples]


@dataclass(frozen=True)
class Pairing:
    pairs: tuple  # ((r, s), ...) sorted by r

    def __post_init__(self):
        seen = [i for p in self.pairs for i in p]
        if any(r >= s for r, s in self.pairs):
            raise ConfigError("pairs must satisfy r < s")
        if sorted(seen) != list(range(len(seen))):
            raise ConfigError("pairing is not a perfect matching of 0..2n-1")

    @property
    def n(self) -> int:
        return len(self.pairs)


@dataclass(frozen=True)
class Diagram:
    path: Path
    pairing: Pairing

    def __post_init__(self):
        if len(self.path) != 2 * self.pairing.n:
            raise ConfigError("path length and pairing size do not match")


@dataclass(frozen=True)
class IntervalUnion:
    intervals: tuple  # sorted, pairwise disjoint closed intervals

    def __post_init__(self):
        for (a, b), (c, d) in zip(self.intervals, self.intervals[1:]):
            if not (a <= b < c <= d):
                raise ConfigError("intervals must be sorted and disjoint")

    @property
    def is_single(self) -> bool:
        return len(self.intervals) == 1


def double_factorial(m: int) -> int:
    return math.prod(range(m, 0, -2)) if m > 0 else 1


def enumerate_pairings(n: int) -> list:
    """All perfect matchings of {0..2n-1}; (2n-1)!! of them."""
    if n < 0:
        raise ConfigError("n must be non-negative")
    if n > PAIRING_CAP:
        raise ConfigError(f"enumeration is capped at n <= {PAIRING_CAP}")

    def rec(items):
        if not items:
            yield ()
            return
        first, rest = items[0], items[1:]
        for i, partner in enumerate(rest):
            remaining = rest[:i] + rest[i + 1 :]
            for tail in rec(remaining):
                yield ((first, partner),) + tail

    return [Pairing(p) for p in rec(tuple(range(2 * n)))]


def domain(diagram: Diagram) -> IntervalUnion:
    """Union of [t_r, t_s] over the pairs, merged into disjoint intervals."""
    ts = diagram.path.times
    spans = sorted((ts[r], ts[s]) for r, s in diagram.pairing.pairs)
    merged = []
    for a, b in spans:
        if merged and a <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], b)
        else:
            merged.append([a, b])
    return IntervalUnion(tuple((a, b) for a, b in merged))


def is_irreducible(diagram: Diagram, interval=None) -> bool:
    """True iff Dom(diagram) equals ``interval`` (default: [first time, last time])."""
    dom = domain(diagram)
    if not dom.is_single:
        return False
    if interval is None:
        ts = diagram.path.times
        interval = (ts[0], ts[-1])
    return tuple(dom.intervals[0]) == tuple(interval)


def _sub_diagram(diagram: Diagram, idx: list) -> Diagram:
    pos = {old: new for new, old in enumerate(idx)}
    triples = tuple(diagram.path.triples[i] for i in idx)
    pairs = tuple(sorted((pos[r], pos[s]) for r, s in diagram.pairing.pairs if r in pos))
    return Diagram(Path(triples), Pairing(pairs))


def irreducible_decomposition(diagram: Diagram) -> list:
    """Ordered irreducible parts with sup Dom(D_j) < inf Dom(D_{j+1})."""
    if diagram.pairing.n == 0:
        return []
    ts = diagram.path.times
    parts = []
    for a, b in domain(diagram).intervals:
        idx = [i for i, t in enumerate(ts) if a <= t <= b]
        parts.append(_sub_diagram(diagram, idx))
    return parts


def concatenate(parts: Sequence[Diagram]) -> Diagram:
    """Inverse of the decomposition for time-ordered parts."""
    triples = []
    pairs = []
    for part in parts:
        off = len(triples)
        triples.extend(part.path.triples)
        pairs.extend((r + off, s + off) for r, s in part.pairing.pairs)
    return Diagram(Path(tuple(triples)), Pairing(tuple(sorted(pairs))))


def _sigma(s, side) -> complex:
    if s <= 0:
        return 1.0
    return -1j if side == LEFT else 1j


def _m(s, sign: int) -> complex:
    return complex(s) if s >= 0 else sign * 1j * s


def h_value(s, s2, side, side2, psd) -> complex:
    """Reservoir pair function h(s, s', side, side') on [-beta/2, inf)^2.

    For s, s' >= 0 this is the real-time table
        (L, L): -psi_hat(s - s'),  (R, R): -psi_hat(s' - s),
        (R, L):  psi_hat(s' - s),  (L, R):  psi_hat(s - s').
    Negative times enter through m_+/-(s) = +/- i s and the prefactor sigma.
    ``psd`` needs ``correlation(z)`` and ``beta``.
    """
    beta = psd.beta
    for v in (s, s2):
        if v < -beta / 2 - 1e-15:
            raise DomainError("times must lie in [-beta/2, inf)")
    if side == LEFT and side2 == LEFT:
        z = _m(s, -1) - _m(s2, -1)
    elif side == RIGHT and side2 == RIGHT:
        z = _m(s2, +1) - _m(s, +1)
    elif side == RIGHT and side2 == LEFT:
        z = _m(s2, -1) - _m(s, +1)
    elif side == LEFT and side2 == RIGHT:
        z = _m(s, -1) - _m(s2, +1)
    else:
        raise ConfigError(f"unknown sides {side!r}, {side2!r}")
    if z.imag < -1e-12 or z.imag > beta + 1e-12:
        raise DomainError(f"correlation argument {z} leaves the strip 0 <= Im z <= {beta}")
    z = complex(z.real, min(max(z.imag, 0.0), beta))
    return _sigma(s, side) * _sigma(s2, side2) * complex(psd.correlation(z))


def h_real_time(u, v, side, side2, psd) -> complex:
    """Real-time pair function for u, v >= 0 (the s > 0 branch of ``h_value``).

    ``h_value`` sets sigma(0) = 1, so a vertex that starts exactly at time 0
    must use this function instead.
    """
    if u < 0 or v < 0:
        raise DomainError("real-time pair function needs u, v >= 0")
    u, v = float(u), float(v)
    if side == LEFT and side2 == LEFT:
        return -complex(psd.correlation(u - v))
    if side == RIGHT and side2 == RIGHT:
        return -complex(psd.correlation(v - u))
    if side == RIGHT and side2 == LEFT:
        return complex(psd.correlation(v - u))
    if side == LEFT and side2 == RIGHT:
        return complex(psd.correlation(u - v))
    raise ConfigError(f"unknown sides {side!r}, {side2!r}")


# order of the side labels in the pair factor h(t_r, t_s, ., .)
SIDE_ORDER_AS_PRINTED = "printed"  # h(t_r, t_s, side_s, side_r)
SIDE_ORDER_TIME_MATCHED = "matched"  # h(t_r, t_s, side_r, side_s)


def pair_factor(diagram: Diagram, pair, lam, psd, side_order: str = SIDE_ORDER_AS_PRINTED) -> complex:
    r, s = pair
    a, b = diagram.path.triples[r], diagram.path.triples[s]
    if tuple(a.x) != tuple(b.x):
        return 0j
    if side_order == SIDE_ORDER_AS_PRINTED:
        sides = (b.side, a.side)
    elif side_order == SIDE_ORDER_TIME_MATCHED:
        sides = (a.side, b.side)
    else:
        raise ConfigError(f"unknown side order {side_order!r}")
    if a.t >= 0 and b.t >= 0:
        return lam**2 * h_real_time(a.t, b.t, sides[0], sides[1], psd)
    return lam**2 * h_value(a.t, b.t, sides[0], sides[1], psd)


def _exact(z: complex):
    return (Fraction(z.real), Fraction(z.imag))


def _exact_mul(u, v):
    return (u[0] * v[0] - u[1] * v[1], u[0] * v[1] + u[1] * v[0])


def weight(diagram: Diagram, lam, psd, side_order: str = SIDE_ORDER_AS_PRINTED, exact: bool = False):
    """zeta = prod over pairs of lambda^2 h(t_r, t_s, ., .) delta_{x_r, x_s}.

    With ``exact=True`` the product of the (floating) pair factors is formed in
    rational arithmetic and returned as (Fraction re, Fraction im), so
    factorisation identities hold with no rounding at all.
    """
    acc = (Fraction(1), Fraction(0))
    for pair in diagram.pairing.pairs:
        f = pair_factor(diagram, pair, lam, psd, side_order)
        if f == 0:
            acc = (Fraction(0), Fraction(0))
            break
        acc = _exact_mul(acc, _exact(f))
    if exact:
        return acc
    return complex(float(acc[0]), float(acc[1]))


def random_diagram(rng: np.random.Generator, n: int, d: int = 1, sites: int = 3, denominator: int = 10_000):
    """Random path with 2n distinct rational times in (0, 1) and a uniform pairing."""
    nums = rng.choice(np.arange(1, denominator), size=2 * n, replace=False)
    times = sorted(Fraction(int(v), denominator) for v in nums)
    perm = rng.permutation(2 * n)
    pairs = tuple(sorted(tuple(sorted((int(perm[2 * i]), int(perm[2 * i + 1])))) for i in range(n)))
    triples = []
    for t in times:
        x = tuple(int(v) for v in rng.integers(0, sites, size=d))
        triples.append(Triple(x, SIDES[int(rng.integers(0, 2))], t))
    # give paired triples equal sites so weights are non-trivial
    triples = list(triples)
    for r, s in pairs:
        triples[s] = Triple(triples[r].x, triples[s].side, triples[s].t)
    return Diagram(Path(tuple(triples)), Pairing(pairs))


# ---------------------------------------------------------------------------
# combinatorial bounds


@dataclass(frozen=True)
class ExpKernel:
    """k(t) = a exp(-b t) on t >= 0."""

    a: float = 1.0
    b: float = 1.0

    def __call__(self, t):
        return self.a * np.exp(-self.b * np.asarray(t, dtype=float))

    @property
    def l1(self) -> float:
        return self.a / self.b

    @property
    def sup(self) -> float:
        return abs(self.a)


def exp_tail(x: float, n: int) -> float:
    """e^x_n = sum_{j >= n} x^j / j!, with e^x_n = e^x for n <= 0."""
    if n <= 0:
        return math.exp(x)
    term = x**n / math.factorial(n)
    total = 0.0
    j = n
    while True:
        total += term
        j += 1
        term *= x / j
        if term < 1e-18 * total:
            return total + term


def _pair_states(P: int):
    states = [(j, c) for c in range(P + 1) for j in range(P + 1 - c)]
    return states, {s: i for i, s in enumerate(states)}


def _transfer(P: int, b: float):
    """Generator of the time-ordered pairing sums: state (open j, closed c)."""
    states, index = _pair_states(P)
    A = np.zeros((len(states), len(states)))
    for (j, c), i in index.items():
        A[i, i] = -j * b
        if (j + 1, c) in index:
            A[index[(j + 1, c)], i] += 1.0  # open a new pair
        if j >= 1 and (j - 1, c + 1) in index:
            A[index[(j - 1, c + 1)], i] += j  # close one of the j open pairs
    return A, index


def simplex_pair_sums(length: float, k: ExpKernel, P: int, pinned: bool = False):
    """Per-p values sum_pi int prod |k(t_s - t_r)| for p = 0..P.

    The simplex integrals are the time-ordered Dyson terms of a linear ODE on
    (open, closed) counts, so one matrix exponential yields all of them.
    With ``pinned`` the first time sits at 0 and the last at ``length``.
    """
    A, index = _transfer(P, k.b)
    start = np.zeros(A.shape[0])
    start[index[(1, 0) if pinned else (0, 0)]] = 1.0
    psi = linalg.expm(length * A) @ start
    out = np.zeros(P + 1)
    for p in range(P + 1):
        if pinned:
            out[p] = psi[index[(1, p - 1)]] if p >= 1 else 0.0
        else:
            out[p] = psi[index[(0, p)]]
        out[p] *= abs(k.a) ** p
    return out


def nested_quadrature_pair_sum(p: int, length: float, k_fn: Callable, nodes: int = 12, pinned: bool = False):
    """Brute-force oracle: enumerate pairings and integrate over the simplex
    by nested Gauss-Legendre rules (practical for p <= 2)."""
    if p == 0:
        return 0.0 if pinned else 1.0
    x, w = np.polynomial.legendre.leggauss(nodes)
    m = 2 * p - (2 if pinned else 0)
    pairings = enumerate_pairings(p)

    def integrand(ts):
        full = ([0.0] + list(ts) + [length]) if pinned else list(ts)
        return sum(np.prod([abs(k_fn(full[s] - full[r])) for r, s in pi.pairs]) for pi in pairings)

    def rec(lo, depth, prefix):
        if depth == m:
            return integrand(prefix)
        hi = length
        tot = 0.0
        for xi, wi in zip(x, w):
            t = lo + 0.5 * (hi - lo) * (xi + 1)
            tot += 0.5 * (hi - lo) * wi * rec(t, depth + 1, prefix + [t])
        return tot

    return rec(0.0, 0, [])


@dataclass
class BoundCertificate:
    n: int
    I_len: float
    lhs: float
    rhs: float
    ok: bool
    pinned: bool = False


def bound_check_combi(n: int, I_len: float, k_fn=None, pinned: bool = False, tail_tol: float = 1e-14):
    """Check the pairing-sum bound with a certified series truncation.

    unpinned: sum_{p>=n} ... <= e^{|I| ||k||_1}_n                         (n >= 0)
    pinned:   sum_{p>=n} ... <= ||k||_inf e_{n-1} + ||k||_1^2 e_{n-2}     (n >= 1)
    """
    k = ExpKernel() if k_fn is None else k_fn
    if not isinstance(k, ExpKernel):
        raise ConfigError("bound_check_combi supports exponential kernels k(t) = a exp(-b t)")
    if n < (1 if pinned else 0) or n > 3:
        raise ConfigError("n must satisfy 0 <= n <= 3 (1 <= n <= 3 when pinned)")
    if not 0 < I_len <= 2:
        raise ConfigError("|I| must lie in (0, 2]")
    x = I_len * k.l1
    # termwise bound: the p-term is at most x^p/p! (unpinned) and
    # sup k x^{p-1}/(p-1)! + |k|_1^2 x^{p-2}/(p-2)! (pinned)
    P = max(n, 1)
    while True:
        tail = exp_tail(x, P + 1)
        if pinned:
            tail = k.sup * exp_tail(x, P) + k.l1**2 * exp_tail(x, P - 1)
        if tail < tail_tol or P > 80:
            break
        P += 1
    terms = simplex_pair_sums(I_len, k, P, pinned)
    lhs = float(np.sum(terms[n:])) + tail
    if pinned:
        rhs = k.sup * exp_tail(x, n - 1) + k.l1**2 * exp_tail(x, n - 2)
    else:
        rhs = exp_tail(x, n)
    if not np.isfinite(lhs):
        raise NumericalError("pairing sum did not converge")
    return BoundCertificate(n, I_len, lhs, rhs, bool(lhs <= rhs * (1 + 1e-8)), pinned)
