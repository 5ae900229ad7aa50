import math

import numpy as np
import pytest

from kinetic_einstein import dyson, kinetic, reservoir
from kinetic_einstein.diagrams import SIDE_ORDER_AS_PRINTED, SIDE_ORDER_TIME_MATCHED
from kinetic_einstein.errors import AssumptionViolation, ConfigError

from conftest import make_params


@pytest.fixture(scope="module")
def small4():
    return dyson.DysonModel(make_params(d_res=4), L=8)


@pytest.fixture(scope="module")
def model4():
    return dyson.DysonModel(make_params(d_res=4), L=32)


@pytest.fixture(scope="module")
def model3():
    return dyson.DysonModel(make_params(d_res=3), L=32)


def twisted_hamiltonian(basis, q):
    """Hopping on the periodic box with Bloch phase exp(i q.(x - y - offset)) on wrapped bonds."""
    L = basis.L
    x = basis.sites.astype(int)
    diff = x[:, None, :] - x[None, :, :]
    H = np.zeros((basis.size, basis.size), dtype=complex)
    for off, c in basis.eps.coeffs:
        hit = np.all(diff % L == np.mod(off, L), axis=-1)
        wrap = diff - np.asarray(off)
        H[hit] += c * np.exp(1j * (wrap[hit] @ np.atleast_1d(q)))
    return H


class TestFiberBasis:
    @pytest.mark.parametrize("p", [0.0, 0.13, -0.7])
    def test_free_liouvillian_stays_in_fiber(self, small4, p):
        basis = small4.basis
        f = np.random.default_rng(1).normal(size=basis.size) + 0j
        rho = basis.embed(p, f)
        out = -1j * (twisted_hamiltonian(basis, p / 2) @ rho - rho @ twisted_hamiltonian(basis, -p / 2))
        assert basis.leakage(p, out) <= 1e-12
        assert np.max(np.abs(basis.extract(p, out) - small4.free_generator(p, 0.3) @ f)) <= 1e-12

    def test_plain_periodic_hamiltonian_on_grid_fiber(self, small4):
        basis = small4.basis
        p = 2 * (2 * math.pi / basis.L)  # p/2 on the momentum grid, so no twist is needed
        H = twisted_hamiltonian(basis, 0.0)
        f = np.random.default_rng(1).normal(size=basis.size) + 0j
        rho = basis.embed(p, f)
        out = -1j * (H @ rho - rho @ H)
        assert basis.leakage(p, out) <= 1e-12
        assert np.max(np.abs(basis.extract(p, out) - small4.free_generator(p, 0.3) @ f)) <= 1e-12

    def test_embed_extract_round_trip(self, small4):
        f = np.random.default_rng(2).normal(size=small4.basis.size)
        assert np.allclose(small4.basis.extract(0.2, small4.basis.embed(0.2, f)), f, atol=1e-13)

    def test_odd_box_rejected(self):
        with pytest.raises(ConfigError):
            dyson.DysonModel(make_params(d_res=4), L=7)


class TestFreePropagator:
    def test_identity_at_zero_time(self, small4):
        P = dyson.free_fiber_propagator(small4, 0.3, 0.0, 0.5).matrix
        assert np.allclose(P, np.eye(small4.basis.size), atol=1e-15)

    def test_zero_fiber_is_identity_without_field(self, small4):
        P = dyson.free_fiber_propagator(small4, 0.0, 2.7, 0.5).matrix
        assert np.allclose(P, np.eye(small4.basis.size), atol=1e-14)

    def test_group_property_without_field(self, small4):
        U = [dyson.free_fiber_propagator(small4, 0.21, t, 0.5).matrix for t in (0.7, 1.9, 2.6)]
        assert np.max(np.abs(U[0] @ U[1] - U[2])) <= 1e-12

    def test_matches_generator_exponential(self, small4):
        from scipy.linalg import expm
        P = dyson.free_fiber_propagator(small4, 0.21, 1.1, 0.5).matrix
        assert np.max(np.abs(P - expm(1.1 * small4.free_generator(0.21, 0.5)))) <= 1e-12


class TestVertex:
    @pytest.mark.parametrize("order", [SIDE_ORDER_TIME_MATCHED, SIDE_ORDER_AS_PRINTED])
    def test_three_routes_agree(self, order):
        m = dyson.DysonModel(make_params(d_res=4), L=8, side_order=order)
        mats = [dyson.ladder_vertex(m, 0.13, 1.4, 0.3, method=k).matrix for k in ("superoperator", "shift", "closed")]
        scale = np.abs(mats[0]).max()
        assert np.max(np.abs(mats[0] - mats[1])) <= 1e-12 * scale
        assert np.max(np.abs(mats[0] - mats[2])) <= 1e-12 * scale

    def test_trace_preserved_at_zero_fiber(self, small4):
        V = dyson.ladder_vertex(small4, 0.0, 1.2, 0.4).matrix
        assert np.max(np.abs(V.sum(axis=0))) <= 1e-14

    def test_printed_side_order_breaks_trace_preservation(self):
        m = dyson.DysonModel(make_params(d_res=4), L=8, side_order=SIDE_ORDER_AS_PRINTED)
        V = dyson.ladder_vertex(m, 0.0, 1.2, 0.4).matrix
        assert np.max(np.abs(V.sum(axis=0))) > 1e-3

    def test_quadratic_in_coupling(self, small4):
        V1 = dyson.ladder_vertex(small4, 0.05, 1.3, 0.1).matrix
        V2 = dyson.ladder_vertex(small4, 0.05, 1.3, 0.2).matrix
        assert np.max(np.abs(V2 - 4 * V1)) <= 1e-13 * np.abs(V2).max()

    def test_envelope_decay(self, model4):
        _, g = model4.tail_certificate
        t = np.linspace(0.0, 12.0, 25)
        norms = np.array([dyson.ladder_vertex(model4, 0.0, ti, 0.1, method="closed").norm() for ti in t])
        weighted = norms / 0.1**2 * np.exp(g * t / 3)
        early, late = weighted[t <= 6], weighted[t > 6]
        assert late.max() <= early.max()
        assert weighted[-1] <= 1e-3 * early.max()

    def test_field_needs_shift_route(self, small4):
        with pytest.raises(ConfigError):
            dyson.ladder_vertex(small4, 0.0, 1.0, 0.1, field=0.1, method="closed")


class TestTransfer:
    def test_time_and_spectral_routes_agree(self, model4):
        z = 0.5 + 0.3j
        a = dyson.ladder_transfer(model4, 0.02, z, 0.2, route="time").matrix
        b = dyson.ladder_transfer(model4, 0.02, z, 0.2, route="spectral").matrix
        assert np.max(np.abs(a - b)) <= 1e-9 * np.abs(b).max()

    def test_large_real_z_small_and_decreasing(self, model4):
        _, g = model4.tail_certificate
        zs = (10 * g, 20 * g, 40 * g)
        norms = [dyson.ladder_transfer(model4, 0.0, z, 0.3).norm() for z in zs]
        assert norms[0] > norms[1] > norms[2]
        # Laplace damping: z M(z) -> V_0 as z grows
        V0 = dyson.ladder_vertex(model4, 0.0, 0.0, 0.3, method="closed").norm()
        assert abs(zs[-1] * norms[-1] / V0 - 1) <= 1e-3

    def test_order_coupling_squared_on_z_grid(self, model4):
        for z in (0.0, 0.5, 1.0 + 1.0j, 2.0 - 0.5j):
            a, b = (dyson.ladder_transfer(model4, 0.0, z, lam).norm() / lam**2 for lam in (0.1, 0.3))
            assert np.isfinite(a) and abs(a - b) <= 1e-12 * a

    def test_algebraic_tail_refuses_time_route(self, model3):
        with pytest.raises(ConfigError):
            dyson.ladder_transfer(model3, 0.0, 0.5, 0.1, route="time")

    def test_spectral_route_refuses_left_half_plane(self, model3):
        with pytest.raises(AssumptionViolation):
            dyson.ladder_transfer(model3, 0.0, -0.1, 0.1, route="spectral")


class TestLadderLimit:
    @pytest.mark.parametrize("fixture", ["model3", "model4"])
    def test_slope_two(self, fixture, request):
        model = request.getfixturevalue(fixture)
        rows = dyson.ladder_limit_check(model, 0.05, (0.3, 0.1, 0.03))
        slope = dyson.fit_slope([r.lam for r in rows], [r.opnorm_diff for r in rows])
        assert abs(slope - 2.0) <= 0.3

    def test_printed_side_order_does_not_converge(self):
        m = dyson.DysonModel(make_params(d_res=3), L=32, side_order=SIDE_ORDER_AS_PRINTED)
        rows = dyson.ladder_limit_check(m, 0.05, (0.3, 0.1, 0.03))
        assert min(r.opnorm_diff for r in rows) > 1.0


class TestSecondOrder:
    def test_fixed_seed_is_bit_exact(self, model4):
        p = model4.fiber_momentum(0.05, 0.1)
        a = dyson.vertex_n2_norm(model4, p, 2.0, 0.1, samples=1000, seed=5)
        b = dyson.vertex_n2_norm(model4, p, 2.0, 0.1, samples=1000, seed=5)
        assert a.estimate == b.estimate and np.array_equal(a.matrix, b.matrix)

    def test_quartic_in_coupling(self, model4):
        p = model4.fiber_momentum(0.05, 0.1)
        a = dyson.vertex_n2_norm(model4, p, 2.0, 0.1, samples=1000, seed=5)
        b = dyson.vertex_n2_norm(model4, p, 2.0, 0.2, samples=1000, seed=5)
        assert b.estimate / a.estimate == pytest.approx(16.0, rel=1e-12)

    def test_envelope_bounded(self, model4):
        _, g = model4.tail_certificate
        w = {t: dyson.vertex_n2_norm(model4, 0.0, t, 0.1, samples=1000, seed=1).estimate * math.exp(g * t / 3)
             for t in (1.0, 2.0, 3.0, 4.0, 5.0, 8.0)}
        # the weighted estimate turns over instead of growing without bound
        assert w[8.0] <= max(w[t] for t in (1.0, 2.0, 3.0, 4.0, 5.0))

    def test_too_few_samples_rejected(self, model4):
        with pytest.raises(ConfigError):
            dyson.vertex_n2_norm(model4, 0.0, 1.0, 0.1, samples=10, batches=20)


class TestPole:
    def test_zero_at_zero_kappa(self, model4):
        r = dyson.pole_track(model4, 0.0, 0.1)
        assert abs(r.u) <= 1e-10 and r.defect <= 1e-6

    def test_scaled_error_is_second_order(self, model4):
        lams = (0.3, 0.1, 0.03)
        rs = [dyson.pole_track(model4, 0.05, lam) for lam in lams]
        assert all(r.defect <= 1e-6 for r in rs)
        assert abs(dyson.fit_slope(lams, [r.scaled_error for r in rs]) - 2.0) <= 0.3

    def test_kinetic_limit_matches_branch(self, model4):
        r = dyson.pole_track(model4, 0.05, 0.03)
        br = kinetic.eigen_branch(model4.kinetic_model(), [0.0, 0.05])
        assert r.u_kinetic == pytest.approx(br.values[1], abs=1e-12)

    def test_odd_reservoir_dimension_refused(self, model3):
        with pytest.raises(AssumptionViolation, match="d_res=4"):
            dyson.pole_track(model3, 0.05, 0.1)


class TestMixing:
    @pytest.fixture(scope="class")
    @classmethod
    def runs(cls, model4):
        return dyson.mixing_check(model4, 0.1), dyson.mixing_check(model4, 0.1, dt=0.025)

    def test_trace_preserved(self, runs):
        assert runs[0].trace_drift <= 1e-8

    def test_rate_against_kinetic_gap(self, runs):
        r = runs[0]
        assert r.rate >= 0.5 * r.kinetic_gap

    def test_step_refinement_stable(self, runs):
        a, b = runs
        assert abs(a.rate - b.rate) <= 0.1 * a.rate

    def test_laplace_cross_check(self, runs):
        assert runs[0].laplace_deviation <= 1e-2

    def test_kinetic_gap_matches_kinetic_module(self, runs, model4):
        gap = kinetic.spectral_gap(model4.kinetic_model().generator())
        assert runs[0].kinetic_gap == pytest.approx(gap, rel=1e-12)


def test_tail_certificate_reports_positive_rate(model4):
    C, g = model4.tail_certificate
    assert C > 0 and g > 0
    assert model4.check_tail(0.3) < 1e-10


def test_reservoir_analyticity_flag(model3, model4):
    assert not model3.analytic and model4.analytic
    assert reservoir.is_analytic(model4.params)
