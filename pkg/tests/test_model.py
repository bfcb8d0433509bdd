"""Energy family: closed-form values, derivative oracles, basis structure."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_params, random_topology
from oscsgm.errors import DimensionMismatchError, ValidationError
from oscsgm.model import (
    GAMMA_MIN_DEFAULT,
    EnergyParams,
    ParamIndex,
    ParamKind,
    Topology,
    basis_eval,
    basis_values_batch,
    energy_hat,
    flat_slices,
    flatten_params,
    force_hat,
    grad_energy_hat,
    grid_edges,
    hessian_trace_hat,
    param_indices,
    total_inference_force,
    unflatten_params,
)


def bistable_site():
    return EnergyParams(alpha=[-1.0], beta=[1.0], gamma=[1.0], f_ext=[0.0])


class TestClosedFormValues:
    def test_single_site_energy(self, single_site):
        p = bistable_site()
        e = energy_hat(p, single_site, np.array([1.0]))
        assert e == pytest.approx(-1.0 / 12.0, abs=1e-15)

    def test_single_site_force(self, single_site):
        p = bistable_site()
        f = force_hat(p, single_site, np.array([1.0]))
        assert f[0] == pytest.approx(-1.0, abs=1e-15)

    def test_single_site_inference_force(self, single_site):
        p = bistable_site()
        f = total_inference_force(p, single_site, np.array([1.0]))
        assert f[0] == pytest.approx(-1.0, abs=1e-15)

    def test_hessian_trace_at_origin(self, single_site):
        p = bistable_site()
        assert hessian_trace_hat(p, single_site, np.array([0.0])) == pytest.approx(-1.0)

    def test_edge_stiffness_adds_two_to_trace(self, pair_topology):
        p = EnergyParams(alpha=[0.0, 0.0], beta=[0.0, 0.0], gamma=[1.0, 1.0],
                         f_ext=[0.0, 0.0], kappa=[1.0], lambda_=[0.0],
                         chi=[0.0], chi_hat=[0.0])
        x = np.array([0.3, -0.2])
        site_only = 3 * 0.0 + 5 * 1.0 * (x ** 4).sum()
        assert hessian_trace_hat(p, pair_topology, x) == pytest.approx(site_only + 2.0)

    def test_coupled_pair_energy(self, pair_topology):
        p = EnergyParams(alpha=[0.0, 0.0], beta=[0.0, 0.0],
                         gamma=[GAMMA_MIN_DEFAULT] * 2, f_ext=[0.0, 0.0],
                         kappa=[2.0], lambda_=[0.0], chi=[0.0], chi_hat=[0.0])
        e = energy_hat(p, pair_topology, np.array([1.0, 0.0]))
        assert e == pytest.approx(1.0 + GAMMA_MIN_DEFAULT / 6.0, rel=1e-14)

    def test_quartic_basis_point(self, single_site):
        b = basis_eval(ParamIndex(ParamKind.BETA, 0), single_site, np.array([0.5]))
        assert b.value == pytest.approx(0.015625)
        assert b.grad[0] == pytest.approx(0.125)
        assert b.hess_trace == pytest.approx(0.75)

    def test_cross_coupling_basis_point(self, pair_topology):
        b = basis_eval(ParamIndex(ParamKind.CHI, 0), pair_topology, np.array([2.0, 3.0]))
        assert b.value == pytest.approx(18.0)
        assert np.allclose(b.grad, [9.0, 12.0])
        assert b.hess_trace == pytest.approx(4.0)


class TestDerivativeOracles:
    """Analytic gradients and traces against central finite differences."""

    @pytest.mark.parametrize("seed", range(8))
    def test_grad_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        topo = random_topology(rng)
        p = random_params(rng, topo)
        x = rng.uniform(-1.2, 1.2, topo.n_oscillators)
        g = grad_energy_hat(p, topo, x)
        h = 1e-6
        for i in range(topo.n_oscillators):
            dx = np.zeros_like(x)
            dx[i] = h
            fd = (energy_hat(p, topo, x + dx) - energy_hat(p, topo, x - dx)) / (2 * h)
            assert g[i] == pytest.approx(fd, rel=1e-6, abs=1e-8)

    @pytest.mark.parametrize("seed", range(8))
    def test_hessian_trace_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        topo = random_topology(rng)
        p = random_params(rng, topo)
        x = rng.uniform(-1.2, 1.2, topo.n_oscillators)
        h = 1e-5
        tr = 0.0
        for i in range(topo.n_oscillators):
            dx = np.zeros_like(x)
            dx[i] = h
            tr += (energy_hat(p, topo, x + dx) - 2 * energy_hat(p, topo, x)
                   + energy_hat(p, topo, x - dx)) / h ** 2
        assert hessian_trace_hat(p, topo, x) == pytest.approx(tr, rel=1e-4, abs=1e-6)

    @pytest.mark.parametrize("seed", range(4))
    def test_basis_derivatives_match_finite_differences(self, seed):
        rng = np.random.default_rng(100 + seed)
        topo = random_topology(rng)
        x = rng.uniform(-1.2, 1.2, topo.n_oscillators)
        h = 1e-6
        for idx in param_indices(topo):
            b = basis_eval(idx, topo, x)
            for i in range(topo.n_oscillators):
                dx = np.zeros_like(x)
                dx[i] = h
                fd = (basis_eval(idx, topo, x + dx).value
                      - basis_eval(idx, topo, x - dx).value) / (2 * h)
                assert b.grad[i] == pytest.approx(fd, rel=1e-5, abs=1e-8)

    def test_force_is_negative_gradient(self):
        rng = np.random.default_rng(7)
        topo = random_topology(rng)
        p = random_params(rng, topo)
        x = rng.uniform(-1, 1, topo.n_oscillators)
        assert np.allclose(force_hat(p, topo, x), -grad_energy_hat(p, topo, x))


class TestLinearity:
    @pytest.mark.parametrize("seed", range(6))
    def test_energy_is_linear_in_parameters(self, seed):
        rng = np.random.default_rng(200 + seed)
        topo = random_topology(rng)
        p = random_params(rng, topo)
        x = rng.uniform(-1.5, 1.5, topo.n_oscillators)
        theta = flatten_params(p)
        recon = sum(t * basis_eval(idx, topo, x).value
                    for t, idx in zip(theta, param_indices(topo)))
        assert energy_hat(p, topo, x) == pytest.approx(recon, rel=1e-12, abs=1e-12)

    @pytest.mark.parametrize("seed", range(3))
    def test_derivatives_are_linear_in_parameters(self, seed):
        rng = np.random.default_rng(300 + seed)
        topo = random_topology(rng)
        p = random_params(rng, topo)
        x = rng.uniform(-1.5, 1.5, topo.n_oscillators)
        theta = flatten_params(p)
        idxs = param_indices(topo)
        g = sum(t * basis_eval(i, topo, x).grad for t, i in zip(theta, idxs))
        tr = sum(t * basis_eval(i, topo, x).hess_trace for t, i in zip(theta, idxs))
        assert np.allclose(grad_energy_hat(p, topo, x), g, atol=1e-12)
        assert hessian_trace_hat(p, topo, x) == pytest.approx(tr, abs=1e-12)


def test_energy_grows_far_from_origin():
    # gamma > 0 keeps every direction uphill at large radius
    rng = np.random.default_rng(11)
    for _ in range(20):
        topo = random_topology(rng)
        p = random_params(rng, topo)
        u = rng.normal(size=topo.n_oscillators)
        u /= np.linalg.norm(u)
        assert energy_hat(p, topo, 100.0 * u) > energy_hat(p, topo, np.zeros(topo.n_oscillators))


def test_inference_force_identity():
    rng = np.random.default_rng(13)
    topo = random_topology(rng)
    p = random_params(rng, topo)
    x = rng.uniform(-1, 1, (4, topo.n_oscillators))
    assert np.allclose(total_inference_force(p, topo, x), 2 * force_hat(p, topo, x) + x)


def test_batched_energy_shapes(pair_topology):
    p = EnergyParams.initial(Topology.complete(2))
    flat = energy_hat(p, pair_topology, np.zeros(2))
    assert np.isscalar(flat) or np.ndim(flat) == 0
    assert np.shape(energy_hat(p, pair_topology, np.zeros((7, 2)))) == (7,)
    assert np.shape(energy_hat(p, pair_topology, np.zeros((3, 7, 2)))) == (3, 7)
    assert np.shape(force_hat(p, pair_topology, np.zeros((3, 7, 2)))) == (3, 7, 2)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2 ** 31))
def test_flatten_round_trip(seed):
    rng = np.random.default_rng(seed)
    topo = random_topology(rng)
    p = random_params(rng, topo)
    q = unflatten_params(flatten_params(p), topo)
    assert p == q


def test_flat_layout_is_kind_blocks():
    topo = Topology.complete(3)
    p = random_params(np.random.default_rng(0), topo)
    theta = flatten_params(p)
    sl = flat_slices(topo)
    assert np.array_equal(theta[sl[ParamKind.ALPHA]], p.alpha)
    assert np.array_equal(theta[sl[ParamKind.CHI_HAT]], p.chi_hat)
    assert len(theta) == 4 * 3 + 4 * 3


def test_basis_batch_agrees_with_single_eval():
    rng = np.random.default_rng(21)
    topo = Topology.complete(3)
    X = rng.uniform(-1, 1, (5, 3))
    for kind in ParamKind:
        vals = basis_values_batch(topo, X, kind)
        idxs = [i for i in param_indices(topo) if i.kind == kind]
        for r in range(5):
            for c, idx in enumerate(idxs):
                assert vals[r, c] == pytest.approx(basis_eval(idx, topo, X[r]).value, abs=1e-14)


class TestTopology:
    def test_complete_and_uncoupled(self):
        assert Topology.complete(3).edges == ((0, 1), (0, 2), (1, 2))
        assert Topology.uncoupled(4).edges == ()
        assert Topology.complete(1).edges == ()

    def test_edges_are_canonicalized(self):
        t = Topology(3, ((2, 1), (1, 0)))
        assert t.edges == ((0, 1), (1, 2))

    def test_self_loops_rejected(self):
        with pytest.raises(ValidationError):
            Topology(2, ((1, 1),))

    def test_out_of_range_node_rejected(self):
        with pytest.raises(ValidationError):
            Topology(2, ((0, 2),))

    def test_duplicate_edges_rejected(self):
        with pytest.raises(ValidationError):
            Topology(3, ((0, 1), (1, 0)))

    @pytest.mark.parametrize("metric,expected", [
        ("euclidean", {(0, 1), (0, 2), (1, 3), (2, 3), (0, 3), (1, 2)}),
        ("manhattan", {(0, 1), (0, 2), (1, 3), (2, 3)}),
    ])
    def test_grid_edges_metric(self, metric, expected):
        # 2x2 grid: diagonal distance is sqrt(2) euclidean, 2 manhattan
        got = set(grid_edges(2, 2, 1.5, metric=metric))
        assert got == expected

    def test_chebyshev_diagonal_is_range_one(self):
        got = set(grid_edges(2, 2, 1.0, metric="chebyshev"))
        assert (0, 3) in got and (1, 2) in got

    def test_grid_range_zero_has_no_edges(self):
        assert grid_edges(3, 3, 0.5) == []

    def test_from_grid_covers_all_in_range_pairs(self):
        topo = Topology.from_grid(3, 4, coupling_range=2.0)
        assert topo.n_oscillators == 12
        for (a, b) in topo.edges:
            ra, ca = divmod(a, 4)
            rb, cb = divmod(b, 4)
            assert np.hypot(ra - rb, ca - cb) <= 2.0

    def test_grid_edge_list_mismatch_rejected(self):
        with pytest.raises(ValidationError):
            Topology(4, ((0, 1),), grid=(2, 2), coupling_range=1.5)

    def test_fingerprint_stable_and_sensitive(self):
        a = Topology.from_grid(12, 12, coupling_range=6.0)
        b = Topology.from_grid(12, 12, coupling_range=6.0)
        assert a.fingerprint() == b.fingerprint()
        c = Topology(a.n_oscillators, a.edges[:-1])
        assert a.fingerprint() != c.fingerprint()

    def test_neighbor_count_monotone_in_range(self):
        sizes = [Topology.from_grid(4, 4, coupling_range=r).n_edges
                 for r in (1.0, 2.0, 3.0, 5.0)]
        assert sizes == sorted(sizes)
        assert Topology.from_grid(4, 4, coupling_range=5.0).n_edges == 16 * 15 // 2


class TestParamValidation:
    def test_wrong_length_rejected(self, pair_topology):
        p = EnergyParams(alpha=[0.0], beta=[0.0], gamma=[1.0], f_ext=[0.0])
        with pytest.raises(DimensionMismatchError):
            energy_hat(p, pair_topology, np.zeros(2))

    def test_nonpositive_gamma_rejected(self):
        with pytest.raises(ValidationError):
            EnergyParams(alpha=[0.0], beta=[0.0], gamma=[0.0], f_ext=[0.0])

    def test_non_finite_rejected(self):
        with pytest.raises(ValidationError):
            EnergyParams(alpha=[np.nan], beta=[0.0], gamma=[1.0], f_ext=[0.0])

    def test_arrays_are_read_only(self):
        p = EnergyParams.initial(Topology.complete(2))
        with pytest.raises(ValueError):
            p.alpha[0] = 5.0

    def test_initial_parameters(self):
        p = EnergyParams.initial(Topology(3, ((0, 1), (1, 2))))
        assert np.all(p.alpha == -1.0) and np.all(p.beta == 1.0) and np.all(p.gamma == 1.0)
        assert not p.f_ext.any() and not p.kappa.any() and not p.chi_hat.any()

    def test_state_length_checked(self, pair_topology):
        p = EnergyParams.initial(Topology.complete(2))
        with pytest.raises(DimensionMismatchError):
            energy_hat(p, pair_topology, np.zeros(3))
