import numpy as np
import pytest

from subelliptic.errors import PoleError
from subelliptic.families import heisenberg_nonsmooth
from subelliptic.fields import HormanderSystem, constant_field
from subelliptic.group import abelian_group, heisenberg_group
from subelliptic.metric import (PhiTable, ProfileCache, ball_volume,
                                build_volume_profile, cc_distance_fast,
                                cc_distance_upper, doubling_ratios,
                                enlarged_system, euclidean_sandwich_check,
                                phi_beta, phi_composition_check, psi_beta,
                                volume_formula_bounds)
from subelliptic.theta import make_theta

Q_HEIS = 4


@pytest.fixture(scope="module")
def heis_theta():
    return make_theta(heisenberg_nonsmooth(), heisenberg_group(),
                      ode_step=1 / 8)


@pytest.fixture(scope="module")
def heis_big_theta():
    # widened domain box so balls up to radius ~1 do not clip
    sys = enlarged_system(heisenberg_nonsmooth(), 1.0)
    return make_theta(sys, heisenberg_group(), ode_step=1 / 8)


@pytest.fixture(scope="module")
def heis_profile(heis_big_theta):
    return build_volume_profile(heis_big_theta, np.zeros(3), 0.002, 1.0,
                                n_samples=8192, seed=2)


@pytest.fixture(scope="module")
def euclid_theta():
    g = abelian_group(3)
    return make_theta(g.model_system, g, ode_step=1 / 2)


class TestUpperDistance:
    def test_coincident_points(self, heis_theta):
        assert cc_distance_upper(heis_theta.sys, np.zeros(3),
                                 np.zeros(3)) == 0.0

    def test_euclidean_frame_max_norm(self, euclid_theta):
        # per-component control boxes |a_i| <= delta make the optimal
        # delta the max-norm of the displacement
        rng = np.random.default_rng(10)
        x = rng.uniform(-0.4, 0.4, (12, 3))
        y = rng.uniform(-0.4, 0.4, (12, 3))
        d = cc_distance_upper(euclid_theta.sys, x, y, seed=0,
                              endpoint_rtol=0.02)
        ref = np.max(np.abs(x - y), axis=-1)
        ratio = d / ref
        assert np.all(ratio >= 0.90) and np.all(ratio <= 1.10)

    def test_infeasible_pair_is_inf(self):
        sys = HormanderSystem(
            generators=(constant_field([1.0, 0.0], name="X1"),),
            step=2, alpha=1.0,
            domain_box=np.array([[-1.0, 1.0], [-1.0, 1.0]]),
            name="line_in_plane")
        d = cc_distance_upper(sys, np.zeros(2), np.array([0.0, 0.5]),
                              budget=6, restarts=4, pop=32,
                              bisection_steps=4)
        assert d == np.inf

    def test_vertical_square_root_scaling(self, heis_theta):
        # along the commutator direction d((0,0,0),(0,0,tau)) ~ sqrt(tau)
        for tau in (0.04, 0.09):
            d = cc_distance_upper(heis_theta.sys, np.zeros(3),
                                  np.array([0.0, 0.0, tau]),
                                  seed=1, endpoint_rtol=0.02)
            assert 0.50 <= d / np.sqrt(tau) <= 0.80

    def test_seed_determinism(self, heis_theta):
        x = np.array([[0.1, -0.2, 0.05], [0.0, 0.3, -0.1]])
        y = np.array([[0.25, 0.1, -0.05], [-0.2, 0.0, 0.15]])
        d1 = cc_distance_upper(heis_theta.sys, x, y, seed=7, budget=8)
        d2 = cc_distance_upper(heis_theta.sys, x, y, seed=7, budget=8)
        np.testing.assert_array_equal(d1, d2)


class TestSandwich:
    def test_heisenberg_200_pairs(self, heis_theta):
        rng = np.random.default_rng(11)
        pairs = rng.uniform(-0.45, 0.45, (200, 2, 3))
        d = cc_distance_fast(heis_theta, pairs[:, 1], pairs[:, 0])
        c1, c2, ok = euclidean_sandwich_check(heis_theta.sys, pairs, d)
        assert ok
        assert c1 > 0 and np.isfinite(c2)
        assert c2 / c1 < 50.0

    def test_too_few_pairs_rejected(self, heis_theta):
        pairs = np.zeros((10, 2, 3))
        pairs[:, 0, 0] = np.linspace(0.1, 0.4, 10)
        with pytest.raises(ValueError):
            euclidean_sandwich_check(heis_theta.sys, pairs, np.ones(10))

    def test_degenerate_pair_rejected(self, heis_theta):
        rng = np.random.default_rng(12)
        pairs = rng.uniform(-0.4, 0.4, (60, 2, 3))
        pairs[3, 1] = pairs[3, 0]
        with pytest.raises(ValueError):
            euclidean_sandwich_check(heis_theta.sys, pairs, np.ones(60))

    def test_fast_vs_upper_two_sided(self, heis_theta):
        rng = np.random.default_rng(13)
        x = rng.uniform(-0.35, 0.35, (20, 3))
        y = rng.uniform(-0.35, 0.35, (20, 3))
        fast = cc_distance_fast(heis_theta, y, x)
        upper = cc_distance_upper(heis_theta.sys, x, y, seed=3)
        assert np.all(np.isfinite(upper))
        ratio = fast / upper
        assert np.all(ratio >= 0.25) and np.all(ratio <= 4.0)


class TestBallVolume:
    def test_euclidean_ball_volume(self, euclid_theta):
        def dist(x, samples):
            return np.linalg.norm(samples - x, axis=-1)

        rho = 0.4
        vol, err = ball_volume(euclid_theta, np.zeros(3), rho,
                               n_samples=16384, seed=5, dist=dist)
        exact = 4.0 / 3.0 * np.pi * rho ** 3
        assert abs(vol - exact) <= 3.0 * err

    def test_seed_determinism(self, heis_theta):
        a = ball_volume(heis_theta, np.zeros(3), 0.3, seed=9)
        b = ball_volume(heis_theta, np.zeros(3), 0.3, seed=9)
        assert a == b

    def test_seed_stability(self, heis_theta):
        v1, e1 = ball_volume(heis_theta, np.zeros(3), 0.3,
                             n_samples=8192, seed=1)
        v2, e2 = ball_volume(heis_theta, np.zeros(3), 0.3,
                             n_samples=8192, seed=2)
        assert abs(v1 - v2) <= 4.0 * (e1 + e2)


class TestVolumeProfile:
    def test_monotone(self, heis_profile):
        assert np.all(np.diff(heis_profile.volumes) >= 0.0)

    def test_homogeneous_dimension_slope(self, heis_profile):
        r = heis_profile.radii
        sel = (r >= 0.02) & (r <= 0.3)
        slope = np.polyfit(np.log(r[sel]),
                           np.log(heis_profile.volumes[sel]), 1)[0]
        assert abs(slope - Q_HEIS) <= 0.2

    def test_doubling_bounded(self, heis_profile):
        ratios = doubling_ratios(heis_profile)
        assert np.all(ratios <= 2.0 ** (Q_HEIS + 1))
        assert np.all(ratios >= 1.0)

    def test_extrapolation_below_grid(self, heis_profile):
        r0 = heis_profile.radii[0]
        v = heis_profile.volume(np.array([r0 / 4, r0 / 2, r0]))
        assert np.all(v > 0.0) and np.all(np.diff(v) > 0.0)

    def test_volume_formula_comparable(self, heis_big_theta, heis_profile):
        sys = heis_big_theta.sys
        for rho in (0.05, 0.1, 0.2, 0.4):
            formula = volume_formula_bounds(sys, np.zeros(3), rho)
            mc = float(heis_profile.volume(rho))
            assert 3.0 <= mc / formula <= 10.0


class TestPhiBeta:
    def test_pole_and_cutoff(self, heis_profile):
        with pytest.raises(PoleError):
            phi_beta(heis_profile, 0.0, 0.5, R=0.5)
        assert phi_beta(heis_profile, 0.6, 0.5, R=0.5) == 0.0

    def test_small_beta_bound(self, heis_profile):
        # for beta < p:  phi_beta(d) <= c d^beta / |B(x, d)|
        for beta in (0.25, 0.5, 1.0):
            for d in (0.01, 0.05, 0.1):
                val = phi_beta(heis_profile, d, beta, R=0.5)
                bound = d ** beta / float(heis_profile.volume(d))
                assert 0.0 < val <= 1.5 * bound

    def test_half_radius_comparability(self, heis_profile):
        # ratio ~ 2^{Q - beta} near the pole, so one constant
        # (~2^Q with margin) works uniformly over all beta > 0
        for beta in (0.25, 0.5, 1.0, 2.0):
            for d in (0.02, 0.1):
                full = phi_beta(heis_profile, d, beta, R=0.5)
                half = phi_beta(heis_profile, d / 2, beta, R=0.5)
                assert 1.0 <= half / full <= 1.5 * 2.0 ** Q_HEIS

    def test_table_matches_adaptive(self, heis_profile):
        table = PhiTable(heis_profile, R=0.5)
        for beta in (0.5, 2.0, 5.0):
            for d in (0.01, 0.07, 0.3):
                a = phi_beta(heis_profile, d, beta, R=0.5)
                b = float(table.phi(d, beta))
                assert abs(a - b) <= 1e-3 * abs(a)

    def test_large_beta_R_scaling(self, heis_profile):
        # for beta > Q the integral is dominated by the upper limit:
        # phi_beta ~ R^{beta - Q}
        Rs = np.geomspace(0.12, 0.5, 6)
        for beta, expect in ((4.5, 0.5), (5.0, 1.0), (6.0, 2.0)):
            vals = [phi_beta(heis_profile, 0.01, beta, R) for R in Rs]
            slope = np.polyfit(np.log(Rs), np.log(vals), 1)[0]
            assert abs(slope - expect) <= 0.12

    def test_psi_beta_scaling(self, heis_profile):
        # Psi_beta(r) = int_{B(x,r)} phi_beta grows at least like
        # r^{min(beta, p)} up to constants
        for beta in (1.0, 4.0):
            rs = np.array([0.05, 0.1, 0.2, 0.4])
            vals = [psi_beta(heis_profile, r, beta, R=0.5) for r in rs]
            slope = np.polyfit(np.log(rs), np.log(vals), 1)[0]
            assert slope >= 0.8 * min(beta, 3.0)


@pytest.fixture(scope="module")
def cache(heis_big_theta):
    return ProfileCache(heis_big_theta, 0.005, 1.0, lattice_h=0.5,
                        n_radii=16, n_samples=2048, seed=4)


class TestComposition:
    def test_bounded_ratio(self, heis_big_theta, cache):
        t = heis_big_theta
        n = 7
        axis = np.linspace(-0.3, 0.3, n)
        X, Y, Z = np.meshgrid(axis, axis, axis, indexing="ij")
        nodes = np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=-1)
        w = (axis[1] - axis[0]) ** 3
        pairs = [(np.array([0.15, 0.0, 0.0]), np.array([-0.1, 0.1, 0.05])),
                 (np.array([0.0, 0.2, -0.1]), np.array([0.1, -0.15, 0.0]))]
        for x, z in pairs:
            d_xy = cc_distance_fast(t, x, nodes, strict=False)
            d_yz = cc_distance_fast(t, nodes, z, strict=False)
            for beta, gamma in ((0.25, 0.5), (1.0, 1.0)):
                lhs, rhs, ratio = phi_composition_check(
                    t, cache, x, z, beta, gamma, nodes, w, R=0.5,
                    d_xy=d_xy, d_yz=d_yz)
                assert np.isfinite(ratio)
                assert 0.02 <= ratio <= 10.0

    def test_pole_precondition(self, heis_big_theta, cache):
        x = np.array([0.1, 0.0, 0.0])
        nodes = np.zeros((8, 3))
        lhs, rhs, ratio = phi_composition_check(
            heis_big_theta, cache, x, x, 0.5, 0.5, nodes, 0.01, R=0.5)
        assert np.isnan(rhs) and np.isnan(ratio)


class TestProfileDeterminism:
    def test_byte_identical_rebuild(self, heis_big_theta):
        a = build_volume_profile(heis_big_theta, np.zeros(3), 0.01, 0.5,
                                 n_radii=8, n_samples=1024, seed=6)
        b = build_volume_profile(heis_big_theta, np.zeros(3), 0.01, 0.5,
                                 n_radii=8, n_samples=1024, seed=6)
        np.testing.assert_array_equal(a.volumes, b.volumes)
        np.testing.assert_array_equal(a.stderrs, b.stderrs)
