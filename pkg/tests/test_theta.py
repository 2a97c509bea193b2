import numpy as np
import pytest

from subelliptic.errors import DomainError
from subelliptic.families import (heisenberg_model, heisenberg_nonsmooth,
                                  kolmogorov_model, kolmogorov_nonsmooth)
from subelliptic.group import (abelian_group, group_mul, heisenberg_group,
                               kolmogorov_group)
from subelliptic.theta import (approx_residual, exp_E, jacobian_factor,
                               make_theta, theta, theta_norm, u_to_group)


@pytest.fixture(scope="module")
def heis_theta():
    return make_theta(heisenberg_nonsmooth(), heisenberg_group(),
                      ode_step=1 / 16)


@pytest.fixture(scope="module")
def kolm_theta():
    return make_theta(kolmogorov_nonsmooth(0.5), kolmogorov_group(),
                      ode_step=1 / 16)


@pytest.fixture(scope="module")
def euclid_theta():
    g = abelian_group(3)
    return make_theta(g.model_system, g, ode_step=1 / 2)


class TestExpE:
    def test_zero_coordinate_is_identity(self, heis_theta, kolm_theta):
        rng = np.random.default_rng(0)
        eta = rng.uniform(-0.5, 0.5, (20, 3))
        for t in (heis_theta, kolm_theta):
            np.testing.assert_allclose(exp_E(t, np.zeros(3), eta), eta,
                                       atol=1e-14)

    def test_euclidean_frame_linear(self, euclid_theta):
        rng = np.random.default_rng(1)
        u = rng.uniform(-0.4, 0.4, (10, 3))
        eta = rng.uniform(-0.4, 0.4, (10, 3))
        np.testing.assert_allclose(exp_E(euclid_theta, u, eta), eta + u,
                                   atol=1e-12)

    def test_heisenberg_first_direction(self, heis_theta):
        # X1's t-coefficient vanishes on y = 0, so the flow is a straight
        # line in x
        out = exp_E(heis_theta, np.array([1.0, 0.0, 0.0]), np.zeros(3),
                    check_domain=False)
        np.testing.assert_allclose(out, [1.0, 0.0, 0.0], atol=1e-12)

    def test_domain_exit_raises(self, heis_theta):
        with pytest.raises(DomainError):
            exp_E(heis_theta, np.array([5.0, 0.0, 0.0]),
                  np.array([0.9, 0.0, 0.0]))


class TestThetaInverse:
    def test_theta_at_base_point(self, heis_theta):
        eta = np.array([0.2, -0.1, 0.3])
        np.testing.assert_allclose(theta(heis_theta, eta, eta), 0.0,
                                   atol=1e-12)

    @pytest.mark.parametrize("fixture", ["heis_theta", "kolm_theta"])
    def test_round_trip_100_pairs(self, fixture, request):
        t = request.getfixturevalue(fixture)
        rng = np.random.default_rng(2)
        eta = rng.uniform(-0.45, 0.45, (100, 3))
        xi = rng.uniform(-0.45, 0.45, (100, 3))
        u = theta(t, eta, xi)
        np.testing.assert_allclose(exp_E(t, u, eta), xi, atol=1e-10)

    @pytest.mark.parametrize("sysf,gf", [(heisenberg_model, heisenberg_group),
                                         (kolmogorov_model, kolmogorov_group)],
                             ids=["heis", "kolm"])
    def test_model_chart_equals_group_law(self, sysf, gf):
        t = make_theta(sysf(), gf(), ode_step=1 / 8)
        rng = np.random.default_rng(3)
        eta = rng.uniform(-0.4, 0.4, (50, 3))
        xi = rng.uniform(-0.4, 0.4, (50, 3))
        u = u_to_group(t, theta(t, eta, xi))
        np.testing.assert_allclose(u, group_mul(t.group, -eta, xi),
                                   atol=1e-9)

    def test_injectivity_sampled(self, heis_theta):
        rng = np.random.default_rng(4)
        eta = np.array([0.1, 0.0, -0.1])
        xi = rng.uniform(-0.4, 0.4, (1000, 3))
        u = theta(heis_theta, eta, xi)
        # distinct targets must give distinct coordinates
        order = np.lexsort(u.T)
        gaps = np.linalg.norm(np.diff(u[order], axis=0), axis=-1)
        assert np.min(gaps) > 1e-8


class TestJacobianFactor:
    def test_correction_vanishes_at_zero(self, heis_theta):
        c, corr = jacobian_factor(heis_theta, np.array([0.3, 0.1, 0.0]),
                                  np.zeros(3))
        assert abs(corr) < 1e-9

    def test_euclidean_frame(self, euclid_theta):
        c, corr = jacobian_factor(euclid_theta, np.zeros(3),
                                  np.array([0.2, -0.3, 0.1]))
        assert c == pytest.approx(1.0)
        assert abs(corr) < 1e-9

    def test_heisenberg_determinant_and_linearity(self, heis_theta):
        rng = np.random.default_rng(5)
        c, _ = jacobian_factor(heis_theta, np.zeros(3), np.zeros(3))
        assert c == pytest.approx(2.0, rel=1e-9)
        # |correction| = O(||u||): fitted log-log exponent >= 0.9
        norms = np.geomspace(0.02, 0.4, 8)
        corrs = []
        for s in norms:
            direction = rng.uniform(-1, 1, 3)
            direction /= np.linalg.norm(direction)
            _, corr = jacobian_factor(heis_theta, np.zeros(3), s * direction)
            corrs.append(max(abs(corr), 1e-14))
        slope = np.polyfit(np.log(norms), np.log(corrs), 1)[0]
        assert slope >= 0.9


class TestApproxResidual:
    def test_model_system_residual_vanishes(self):
        t = make_theta(heisenberg_model(), heisenberg_group(), ode_step=1 / 8)

        def f(u):
            return u[..., 0] ** 2 + u[..., 1] * u[..., 2]

        def fgrad(u):
            return np.stack([2 * u[..., 0], u[..., 2], u[..., 1]], axis=-1)

        rng = np.random.default_rng(6)
        eta = rng.uniform(-0.3, 0.3, 3)
        xi = rng.uniform(-0.3, 0.3, (20, 3))
        res = approx_residual(t, 1, f, fgrad, eta, xi)
        assert np.max(np.abs(res)) <= 1e-6

    def test_homogeneous_decay_generator(self, heis_theta):
        # f homogeneous of degree -k: |R_i f| <= c / ||u||^{k+1-alpha},
        # checked as a log-log slope over a dyadic range (alpha = 1)
        k = 2

        def f(u):
            N4 = u[..., 0] ** 4 + u[..., 1] ** 4 + u[..., 2] ** 2
            return N4 ** (-k / 4.0)

        def fgrad(u):
            N4 = u[..., 0] ** 4 + u[..., 1] ** 4 + u[..., 2] ** 2
            pref = (-k / 4.0) * N4 ** (-k / 4.0 - 1.0)
            return pref[..., None] * np.stack(
                [4 * u[..., 0] ** 3, 4 * u[..., 1] ** 3, 2 * u[..., 2]],
                axis=-1)

        eta = np.array([0.15, -0.1, 0.05])
        base = np.array([0.3, 0.25, 0.1])
        scales = 2.0 ** -np.arange(0, 5)
        norms, resids = [], []
        for s in scales:
            u = base * np.array([s, s, s ** 2])
            xi = exp_E(heis_theta, u, eta, check_domain=False)
            r = abs(float(approx_residual(heis_theta, 1, f, fgrad, eta, xi)))
            norms.append(float(theta_norm(heis_theta,
                                          theta(heis_theta, eta, xi))))
            resids.append(max(r, 1e-14))
        slope = np.polyfit(np.log(norms), np.log(resids), 1)[0]
        # bound exponent is -(k + 1 - alpha) = -2; allow sampling slack
        assert slope <= -(k + 1 - heis_theta.sys.alpha) + 0.5

    def test_homogeneous_decay_drift(self, kolm_theta):
        # drift direction carries weight 2: exponent k + 2 - alpha
        k = 2

        def f(u):
            S = u[..., 0] ** 12 + u[..., 1] ** 4 + u[..., 2] ** 6
            return S ** (-k / 12.0)

        def fgrad(u):
            S = u[..., 0] ** 12 + u[..., 1] ** 4 + u[..., 2] ** 6
            pref = (-k / 12.0) * S ** (-k / 12.0 - 1.0)
            return pref[..., None] * np.stack(
                [12 * u[..., 0] ** 11, 4 * u[..., 1] ** 3,
                 6 * u[..., 2] ** 5], axis=-1)

        eta = np.array([0.1, 0.02, -0.05])
        base = np.array([0.3, 0.15, 0.2])
        scales = 2.0 ** -np.arange(0, 4)
        norms, resids = [], []
        for s in scales:
            u = base * np.array([s, s ** 2, s ** 3])
            xi = exp_E(kolm_theta, u, eta, check_domain=False)
            r = abs(float(approx_residual(kolm_theta, 0, f, fgrad, eta, xi)))
            norms.append(float(theta_norm(kolm_theta,
                                          theta(kolm_theta, eta, xi))))
            resids.append(max(r, 1e-14))
        slope = np.polyfit(np.log(norms), np.log(resids), 1)[0]
        alpha = kolm_theta.sys.alpha
        assert slope <= -(k + 2 - alpha) + 0.8
