import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from subelliptic.errors import DimensionMismatchError, DomainError
from subelliptic.families import (grushin_nonsmooth, heisenberg_model,
                                  heisenberg_nonsmooth, kolmogorov_nonsmooth,
                                  make_system)
from subelliptic.fields import (HormanderSystem, VectorFieldSpec, apply_field,
                                bracket_field, commutator, constant_field,
                                enumerate_brackets, fd_jacobian,
                                hormander_rank, hormander_rank_batch,
                                lambda_det, multiindex)


def euclidean_frame(p):
    return [constant_field(np.eye(p)[i], name=f"e{i}") for i in range(p)]


class TestApplyField:
    def test_coordinate_derivative(self):
        ex, ey = euclidean_frame(2)
        val = apply_field(ex, lambda u: u[..., 0], np.array([0.3, -0.7]))
        assert val == pytest.approx(1.0, abs=1e-9)

    def test_heisenberg_coefficient(self):
        # X1 applied to f = t at (0, 1, 0) picks out y(1 + |y|) = 2
        h = heisenberg_nonsmooth()
        val = apply_field(h.field(1), lambda u: u[..., 2],
                          np.array([0.0, 1.0, 0.0]))
        assert val == pytest.approx(2.0, abs=1e-9)

    def test_constant_function(self):
        h = heisenberg_nonsmooth()
        val = apply_field(h.field(2), lambda u: np.full(u.shape[:-1], 3.0),
                          np.array([0.1, 0.2, 0.3]))
        assert val == pytest.approx(0.0, abs=1e-9)

    def test_outside_box_raises(self):
        h = heisenberg_nonsmooth()
        with pytest.raises(DomainError):
            apply_field(h.field(1), lambda u: u[..., 0], np.array([5.0, 0, 0]),
                        domain_box=h.domain_box)

    def test_analytic_gradient_path(self):
        ex, _ = euclidean_frame(2)
        val = apply_field(ex, lambda u: u[..., 0] ** 2, np.array([2.0, 0.0]),
                          grad=lambda u: np.stack(
                              [2 * u[..., 0], np.zeros(u.shape[:-1])], axis=-1))
        assert val == pytest.approx(4.0)


class TestCommutator:
    def test_heisenberg_bracket_coefficients(self):
        h = heisenberg_nonsmooth()
        B = commutator(h.field(1), h.field(2))
        for x, y in [(0.0, 0.0), (0.3, -0.2), (-0.9, 0.5)]:
            got = B(np.array([x, y, 0.1]))
            np.testing.assert_allclose(
                got, [0.0, 0.0, -2.0 * (1.0 + abs(x) + abs(y))], atol=1e-9)

    def test_self_bracket_vanishes(self):
        h = heisenberg_nonsmooth()
        B = commutator(h.field(1), h.field(1))
        np.testing.assert_allclose(B(np.array([0.4, 0.6, -0.2])), 0.0,
                                   atol=1e-8)

    def test_kolmogorov_bracket(self):
        alpha = 0.5
        k = kolmogorov_nonsmooth(alpha)
        B = commutator(k.field(1), k.field(0))
        for x in (0.4, -0.7, 0.05):
            got = B(np.array([x, 0.0, 0.0]))
            np.testing.assert_allclose(
                got, [0.0, 1.0 + (alpha + 1.0) * abs(x) ** alpha, 0.0],
                atol=1e-9)

    def test_weight_additivity(self):
        k = kolmogorov_nonsmooth()
        assert commutator(k.field(1), k.field(0)).weight == 3

    def test_dimension_mismatch(self):
        e2 = constant_field([1.0, 0.0])
        e3 = constant_field([1.0, 0.0, 0.0])
        with pytest.raises(DimensionMismatchError):
            commutator(e2, e3)

    def test_antisymmetry(self):
        h = heisenberg_nonsmooth()
        B12 = commutator(h.field(1), h.field(2))
        B21 = commutator(h.field(2), h.field(1))
        pts = np.random.default_rng(0).uniform(-1, 1, (20, 3))
        np.testing.assert_allclose(B12(pts), -B21(pts), atol=1e-8)

    def test_jacobi_identity_analytic_fields(self):
        m = heisenberg_model()
        Y1, Y2 = m.generators
        T = constant_field([0.0, 0.0, 1.0], name="T")
        pts = np.random.default_rng(1).uniform(-1, 1, (10, 3))
        total = (commutator(Y1, commutator(Y2, T))(pts)
                 + commutator(Y2, commutator(T, Y1))(pts)
                 + commutator(T, commutator(Y1, Y2))(pts))
        np.testing.assert_allclose(total, 0.0, atol=1e-8)

    def test_fd_jacobian_matches_analytic(self):
        for sys in (heisenberg_nonsmooth(), kolmogorov_nonsmooth(0.7)):
            pts = np.random.default_rng(2).uniform(-0.9, 0.9, (50, sys.dim))
            for i in sys.field_indices:
                X = sys.field(i)
                np.testing.assert_allclose(
                    fd_jacobian(X.coeff, pts), X.jacobian(pts), atol=1e-6)


class TestEnumerateBrackets:
    def test_heisenberg_three_entries(self):
        br = enumerate_brackets(heisenberg_nonsmooth())
        assert [mi.entries for mi, _ in br] == [(1,), (2,), (1, 2)]

    def test_single_field_no_drift(self):
        X = constant_field([1.0, 0.0])
        sys = HormanderSystem(generators=(X,), step=2, alpha=1.0,
                              domain_box=[[-1, 1], [-1, 1]])
        assert len(enumerate_brackets(sys)) == 1

    def test_kolmogorov_weighted_enumeration(self):
        br = enumerate_brackets(kolmogorov_nonsmooth())
        assert [(mi.entries, mi.weight) for mi, _ in br] == [
            ((1,), 1), ((0,), 2), ((1, 0), 3)]

    def test_grushin_step3(self):
        br = enumerate_brackets(grushin_nonsmooth(r=3, alpha=0.5))
        assert [mi.entries for mi, _ in br] == [
            (1,), (2,), (1, 2), (1, 1, 2), (2, 1, 2)]

    def test_no_entry_exceeds_step(self):
        for sys in (heisenberg_nonsmooth(), kolmogorov_nonsmooth(),
                    grushin_nonsmooth(4, 0.3)):
            assert all(mi.weight <= sys.step
                       for mi, _ in enumerate_brackets(sys))


class TestHormanderRank:
    def test_heisenberg_origin(self):
        h = heisenberg_nonsmooth()
        rank, basis = hormander_rank(h, [0.0, 0.0, 0.0])
        assert rank == 3
        assert sorted(mi.entries for mi in basis) == [(1,), (1, 2), (2,)]
        det, _ = lambda_det(h, [mi for mi in basis], [0.0, 0.0, 0.0])
        assert abs(det) == pytest.approx(2.0, abs=1e-9)

    def test_deficient_system(self):
        X = constant_field([1.0, 0.0])
        sys = HormanderSystem(generators=(X,), step=2, alpha=1.0,
                              domain_box=[[-1, 1], [-1, 1]])
        rank, _ = hormander_rank(sys, [0.0, 0.0])
        assert rank == 1

    def test_grushin_rank_at_degenerate_line(self):
        g = grushin_nonsmooth(r=3, alpha=0.5)
        rank, basis = hormander_rank(g, [0.0, 0.3])
        assert rank == 2
        assert (1, 1, 2) in [mi.entries for mi in basis]

    def test_rank_invariant_under_reordering(self):
        h = heisenberg_nonsmooth()
        br = enumerate_brackets(h)
        x = [0.2, -0.4, 0.1]
        r1, _ = hormander_rank(h, x, brackets=br)
        r2, _ = hormander_rank(h, x, brackets=list(reversed(br)))
        assert r1 == r2

    @pytest.mark.parametrize("family,kwargs", [
        ("heisenberg_nonsmooth", {}),
        ("kolmogorov_nonsmooth", {"alpha": 0.5}),
        ("grushin_nonsmooth", {"r": 3, "alpha": 0.5}),
    ])
    def test_full_rank_on_1000_samples(self, family, kwargs):
        sys = make_system(family, **kwargs)
        rng = np.random.default_rng(42)
        pts = rng.uniform(sys.domain_box[:, 0], sys.domain_box[:, 1],
                          (1000, sys.dim))
        ranks = hormander_rank_batch(sys, pts)
        assert np.all(ranks == sys.dim)


class TestLambdaDet:
    def test_heisenberg_family_det(self):
        h = heisenberg_nonsmooth()
        det, total = lambda_det(h, [(1,), (2,), (1, 2)], [0.0, 0.0, 0.0])
        assert det == pytest.approx(-2.0, abs=1e-12)
        assert total == 4

    def test_repeated_row_vanishes(self):
        h = heisenberg_nonsmooth()
        det, _ = lambda_det(h, [(1,), (1,), (1, 2)], [0.1, 0.2, 0.0])
        assert det == pytest.approx(0.0, abs=1e-9)

    def test_euclidean_frame(self):
        ex, ey = euclidean_frame(2)
        sys = HormanderSystem(generators=(ex, ey), step=2, alpha=1.0,
                              domain_box=[[-1, 1], [-1, 1]])
        det, total = lambda_det(sys, [(1,), (2,)], [0.5, -0.5])
        assert det == pytest.approx(1.0)
        assert total == 2

    def test_wrong_family_size(self):
        h = heisenberg_nonsmooth()
        with pytest.raises(ValueError):
            lambda_det(h, [(1,), (2,)], [0.0, 0.0, 0.0])


class TestSystemValidation:
    def test_step2_requires_alpha1(self):
        X = constant_field([1.0, 0.0])
        with pytest.raises(ValueError):
            HormanderSystem(generators=(X,), step=2, alpha=0.5,
                            domain_box=[[-1, 1], [-1, 1]])

    def test_unknown_family(self):
        with pytest.raises(KeyError):
            make_system("no_such_family")


@given(st.lists(st.integers(min_value=0, max_value=3), min_size=1,
                max_size=5))
@settings(max_examples=50, deadline=None)
def test_multiindex_weight_recomputed(entries):
    mi = multiindex(entries)
    assert mi.weight == sum(2 if i == 0 else 1 for i in entries)
    assert mi.entries == tuple(entries)


@given(st.floats(-0.9, 0.9), st.floats(-0.9, 0.9), st.floats(-0.9, 0.9))
@settings(max_examples=25, deadline=None)
def test_nested_bracket_matches_direct_commutator(x, y, t):
    h = heisenberg_nonsmooth()
    pt = np.array([x, y, t])
    via_helper = bracket_field(h, (1, 2))(pt)
    via_commutator = commutator(h.field(1), h.field(2))(pt)
    np.testing.assert_allclose(via_helper, via_commutator, atol=1e-10)
