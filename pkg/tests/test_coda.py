import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from simplexdrift.coda import (
    Composition,
    aitchison_distance,
    closure,
    default_sbp,
    ilr,
    ilr_inv,
    inverse,
    perturb,
    power,
    sbp_to_basis,
    uniform,
    zero_replace,
)
from simplexdrift.errors import (
    AlignmentError,
    ConfigurationError,
    DegenerateInputError,
    DimensionError,
    DomainError,
    StructureError,
)

FRO = ("F", "R", "O")
X0 = (0.33, 0.33, 0.34)
XB = (0.45, 0.23, 0.32)


@pytest.fixture
def fro_basis():
    return sbp_to_basis([[1, -1, 0], [1, 1, -1]], parts=FRO)


def random_sbp(rng, n):
    """Random valid SBP by recursively splitting groups in random order."""
    rows = []
    pending = [list(range(n))]
    while pending:
        group = pending.pop(rng.integers(len(pending)))
        perm = rng.permutation(group)
        cut = rng.integers(1, len(group))
        pos, neg = perm[:cut], perm[cut:]
        row = np.zeros(n, dtype=int)
        row[pos] = 1
        row[neg] = -1
        rows.append(row)
        pending.extend(g.tolist() for g in (pos, neg) if len(g) > 1)
    return np.array(rows)


compositions = st.integers(3, 8).flatmap(
    lambda d: st.lists(st.floats(1e-3, 1e3), min_size=d, max_size=d)
)


class TestClosure:
    def test_normalises(self):
        np.testing.assert_allclose(closure([1, 1, 2]).values, [0.25, 0.25, 0.5])

    def test_already_closed_input_is_unchanged(self):
        np.testing.assert_allclose(closure(X0).values, X0, rtol=1e-12)

    def test_scale_invariance(self):
        v = np.array([0.2, 3.0, 1.7, 0.01])
        np.testing.assert_allclose(closure(7 * v).values, closure(v).values, atol=1e-15)

    def test_non_positive_entry_names_part(self):
        with pytest.raises(DomainError, match="R"):
            closure([1.0, 0.0, 2.0], parts=FRO)

    def test_too_few_parts(self):
        with pytest.raises(DimensionError):
            closure([1.0])

    def test_mapping_input(self):
        x = closure({"a": 1.0, "b": 3.0})
        assert x.parts == ("a", "b")
        assert x["b"] == pytest.approx(0.75)

    def test_composition_rejects_unclosed(self):
        with pytest.raises(DomainError):
            Composition(("a", "b"), np.array([0.5, 0.6]))

    def test_composition_rejects_duplicate_ids(self):
        with pytest.raises(StructureError):
            Composition(("a", "a"), np.array([0.5, 0.5]))


class TestPerturbPower:
    def test_identity_element(self):
        x = closure([0.2, 0.5, 0.3])
        np.testing.assert_allclose(perturb(x, uniform(3)).values, x.values, atol=1e-15)

    def test_componentwise_product(self):
        x, y = closure([0.25, 0.25, 0.5]), closure([0.5, 0.25, 0.25])
        prod = np.array([0.25 * 0.5, 0.25 * 0.25, 0.5 * 0.25])
        expected = prod / prod.sum()
        np.testing.assert_allclose(perturb(x, y).values, expected, atol=1e-15)
        np.testing.assert_allclose(perturb(x, y).values, [0.4, 0.2, 0.4], atol=1e-15)

    def test_group_inverse(self):
        x = closure([0.1, 0.7, 0.2])
        np.testing.assert_allclose(perturb(x, inverse(x)).values, uniform(3).values, atol=1e-15)

    def test_misaligned(self):
        with pytest.raises(AlignmentError):
            perturb(closure([1, 2], parts="ab"), closure([1, 2], parts="ba"))

    def test_power_identity_and_neutral(self):
        x = closure([0.1, 0.7, 0.2])
        np.testing.assert_allclose(power(1, x).values, x.values, atol=1e-15)
        np.testing.assert_allclose(power(0, x).values, uniform(3).values, atol=1e-15)

    def test_power_two(self):
        np.testing.assert_allclose(power(2, closure([0.4, 0.6])).values, [0.16 / 0.52, 0.36 / 0.52], atol=1e-15)

    def test_power_non_finite(self):
        with pytest.raises(DomainError):
            power(float("nan"), closure([1, 2]))

    def test_power_large_exponent_does_not_underflow(self):
        y = power(500.0, closure([0.01, 0.99]))
        assert np.all(y.values > 0)
        assert y.values.sum() == pytest.approx(1.0)

    @settings(max_examples=50, deadline=None)
    @given(st.data())
    def test_group_laws(self, data):
        d = data.draw(st.integers(2, 6))
        vecs = [data.draw(st.lists(st.floats(1e-3, 1e3), min_size=d, max_size=d)) for _ in range(3)]
        x, y, w = (closure(v) for v in vecs)
        np.testing.assert_allclose(perturb(x, y).values, perturb(y, x).values, atol=1e-12)
        np.testing.assert_allclose(
            perturb(perturb(x, y), w).values, perturb(x, perturb(y, w)).values, atol=1e-12
        )


class TestBasis:
    def test_fro_rows(self, fro_basis):
        V = fro_basis.contrast
        np.testing.assert_allclose(V[0], [1 / np.sqrt(2), -1 / np.sqrt(2), 0], atol=1e-15)
        np.testing.assert_allclose(V[1], [1 / np.sqrt(6), 1 / np.sqrt(6), -2 / np.sqrt(6)], atol=1e-15)

    def test_two_parts(self):
        b = sbp_to_basis([[1, -1]])
        np.testing.assert_allclose(b.contrast, [[1 / np.sqrt(2), -1 / np.sqrt(2)]])

    @pytest.mark.parametrize("d", range(2, 9))
    def test_random_sbps_are_orthonormal(self, d):
        rng = np.random.default_rng(d)
        for _ in range(20):
            V = sbp_to_basis(random_sbp(rng, d)).contrast
            np.testing.assert_allclose(V @ V.T, np.eye(d - 1), atol=1e-12)
            np.testing.assert_allclose(V.sum(axis=1), 0, atol=1e-12)

    def test_row_without_both_signs(self):
        with pytest.raises(StructureError):
            sbp_to_basis([[1, 1, 0], [1, -1, -1]])

    def test_non_refining_split(self):
        # second row straddles the two groups created by the first
        with pytest.raises(StructureError):
            sbp_to_basis([[1, 1, -1, -1], [0, 1, -1, 0], [1, -1, 0, 0]])

    def test_wrong_row_count(self):
        with pytest.raises(StructureError):
            sbp_to_basis([[1, -1, 0]])

    def test_default_names(self, fro_basis):
        assert fro_basis.names == ("F vs R", "F,R vs O")


class TestIlr:
    def test_uniform_maps_to_origin(self, fro_basis):
        np.testing.assert_allclose(ilr(uniform(FRO), fro_basis).coords, 0, atol=1e-15)

    def test_worked_example_first_balance(self, fro_basis):
        z = ilr(closure(XB, parts=FRO), fro_basis).coords
        assert z[0] == pytest.approx(np.log(0.45 / 0.23) / np.sqrt(2), abs=1e-12)
        assert z[0] == pytest.approx(0.475, abs=5e-3)
        assert z[1] == pytest.approx(np.sqrt(2 / 3) * np.log(np.sqrt(0.45 * 0.23) / 0.32), abs=1e-12)

    def test_inverse_of_worked_example_point(self, fro_basis):
        x = ilr_inv(np.array([0.4746, 0.00435]), fro_basis)
        np.testing.assert_allclose(x.values, XB, atol=5e-3)

    def test_inverse_origin(self, fro_basis):
        np.testing.assert_allclose(ilr_inv(np.zeros(2), fro_basis).values, 1 / 3, atol=1e-15)

    def test_homomorphism(self, fro_basis):
        z1, z2 = np.array([0.3, -1.2]), np.array([-0.7, 0.4])
        lhs = ilr_inv(z1 + z2, fro_basis)
        rhs = perturb(ilr_inv(z1, fro_basis), ilr_inv(z2, fro_basis))
        np.testing.assert_allclose(lhs.values, rhs.values, atol=1e-15)

    def test_dimension_mismatch(self, fro_basis):
        with pytest.raises(AlignmentError):
            ilr(closure([1, 2, 3, 4]), fro_basis)
        with pytest.raises(AlignmentError):
            ilr_inv(np.zeros(3), fro_basis)

    def test_non_finite_coordinates(self, fro_basis):
        with pytest.raises(DomainError):
            ilr_inv(np.array([np.inf, 0.0]), fro_basis)

    @settings(max_examples=100, deadline=None)
    @given(compositions)
    def test_round_trip(self, v):
        x = closure(v)
        basis = sbp_to_basis(default_sbp(len(v)))
        np.testing.assert_allclose(ilr_inv(ilr(x, basis), basis).values, x.values, atol=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(compositions, st.floats(0, 10), st.integers(0, 2**31))
    def test_additive_correspondence(self, v, beta, seed):
        rng = np.random.default_rng(seed)
        x = closure(v)
        g = closure(rng.uniform(0.01, 1, len(v)))
        basis = sbp_to_basis(random_sbp(rng, len(v)))
        lhs = ilr(perturb(x, power(beta, g)), basis).coords
        rhs = ilr(x, basis).coords + beta * ilr(g, basis).coords
        np.testing.assert_allclose(lhs, rhs, atol=1e-10)


class TestDistance:
    def test_self_distance(self, fro_basis):
        x = closure(X0, parts=FRO)
        assert aitchison_distance(x, x, fro_basis) == 0.0

    def test_pitfall_distance_against_direct_ilr_difference(self, fro_basis):
        x0, xb = closure(X0, parts=FRO), closure(XB, parts=FRO)
        # brute force: balances from explicit formulas
        def balances(x):
            f, r, o = x
            return np.array([np.log(f / r) / np.sqrt(2), np.sqrt(2 / 3) * np.log(np.sqrt(f * r) / o)])

        oracle = np.linalg.norm(balances(XB) - balances(X0))
        assert aitchison_distance(x0, xb, fro_basis) == pytest.approx(oracle, abs=1e-12)
        assert oracle == pytest.approx(0.4755, abs=1e-4)

    @pytest.mark.parametrize("d", [3, 5, 8])
    def test_basis_and_perturbation_invariance(self, d):
        rng = np.random.default_rng(100 + d)
        b1 = sbp_to_basis(random_sbp(rng, d))
        b2 = sbp_to_basis(random_sbp(rng, d))
        for _ in range(50):
            x, y, p = (closure(rng.dirichlet(np.ones(d))) for _ in range(3))
            d1 = aitchison_distance(x, y, b1)
            assert d1 == pytest.approx(aitchison_distance(x, y, b2), abs=1e-9)
            assert d1 == pytest.approx(aitchison_distance(perturb(p, x), perturb(p, y), b1), abs=1e-9)
            assert d1 == pytest.approx(aitchison_distance(x, y), abs=1e-9)


class TestZeroReplace:
    def test_no_zeros_unchanged(self):
        v = np.array([0.2, 0.3, 0.5])
        np.testing.assert_array_equal(zero_replace(v, 0.01), v)

    def test_multiplicative_formula(self):
        v = np.array([0.0, 0.5, 0.5])
        delta = 0.01
        expected = [delta, 0.5 * (1 - delta), 0.5 * (1 - delta)]
        np.testing.assert_allclose(zero_replace(v, delta), expected, atol=1e-15)
        np.testing.assert_allclose(zero_replace(v, delta), [0.01, 0.495, 0.495], atol=1e-15)

    def test_total_preserved_on_raw_scale(self):
        v = np.array([0.0, 30.0, 70.0, 0.0])
        out = zero_replace(v, 0.001)
        assert out.sum() == pytest.approx(100.0)
        np.testing.assert_allclose(closure(out).values, closure(zero_replace(v / 100, 0.001)).values)

    def test_all_zero(self):
        with pytest.raises(DegenerateInputError):
            zero_replace([0.0, 0.0, 0.0], 0.01)

    def test_delta_too_large(self):
        with pytest.raises(ConfigurationError):
            zero_replace([0.0, 0.005, 0.995], 0.01)
