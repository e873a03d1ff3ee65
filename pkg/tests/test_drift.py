import numpy as np
import pytest

from simplexdrift.coda import clr, closure, ilr, perturb, sbp_to_basis
from simplexdrift.drift import (
    attribute,
    attribution_sensitivity,
    delta_z,
    energy,
    new_estimate,
    update_estimate,
)
from simplexdrift.errors import AlignmentError, ConfigurationError, DomainError

FRO = ("F", "R", "O")


@pytest.fixture
def fro_basis():
    return sbp_to_basis([[1, -1, 0], [1, 1, -1]], parts=FRO)


def run(steps, **kw):
    est = new_estimate(len(steps[0]))
    for s in steps:
        est = update_estimate(est, s, **kw)
    return est


class TestDeltaZ:
    def test_zero(self, fro_basis):
        z = ilr(closure([1, 2, 3], parts=FRO), fro_basis)
        np.testing.assert_array_equal(delta_z(z, z), 0)

    def test_perturbation(self, fro_basis):
        x, p = closure([1, 2, 3], parts=FRO), closure([5, 1, 2], parts=FRO)
        dz = delta_z(ilr(x, fro_basis), ilr(perturb(x, p), fro_basis))
        np.testing.assert_allclose(dz, ilr(p, fro_basis).coords, atol=1e-14)

    def test_pitfall_step(self, fro_basis):
        z0 = ilr(closure([0.33, 0.33, 0.34], parts=FRO), fro_basis)
        zb = ilr(closure([0.45, 0.23, 0.32], parts=FRO), fro_basis)
        oracle = np.array(
            [
                np.log(0.45 / 0.23) / np.sqrt(2) - 0.0,
                np.sqrt(2 / 3) * (np.log(np.sqrt(0.45 * 0.23) / 0.32) - np.log(0.33 / 0.34)),
            ]
        )
        np.testing.assert_allclose(delta_z(z0, zb), oracle, atol=1e-12)
        np.testing.assert_allclose(delta_z(z0, zb), [0.4746, 0.0287], atol=1e-4)

    def test_basis_mismatch(self, fro_basis):
        other = sbp_to_basis([[1, 1, -1], [1, -1, 0]], parts=FRO)
        x = closure([1, 2, 3], parts=FRO)
        with pytest.raises(AlignmentError):
            delta_z(ilr(x, fro_basis), ilr(x, other))


class TestUpdateEstimate:
    def test_constant_stream_fixed_point(self):
        dz = np.array([0.03, -0.04])
        est = run([dz] * 50)
        np.testing.assert_allclose(est.smoothed, dz, atol=1e-15)
        np.testing.assert_allclose(est.direction, dz / np.linalg.norm(dz), atol=1e-12)

    def test_zero_stream_has_no_direction(self):
        est = run([np.zeros(3)] * 20)
        assert est.magnitude == 0.0
        assert est.direction is None

    def test_outlier_is_clipped(self):
        rng = np.random.default_rng(7)
        base = np.ones((60, 2)) + 0.05 * rng.standard_normal((60, 2))
        spiked = base.copy()
        spiked[55] *= 100
        clean = run(list(base)).smoothed
        robust = run(list(spiked), clip=3.0).smoothed
        naive = run(list(spiked), clip=np.inf).smoothed
        assert np.all(np.abs(robust - clean) <= 0.1 * np.abs(clean))
        assert np.all(np.abs(naive - clean) > 0.1 * np.abs(clean))

    def test_non_finite_rejected(self):
        est = run([np.array([1.0, 0.0])] * 3)
        after = update_estimate(est, [np.nan, 1.0])
        assert after.rejects == 1
        assert after.samples_seen == est.samples_seen
        np.testing.assert_array_equal(after.smoothed, est.smoothed)

    def test_lambda_domain(self):
        with pytest.raises(ConfigurationError):
            update_estimate(new_estimate(2), [0.0, 1.0], lam=0.0)

    @pytest.mark.parametrize("c", [1e-3, 0.5, 17.0])
    def test_direction_invariant_to_step_scale(self, c):
        rng = np.random.default_rng(3)
        steps = rng.standard_normal((40, 3)) + np.array([0.5, -0.2, 0.1])
        d1 = run(list(steps)).direction
        d2 = run(list(c * steps)).direction
        np.testing.assert_allclose(d1, d2, atol=1e-12)

    def test_unit_direction(self):
        rng = np.random.default_rng(4)
        est = run(list(rng.standard_normal((30, 4))))
        assert np.linalg.norm(est.direction) == pytest.approx(1.0, abs=1e-12)


class TestEnergy:
    def test_arithmetic(self):
        prof = energy([[0.1, 0.0]] * 10)
        np.testing.assert_allclose(prof.energy, [10 * 0.01, 0.0], atol=1e-15)
        np.testing.assert_allclose(prof.energy, [0.1, 0.0], atol=1e-15)

    def test_permutation_and_additivity(self):
        rng = np.random.default_rng(0)
        dz = rng.standard_normal((30, 4))
        full = energy(dz).energy
        np.testing.assert_allclose(energy(dz[rng.permutation(30)]).energy, full, atol=1e-12)
        np.testing.assert_allclose(energy(dz[:12]).energy + energy(dz[12:]).energy, full, atol=1e-12)

    def test_scatter_diagonal_is_energy(self):
        dz = np.random.default_rng(1).standard_normal((10, 3))
        prof = energy(dz)
        np.testing.assert_allclose(np.diag(prof.scatter), prof.energy)

    def test_empty(self):
        with pytest.raises(DomainError):
            energy(np.zeros((0, 3)))


class TestAttribute:
    def test_top1(self):
        a = attribute([0.5, -0.1], ["b1", "b2"], 1)
        assert a.ranking == (("b1", 0.5),)
        assert not a.no_drift

    def test_sign_kept(self):
        a = attribute([0.1, -0.5, 0.3], ["b1", "b2", "b3"], 3)
        assert a.ranking == (("b2", -0.5), ("b3", 0.3), ("b1", 0.1))

    def test_zero_diff_flagged(self):
        a = attribute([0.0, 0.0], ["b1", "b2"], 2)
        assert a.no_drift
        assert [v for _, v in a.ranking] == [0.0, 0.0]

    def test_ties_by_lower_index(self):
        assert attribute([0.2, -0.2, 0.2], ["b1", "b2", "b3"], 3).names() == ["b1", "b2", "b3"]

    def test_pitfall_scenario_b(self, fro_basis):
        z0 = ilr(closure([0.33, 0.33, 0.34], parts=FRO), fro_basis)
        zb = ilr(closure([0.45, 0.23, 0.32], parts=FRO), fro_basis)
        (top,) = attribute(zb - z0, fro_basis, 1).ranking
        assert top[0] == "F vs R"
        assert top[1] == pytest.approx(0.475, abs=5e-3)

    def test_permutation_equivariance(self):
        diff = np.array([0.3, -0.7, 0.1, 0.05])
        names = ["a", "b", "c", "d"]
        perm = [2, 0, 3, 1]
        r1 = set(attribute(diff, names, 4).ranking)
        r2 = set(attribute(diff[perm], [names[i] for i in perm], 4).ranking)
        assert r1 == r2


class TestAttributionSensitivity:
    PARTS = ("a", "b", "c", "d")

    def bases(self):
        cascade = sbp_to_basis([[1, -1, 0, 0], [1, 1, -1, 0], [1, 1, 1, -1]], parts=self.PARTS)
        paired = sbp_to_basis([[1, 1, -1, -1], [1, -1, 0, 0], [0, 0, 1, -1]], parts=self.PARTS)
        return cascade, paired

    def steps(self, seed=0):
        rng = np.random.default_rng(seed)
        x = closure([0.25, 0.25, 0.25, 0.25], parts=self.PARTS)
        steps = []
        for _ in range(40):
            p = closure(np.exp(np.array([0.05, -0.05, 0, 0]) + 0.005 * rng.standard_normal(4)), parts=self.PARTS)
            nxt = perturb(x, p)
            steps.append(clr(nxt) - clr(x))
            x = nxt
        return np.array(steps)

    def test_identical_bases(self):
        b, _ = self.bases()
        assert attribution_sensitivity(self.steps(), [b, b], 1) == pytest.approx(1.0)

    def test_all_balances(self):
        assert attribution_sensitivity(self.steps(), list(self.bases()), 3) == pytest.approx(1.0)

    def test_shared_split(self):
        cascade, paired = self.bases()
        steps = self.steps()
        # brute force: enumerate each basis's balances by energy and compare part sets
        tops = []
        for b in (cascade, paired):
            e = [((steps @ b.contrast[j]) ** 2).sum() for j in range(3)]
            tops.append(b.balance_sets(int(np.argmax(e))))
        assert tops[0] == tops[1] == (frozenset("a"), frozenset("b"))
        assert attribution_sensitivity(steps, [cascade, paired], 1) >= 0.5

    def test_different_parts(self):
        b, _ = self.bases()
        other = sbp_to_basis([[1, -1, 0, 0], [1, 1, -1, 0], [1, 1, 1, -1]], parts=("w", "x", "y", "z"))
        with pytest.raises(AlignmentError):
            attribution_sensitivity(self.steps(), [b, other], 1)
