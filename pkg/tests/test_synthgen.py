import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from simplexdrift.coda import closure, ilr, perturb, power
from simplexdrift.errors import SpecError
from simplexdrift.lineage import LineageEvent
from simplexdrift.synthgen import (
    PRESETS,
    ScenarioSpec,
    generate,
    inject_churn,
    other_share_z,
    preset,
    random_churn,
    write_trace,
)


def spec_from(name="ramp", seed=0, **overrides):
    d = preset(name, seed)
    d.update(overrides)
    return ScenarioSpec.from_dict(d)


class TestSimulation:
    def test_zero_drift_zero_noise_is_constant(self):
        spec = spec_from(segments=[{"length": 30, "drift": [0, 0, 0], "beta": 0.0, "sigma": 0.0}])
        trace = generate(spec)
        assert np.all(trace.z == trace.z[0])
        first = trace.observations[0].parts
        for o in trace.observations:
            assert o.parts == first

    def test_ramp_crosses_at_29(self):
        trace = generate(spec_from("ramp", z0=[0.0, 0.0, 0.0]))
        assert trace.labels.noiseless == {"F/R<=1.5": 29}
        assert trace.labels.noisy == {"F/R<=1.5": 29}
        assert trace.labels.degenerate == ()

    def test_ramp_preset_other_share(self):
        trace = generate(spec_from("ramp"))
        assert trace.observations[0].parts["x1"] == pytest.approx(0.05, abs=1e-12)
        assert trace.labels.noiseless["F/R<=1.5"] == 29

    def test_same_seed_same_trace(self):
        a, b = generate(spec_from("shock", seed=4)), generate(spec_from("shock", seed=4))
        np.testing.assert_array_equal(a.z, b.z)
        assert [o.parts for o in a.observations] == [o.parts for o in b.observations]

    def test_different_seed_differs(self):
        a, b = generate(spec_from("shock", seed=4)), generate(spec_from("shock", seed=5))
        assert not np.array_equal(a.z, b.z)

    def test_noiseless_increment_is_exact(self):
        trace = generate(spec_from("ramp"))
        dz = np.diff(trace.z, axis=0)
        np.testing.assert_allclose(dz, np.tile([0.01, 0, 0], (dz.shape[0], 1)), atol=1e-15)

    def test_equivalent_to_simplex_operations(self):
        spec = spec_from("shock", seed=2)
        trace = generate(spec)
        basis = spec.basis
        comps = trace.group_compositions()
        s = spec.segments[1]
        g = closure(np.exp(basis.contrast.T @ np.asarray(s.drift)), parts=basis.parts)
        for t in range(100, 115):
            eta_z = trace.z[t + 1] - trace.z[t] - s.beta * np.asarray(s.drift)
            eta = closure(np.exp(basis.contrast.T @ eta_z), parts=basis.parts)
            expected = perturb(perturb(comps[t], power(s.beta, g)), eta)
            np.testing.assert_allclose(comps[t + 1].values, expected.values, atol=1e-10)
            np.testing.assert_allclose(ilr(comps[t + 1], basis).coords, trace.z[t + 1], atol=1e-10)

    def test_degenerate_start(self):
        trace = generate(spec_from("ramp", z0=[0.5, 0.0, 0.0]))
        assert trace.labels.noiseless["F/R<=1.5"] == 0
        assert trace.labels.degenerate == ("F/R<=1.5",)

    def test_truth_segments(self):
        truth = generate(spec_from("shock")).truth()
        assert [(s["start"], s["end"], s["stationary"]) for s in truth["segments"]] == [(0, 100, True), (100, 120, False)]

    @pytest.mark.parametrize("name", PRESETS)
    def test_presets_generate(self, name):
        trace = generate(spec_from(name))
        assert trace.n_steps == spec_from(name).n_steps


class TestValidation:
    def test_seed_required(self):
        d = preset("ramp")
        d.pop("seed")
        with pytest.raises(SpecError):
            ScenarioSpec.from_dict(d)

    def test_bad_template(self):
        with pytest.raises(SpecError):
            spec_from(leaves={"F": {"f1": 0.5, "f2": 0.4}})

    def test_bad_drift_dim(self):
        with pytest.raises(SpecError):
            spec_from(segments=[{"length": 5, "drift": [1, 0], "beta": 0.1}])

    def test_constraint_unknown_group(self):
        with pytest.raises(SpecError):
            spec_from(constraints=[{"name": "c", "coeffs": {"F": 1, "Q": -1}}])

    def test_unknown_preset(self):
        with pytest.raises(SpecError):
            preset("nope")

    def test_split_fractions_must_sum_to_one(self):
        trace = generate(spec_from("ramp"))
        ev = LineageEvent("split", {"parent": "r1", "children": ["ra", "rb"], "fractions": [0.5, 0.4]}, at=5)
        with pytest.raises(SpecError):
            inject_churn(trace, [ev])

    def test_cross_group_merge_rejected(self):
        trace = generate(spec_from("ramp"))
        ev = LineageEvent("merge", {"parents": ["f1", "r1"], "new": "fr"}, at=5)
        with pytest.raises(SpecError):
            inject_churn(trace, [ev])


class TestChurn:
    def test_split_conserves_group_mass(self):
        trace = generate(spec_from("ramp"))
        ev = LineageEvent("split", {"parent": "r1", "children": ["r1a", "r1b"], "fractions": [0.3, 0.7]}, at=10)
        churned = inject_churn(trace, [ev])
        before, after = trace.observations[12].parts, churned.observations[12].parts
        assert "r1" not in after
        assert after["r1a"] + after["r1b"] == pytest.approx(before["r1"], rel=1e-14)
        assert sum(after.values()) == pytest.approx(sum(before.values()), rel=1e-14)
        np.testing.assert_array_equal(churned.z, trace.z)

    def test_merge_and_rename(self):
        trace = generate(spec_from("ramp"))
        evs = [
            LineageEvent("merge", {"parents": ["o1", "o2"], "new": "o"}, at=3),
            LineageEvent("rename", {"old": "f1", "new": "feature-a"}, at=4),
        ]
        after = inject_churn(trace, evs).observations[5].parts
        before = trace.observations[5].parts
        assert after["o"] == pytest.approx(before["o1"] + before["o2"], rel=1e-14)
        assert after["feature-a"] == before["f1"]

    def test_add_takes_share_of_group(self):
        trace = generate(spec_from("ramp"))
        ev = LineageEvent("add", {"part": "x2", "group": "other", "fraction": 0.25}, at=2)
        after = inject_churn(trace, [ev]).observations[2].parts
        assert after["x2"] == pytest.approx(0.25 * trace.observations[2].parts["x1"], rel=1e-14)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000), st.integers(1, 30))
    def test_random_churn_conserves_mass(self, seed, n):
        spec = spec_from("stationary")
        events = random_churn(spec, n, seed)
        churned = inject_churn(generate(spec), events)
        plain = generate(spec)
        for t in (0, spec.n_steps // 2, spec.n_steps - 1):
            assert sum(churned.observations[t].parts.values()) == pytest.approx(
                sum(plain.observations[t].parts.values()), rel=1e-12
            )


def test_other_share_z():
    trace = generate(spec_from("ramp", z0=[0.0, 0.0, other_share_z(0.1)]))
    assert trace.observations[0].parts["x1"] == pytest.approx(0.1, abs=1e-12)


def test_write_trace(tmp_path):
    paths = write_trace(generate(spec_from("ramp")), tmp_path)
    for p in paths.values():
        assert p.exists()
    assert len(paths["observations"].read_text().splitlines()) == 60
