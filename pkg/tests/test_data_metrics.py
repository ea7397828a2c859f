import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from combostoc.data_metrics import (StructuredSpec, energy_distance,
                                    make_2d_dataset, make_structured_dataset,
                                    structure_validity)
from combostoc.errors import UnknownKind
from combostoc.tensor_core import RandomSource

SPEC = StructuredSpec()


class Test2dDatasets:
    def test_single_point(self):
        ds = make_2d_dataset("single_point", 5, RandomSource(0))
        assert np.array_equal(ds.samples, np.tile([1.0, 1.0], (5, 1)))

    def test_unknown_kind(self):
        with pytest.raises(UnknownKind):
            make_2d_dataset("spiral", 10, RandomSource(0))

    def test_gauss_mixture_single_component_mean(self):
        n = 4000
        ds = make_2d_dataset("gauss_mixture", n, RandomSource(1),
                             centers=((0.0, 0.0),), sigma=0.35)
        raw = ds.denormalize(ds.samples)
        assert np.all(np.abs(raw.mean(axis=0)) < 3 * 0.35 / np.sqrt(n))

    def test_two_moons_radius_bound(self):
        ds = make_2d_dataset("two_moons", 5000, RandomSource(2))
        assert np.all(np.linalg.norm(ds.samples, axis=1) < 2.0)

    def test_normalized_moments(self):
        ds = make_2d_dataset("checkerboard", 5000, RandomSource(3))
        assert np.all(np.abs(ds.samples.mean(axis=0)) < 1e-12)
        rms = np.sqrt(np.mean(np.sum(ds.samples ** 2, axis=1)))
        assert abs(rms - 1.0) < 1e-12

    @given(st.sampled_from(["two_moons", "gauss_mixture", "checkerboard"]),
           st.integers(0, 50))
    @settings(max_examples=20, deadline=None)
    def test_normalization_round_trip(self, kind, seed):
        ds = make_2d_dataset(kind, 200, RandomSource(seed))
        back = ds.normalize(ds.denormalize(ds.samples))
        np.testing.assert_allclose(back, ds.samples, atol=1e-12)

    def test_determinism(self):
        a = make_2d_dataset("two_moons", 100, RandomSource(7)).samples
        b = make_2d_dataset("two_moons", 100, RandomSource(7)).samples
        assert np.array_equal(a, b)


class TestStructuredDataset:
    def test_generator_passes_own_rules(self):
        for label in (0, 1):
            ds = make_structured_dataset(SPEC, label, 50, RandomSource(4))
            for sample in ds.samples:
                report = structure_validity(sample, SPEC, label)
                assert report.all_ok, report

    def test_dead_tokens_zero(self):
        ds = make_structured_dataset(SPEC, 0, 30, RandomSource(5))
        for sample in ds.samples:
            dead = sample[:, 0] == 0.0
            assert np.all(sample[dead] == 0.0)

    def test_token_width(self):
        assert SPEC.token_width == 13
        assert SPEC.seg_widths == (1, 4, 8)

    def test_determinism(self):
        a = make_structured_dataset(SPEC, 1, 20, RandomSource(6)).samples
        b = make_structured_dataset(SPEC, 1, 20, RandomSource(6)).samples
        assert np.array_equal(a, b)


class TestEnergyDistance:
    def test_identical_multisets_zero(self):
        a = RandomSource(8).normal((500, 2))
        assert energy_distance(a, a.copy()) == 0.0

    def test_symmetry(self):
        a = RandomSource(9).normal((300, 2))
        b = RandomSource(10).normal((300, 2)) + 1.0
        assert energy_distance(a, b) == energy_distance(b, a)

    def test_nonnegative(self):
        a = RandomSource(11).normal((400, 3))
        b = RandomSource(12).normal((400, 3)) * 1.5
        assert energy_distance(a, b) >= 0.0

    def test_gaussian_analytic_oracle(self):
        # 1D unit Gaussians 3 apart: closed-form via E|N(mu, 2)|
        n = 10_000
        a = RandomSource(13).normal((n, 1))
        b = RandomSource(14).normal((n, 1)) + 3.0

        def folded_mean(mu, sigma):
            return (sigma * np.sqrt(2 / np.pi) * np.exp(-mu ** 2 / (2 * sigma ** 2))
                    + mu * (1 - 2 * stats.norm.cdf(-mu / sigma)))

        analytic = 2 * folded_mean(3.0, np.sqrt(2)) - 2 * folded_mean(0.0, np.sqrt(2))
        ours = energy_distance(a, b)
        assert abs(ours - analytic) / analytic < 0.05

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            energy_distance(np.zeros((0, 2)), np.zeros((5, 2)))

    def test_null_calibration_magnitude(self):
        # two independent halves of one dataset: small but nonzero, so the
        # trainer threshold tau = 2x null sits strictly above the null
        ds = make_2d_dataset("two_moons", 4096, RandomSource(15))
        null = energy_distance(ds.samples[:2048], ds.samples[2048:])
        assert 0.0 < null < 0.01


class TestValidity:
    def test_out_of_bounds_flagged(self):
        ds = make_structured_dataset(SPEC, 0, 1, RandomSource(16))
        sample = ds.samples[0].copy()
        live = np.nonzero(sample[:, 0] > 0.5)[0]
        sample[live[0], 1] = 5.0  # move a part's center far outside
        assert not structure_validity(sample, SPEC, 0).bounds_ok

    def test_non_binary_existence_flagged(self):
        ds = make_structured_dataset(SPEC, 0, 1, RandomSource(17))
        sample = ds.samples[0].copy()
        sample[0, 0] = 0.4
        assert not structure_validity(sample, SPEC, 0).binary_ok

    def test_class_rule_violation(self):
        ds = make_structured_dataset(SPEC, 0, 1, RandomSource(18))
        sample = ds.samples[0].copy()
        live = np.nonzero(sample[:, 0] > 0.5)[0]
        # drop the table top below every leg
        sample[live[0], 2] = -0.95
        assert not structure_validity(sample, SPEC, 0).class_rule_ok
