import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from combostoc.errors import DegeneratePair, SchedulerAtOne
from combostoc.interpolant import (GridLayout, StructuredLayout, UnsyncConfig,
                                   compensation_velocity, cone_velocity,
                                   drift_offset, interpolate, make_batch,
                                   regression_target, sample_timesteps)
from combostoc.tensor_core import RandomSource

GRID = GridLayout(channels=3, height=4, width=5)
STRUCT = StructuredLayout(parts=8, seg_widths=(1, 4, 8))


class TestTimestepShapes:
    @pytest.mark.parametrize("mode,shape", [
        ("none", (1, 1, 1)), ("patch", (1, 4, 5)),
        ("vec", (3, 1, 1)), ("all", (3, 4, 5)),
    ])
    def test_grid_modes(self, mode, shape):
        t = sample_timesteps(UnsyncConfig(mode, GRID), 6, RandomSource(0))
        assert t.shape == (6,) + shape

    @pytest.mark.parametrize("mode,shape", [
        ("none", (1, 1)), ("part", (8, 1)), ("att", (1, 3)),
        ("att_part", (8, 3)), ("vec", (1, 13)), ("all", (8, 13)),
    ])
    def test_structured_modes(self, mode, shape):
        t = sample_timesteps(UnsyncConfig(mode, STRUCT), 6, RandomSource(0))
        assert t.shape == (6,) + shape

    def test_att_expansion_broadcasts_per_segment(self):
        t = sample_timesteps(UnsyncConfig("att_part", STRUCT), 2, RandomSource(1))
        full = STRUCT.expand_timesteps(t)
        assert full.shape == (2, 8, 13)
        # each segment carries one value repeated across its width
        assert np.all(full[:, :, 1:5] == full[:, :, 1:2])
        assert np.all(full[:, :, 5:] == full[:, :, 5:6])

    def test_invalid_mode_rejected(self):
        with pytest.raises(ValueError):
            UnsyncConfig("att", GRID)

    def test_mix_prefix(self):
        cfg = UnsyncConfig("all", GRID, mix_fraction=0.5)
        t = sample_timesteps(cfg, 4, RandomSource(3))
        for i in (0, 1):
            assert np.ptp(t[i]) == 0.0  # synchronized records are one scalar
        for i in (2, 3):
            assert np.ptp(t[i]) > 0.0

    def test_entries_in_unit_interval(self):
        t = sample_timesteps(UnsyncConfig("all", STRUCT), 64, RandomSource(5))
        assert t.min() >= 0.0 and t.max() < 1.0


class TestInterpolate:
    def test_endpoints(self):
        z, x1 = np.array([1.0, -2.0]), np.array([3.0, 4.0])
        assert np.array_equal(interpolate(z, x1, np.zeros(2)), z)
        assert np.array_equal(interpolate(z, x1, np.ones(2)), x1)

    def test_elementwise_example(self):
        out = interpolate(np.zeros(2), np.array([2.0, 4.0]),
                          np.array([0.5, 0.25]))
        assert np.array_equal(out, [1.0, 1.0])

    @given(st.floats(0.0, 1.0), st.integers(0, 1000))
    @settings(max_examples=50, deadline=None)
    def test_scalar_recoverability(self, s, seed):
        rng = np.random.default_rng(seed)
        z, x1 = rng.standard_normal(5), rng.standard_normal(5)
        vec = interpolate(z, x1, np.full(5, s))
        scalar = (1.0 - s) * z + s * x1
        np.testing.assert_allclose(vec, scalar, rtol=2e-16, atol=0)

    @given(st.integers(0, 1000))
    @settings(max_examples=50, deadline=None)
    def test_span_containment(self, seed):
        rng = np.random.default_rng(seed)
        z, x1 = rng.standard_normal(6), rng.standard_normal(6)
        t = rng.random(6)
        x_t = interpolate(z, x1, t)
        lo, hi = np.minimum(z, x1), np.maximum(z, x1)
        assert np.all(x_t >= lo - 1e-12) and np.all(x_t <= hi + 1e-12)

    def test_uniform_span_coverage_ks(self):
        # per-axis KS of 1e5 span samples against uniform on the span
        z, x1 = np.array([-1.0, 2.0]), np.array([3.0, -0.5])
        t = RandomSource(8).uniform((100_000, 2))
        x_t = interpolate(z, x1, t)
        for axis in range(2):
            lo, hi = sorted((z[axis], x1[axis]))
            u = np.sort((x_t[:, axis] - lo) / (hi - lo))
            grid_pos = np.arange(1, len(u) + 1) / len(u)
            ks = max(np.abs(grid_pos - u).max(),
                     np.abs(u - (grid_pos - 1 / len(u))).max())
            assert ks < 0.02


class TestDriftOffset:
    def test_diagonal_point_zero(self):
        z, x1 = np.zeros(2), np.array([1.0, 1.0])
        x_t = interpolate(z, x1, np.full(2, 0.3))
        np.testing.assert_allclose(drift_offset(x_t, z, x1), 0.0, atol=1e-15)

    def test_hand_example(self):
        out = drift_offset(np.array([1.0, 0.0]), np.zeros(2), np.ones(2))
        np.testing.assert_allclose(out, [0.5, -0.5], atol=1e-15)

    def test_at_target_zero(self):
        x1 = np.array([2.0, -1.0])
        np.testing.assert_allclose(drift_offset(x1, np.zeros(2), x1), 0.0)

    def test_degenerate_pair(self):
        p = np.array([1.0, 1.0])
        with pytest.raises(DegeneratePair):
            drift_offset(p, p, p + 1e-13)

    def test_compensation_negation_example(self):
        out = compensation_velocity(np.array([1.0, 0.0]), np.zeros(2), np.ones(2))
        np.testing.assert_allclose(out, [-0.5, 0.5], atol=1e-15)

    def test_orthogonality_1000_triples(self):
        src = RandomSource(13)
        worst = 0.0
        for _ in range(1000):
            z, x1, t = src.normal((3,)), src.normal((3,)), src.uniform((3,))
            x_t = interpolate(z, x1, t)
            v = compensation_velocity(x_t, z, x1)
            worst = max(worst, abs(float(np.dot(v, x1 - z))))
        assert worst < 1e-12


class TestConeVelocity:
    def test_synchronized_special_case(self):
        src = RandomSource(21)
        for _ in range(50):
            z, x1 = src.normal((4,)), src.normal((4,))
            s = float(src.uniform())
            x_t0 = interpolate(z, x1, np.full(4, s))
            np.testing.assert_allclose(cone_velocity(x_t0, x1, np.full(4, s)),
                                       x1 - z, atol=1e-12)

    def test_hand_example(self):
        out = cone_velocity(np.array([1.0, 0.0]), np.ones(2), np.array([1.0, 0.0]))
        np.testing.assert_allclose(out, [0.0, 1.0])

    def test_scheduler_at_one(self):
        with pytest.raises(SchedulerAtOne):
            cone_velocity(np.ones(2), np.ones(2), np.ones(2))


class TestRegressionTarget:
    def test_data_kind(self):
        x1 = np.array([1.0, 2.0])
        assert np.array_equal(
            regression_target("data", np.zeros(2), x1, x1), x1)

    def test_velocity_on_diagonal_compensation_vanishes(self):
        z, x1 = np.zeros(2), np.ones(2)
        x_t = interpolate(z, x1, np.full(2, 0.4))
        np.testing.assert_allclose(
            regression_target("velocity", z, x1, x_t, compensate=True),
            x1 - z, atol=1e-14)

    def test_velocity_off_diagonal_example(self):
        out = regression_target("velocity", np.zeros(2), np.ones(2),
                                np.array([1.0, 0.0]), compensate=True)
        np.testing.assert_allclose(out, [0.5, 1.5], atol=1e-15)


def test_constant_velocity_drift_invariant():
    # Euler-integrating x1 - z for duration 1 - min(t0) lands exactly at
    # x1 + (t0 - min t0) * (x1 - z), for any step count
    src = RandomSource(31)
    for _ in range(20):
        z, x1, t0 = src.normal((3,)), src.normal((3,)), src.uniform((3,))
        x = interpolate(z, x1, t0)
        K = 64
        dt = (1.0 - float(t0.min())) / K
        for _ in range(K):
            x = x + dt * (x1 - z)
        expected = x1 + (t0 - t0.min()) * (x1 - z)
        np.testing.assert_allclose(x, expected, atol=1e-12)


class TestMakeBatch:
    def test_batch_validates(self):
        src = RandomSource(17)
        cfg = UnsyncConfig("all", GRID, mix_fraction=0.25)
        z = src.normal((10,) + GRID.record_shape)
        x1 = src.normal((10,) + GRID.record_shape)
        batch = make_batch(cfg, z, x1, np.zeros(10, dtype=int),
                           "velocity", True, src)
        batch.validate()
        assert batch.target.shape == batch.x_t.shape

    def test_degenerate_pairs_dropped(self):
        src = RandomSource(18)
        cfg = UnsyncConfig("none", GRID)
        z = src.normal((4,) + GRID.record_shape)
        x1 = z.copy()
        x1[0] += 1.0  # only record 0 is non-degenerate
        batch = make_batch(cfg, z, x1, np.zeros(4, dtype=int),
                           "velocity", True, src)
        assert batch.z.shape[0] == 1
