import numpy as np
import pytest

from combostoc.errors import ShapeMismatch
from combostoc.interpolant import GridLayout, StructuredLayout, UnsyncConfig, make_batch
from combostoc.regressor import (EmbedSpec, ModelParams, embed_timesteps,
                                 finite_diff_check, forward,
                                 frequency_features, init_params,
                                 load_checkpoint, loss_and_grad,
                                 save_checkpoint)
from combostoc.tensor_core import RandomSource

GRID = GridLayout(channels=2)
STRUCT = StructuredLayout(parts=4, seg_widths=(1, 2, 3))
SMALL = EmbedSpec(n_freq=3, compressed_dim=2)


def small_grid_model(seed=0, kind="velocity"):
    return init_params(GRID, RandomSource(seed), SMALL, hidden=(6, 5, 4),
                       prediction_kind=kind)


def small_batch(params, seed=1, mode="all"):
    src = RandomSource(seed)
    layout = params.layout
    cfg = UnsyncConfig(mode, layout)
    z = src.normal((5,) + layout.record_shape)
    x1 = src.normal((5,) + layout.record_shape)
    return make_batch(cfg, z, x1, np.zeros(5, dtype=int),
                      params.prediction_kind, True, src)


class TestEmbedding:
    def test_zero_timestep_features(self):
        f = frequency_features(np.zeros((1,)), SMALL)
        assert np.all(f[0, :3] == 0.0)  # sines
        assert np.all(f[0, 3:] == 1.0)  # cosines

    def test_equal_scalars_equal_rows(self):
        f = frequency_features(np.array([0.37, 0.37]), EmbedSpec())
        assert np.array_equal(f[0], f[1])

    def test_default_compressed_width(self):
        assert EmbedSpec().compressed_dim == 4

    def test_learned_map_shape(self):
        p = small_grid_model()
        out = embed_timesteps(np.zeros((3, 2)), SMALL, p)
        assert out.shape == (3, 2, 2)

    def test_injective_on_lattice(self):
        t = np.arange(1024) / 1024.0  # features are 1-periodic, so [0,1)
        f = frequency_features(t, EmbedSpec())
        assert len(np.unique(f.round(12), axis=0)) == len(t)


class TestForward:
    def test_zero_final_layer_zero_output(self):
        p = small_grid_model()
        x = RandomSource(2).normal((4,) + GRID.record_shape)
        t = RandomSource(3).uniform((4, 1, 1, 1))
        assert np.all(forward(p, x, t) == 0.0)

    def test_deterministic(self):
        p = small_grid_model()
        p.view("W4")[...] = RandomSource(4).normal(p.view("W4").shape)
        x = RandomSource(5).normal((3,) + GRID.record_shape)
        t = RandomSource(6).uniform((3, 2, 1, 1))
        assert np.array_equal(forward(p, x, t), forward(p, x, t))

    def test_shape_mismatch(self):
        p = small_grid_model()
        with pytest.raises(ShapeMismatch):
            forward(p, np.zeros((3, 5, 1, 1)), np.zeros((3, 1, 1, 1)))

    def test_permutation_equivariance(self):
        p = init_params(STRUCT, RandomSource(7), SMALL, hidden=(6, 5, 4),
                        prediction_kind="data")
        p.view("W4")[...] = RandomSource(8).normal(p.view("W4").shape)
        x = RandomSource(9).normal((2,) + STRUCT.record_shape)
        t = RandomSource(10).uniform((2, 4, 1))
        perm = np.array([2, 0, 3, 1])
        out = forward(p, x, t)
        out_perm = forward(p, x[:, perm], t[:, perm])
        np.testing.assert_allclose(out_perm, out[:, perm], atol=1e-13)


class TestGradients:
    def test_zero_loss_zero_grad(self):
        p = small_grid_model()
        batch = small_batch(p)
        batch.target = np.zeros_like(batch.target)  # matches zero output
        loss, grad = loss_and_grad(p, batch)
        assert loss == 0.0
        assert np.all(grad == 0.0)

    def test_one_layer_analytic(self):
        # with all weights zero except b4, output = b4 and
        # d(loss)/d(b4) = 2 * mean(b4 - target) per output entry
        p = small_grid_model()
        p.view("b4")[...] = np.array([0.7, -0.2])
        batch = small_batch(p)
        loss, grad = loss_and_grad(p, batch)
        n = batch.target.shape[0]
        diff = p.view("b4") - batch.target.reshape(n, 2)
        assert abs(loss - np.mean(diff ** 2)) < 1e-14
        np.testing.assert_allclose(p.views_of(grad, "b4"),
                                   (2.0 / diff.size) * diff.sum(axis=0),
                                   atol=1e-14)

    def test_finite_diff_grid(self):
        p = small_grid_model(seed=11)
        assert finite_diff_check(p, small_batch(p, seed=12)) < 1e-4

    def test_finite_diff_structured(self):
        p = init_params(STRUCT, RandomSource(13), SMALL, hidden=(6, 5, 4),
                        prediction_kind="data")
        src = RandomSource(14)
        cfg = UnsyncConfig("att_part", STRUCT)
        z = src.normal((4,) + STRUCT.record_shape)
        x1 = src.normal((4,) + STRUCT.record_shape)
        batch = make_batch(cfg, z, x1, np.zeros(4, dtype=int), "data", False, src)
        assert finite_diff_check(p, batch) < 1e-4

    def test_h_out_of_range(self):
        p = small_grid_model()
        with pytest.raises(ValueError):
            finite_diff_check(p, small_batch(p), h=1e-1)


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        p = init_params(GRID, RandomSource(20), SMALL, hidden=(6, 5, 4))
        p.view("W4")[...] = RandomSource(21).normal(p.view("W4").shape)
        prefix = tmp_path / "ckpt"
        save_checkpoint(prefix, p, seed=20, step=7)
        q = load_checkpoint(prefix)
        assert np.array_equal(p.vector, q.vector)
        assert q.layout == GRID and q.hidden == (6, 5, 4)

    def test_structured_round_trip(self, tmp_path):
        p = init_params(STRUCT, RandomSource(22), SMALL, hidden=(6, 5, 4),
                        prediction_kind="data")
        prefix = tmp_path / "ckpt"
        save_checkpoint(prefix, p)
        q = load_checkpoint(prefix)
        assert q.layout == STRUCT
        assert q.prediction_kind == "data"
        assert np.array_equal(p.vector, q.vector)

    def test_size_mismatch_rejected(self, tmp_path):
        p = small_grid_model()
        prefix = tmp_path / "ckpt"
        save_checkpoint(prefix, p)
        with open(str(prefix) + ".csv", "a") as f:
            f.write("0.0\n")
        with pytest.raises(ValueError):
            load_checkpoint(prefix)
