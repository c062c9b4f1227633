import numpy as np
import pytest

from maxsquare import autodiff as ad
from maxsquare import losses
from maxsquare.errors import FormatError, ShapeError
from maxsquare.models import (
    MlpSpec,
    SegNetSpec,
    infer_spec,
    init_params,
    load_params,
    mlp_forward,
    save_params,
    seg_forward,
)


def zeroed(params):
    return {k: ad.parameter(np.zeros(v.shape)) for k, v in params.items()}


class TestSpecs:
    def test_mlp_requires_hidden_layer(self):
        with pytest.raises(ShapeError):
            MlpSpec(2, (), 3)

    def test_positive_dims(self):
        with pytest.raises(ShapeError):
            MlpSpec(0, (4,), 3)

    def test_tap_depth_bounds(self):
        with pytest.raises(ShapeError):
            SegNetSpec(3, 4, 2, 3, tap_depth=2)
        with pytest.raises(ShapeError):
            SegNetSpec(3, 4, 2, 3, tap_depth=0)
        SegNetSpec(3, 4, 2, 3, tap_depth=1)  # valid


class TestInit:
    def test_same_seed_identical(self):
        spec = SegNetSpec(3, 4, 3, 3, 1)
        a, b = init_params(spec, seed=9), init_params(spec, seed=9)
        assert all(np.array_equal(a[k].array, b[k].array) for k in a)

    def test_different_seeds_differ(self):
        spec = MlpSpec(2, (8,), 3)
        a, b = init_params(spec, seed=0), init_params(spec, seed=1)
        assert any(not np.array_equal(a[k].array, b[k].array) for k in a)

    def test_biases_zero_and_weights_bounded(self):
        spec = MlpSpec(4, (8, 8), 3)
        params = init_params(spec, seed=2)
        for name, t in params.items():
            if name.startswith("b"):
                assert not t.array.any()
            else:
                fan_in = t.shape[0]
                assert np.abs(t.array).max() <= np.sqrt(1.0 / fan_in)


class TestMlpForward:
    def test_zero_weights_uniform(self):
        spec = MlpSpec(2, (4,), 3)
        probs = mlp_forward(spec, zeroed(init_params(spec)), [[1.0, -5.0]])
        np.testing.assert_allclose(probs.array, np.full((1, 3), 1 / 3), atol=1e-15)

    def test_empty_batch(self):
        spec = MlpSpec(2, (4,), 3)
        probs = mlp_forward(spec, init_params(spec), np.zeros((0, 2)))
        assert probs.shape == (0, 3)

    def test_deterministic(self):
        spec = MlpSpec(2, (4,), 3, init_seed=5)
        x = np.random.default_rng(0).normal(size=(6, 2))
        a = mlp_forward(spec, init_params(spec), x).array
        b = mlp_forward(spec, init_params(spec), x).array
        assert np.array_equal(a, b)

    def test_input_width_checked(self):
        spec = MlpSpec(2, (4,), 3)
        with pytest.raises(ShapeError):
            mlp_forward(spec, init_params(spec), np.zeros((1, 3)))


class TestSegForward:
    SPEC = SegNetSpec(in_channels=3, trunk_channels=4, trunk_depth=3,
                      num_classes=3, tap_depth=1, init_seed=1)

    def test_zero_weights_uniform_both_heads(self):
        x = np.random.default_rng(0).normal(size=(1, 3, 5, 5))
        m = seg_forward(self.SPEC, zeroed(init_params(self.SPEC)), x)
        np.testing.assert_allclose(m.final.array, 1 / 3, atol=1e-15)
        np.testing.assert_allclose(m.low.array, 1 / 3, atol=1e-15)

    def test_row_stochastic_at_input_resolution(self):
        x = np.random.default_rng(1).normal(size=(2, 3, 6, 7))
        m = seg_forward(self.SPEC, init_params(self.SPEC), x)
        assert m.final.shape == (2 * 6 * 7, 3)
        assert np.abs(m.final.array.sum(axis=1) - 1.0).max() <= 1e-12
        assert np.abs(m.low.array.sum(axis=1) - 1.0).max() <= 1e-12

    def test_deterministic(self):
        x = np.random.default_rng(2).normal(size=(1, 3, 4, 4))
        a = seg_forward(self.SPEC, init_params(self.SPEC), x)
        b = seg_forward(self.SPEC, init_params(self.SPEC), x)
        assert np.array_equal(a.final.array, b.final.array)
        assert np.array_equal(a.low.array, b.low.array)

    def test_spatial_minimum(self):
        with pytest.raises(ShapeError):
            seg_forward(self.SPEC, init_params(self.SPEC), np.zeros((1, 3, 2, 5)))

    def test_end_to_end_gradients_match_finite_differences(self):
        spec = SegNetSpec(2, 3, 2, 3, 1, init_seed=3)
        params = init_params(spec)
        x = np.random.default_rng(3).normal(size=(1, 2, 4, 4))

        def fn(p):
            m = seg_forward(spec, p, x)
            return ad.add(
                losses.max_squares_graph(m.final),
                losses.cross_entropy_graph(
                    m.low, np.tile([0, 1, 2, 0], 4)
                ),
            )

        assert ad.finite_diff_check(fn, params) <= 1e-6


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        spec = SegNetSpec(3, 4, 3, 3, 1)
        params = init_params(spec, seed=4)
        path = tmp_path / "model.msqp"
        save_params(params, path)
        loaded = load_params(path)
        assert list(loaded) == list(params)
        assert all(np.array_equal(params[k].array, loaded[k].array) for k in params)

    def test_byte_deterministic(self, tmp_path):
        params = init_params(MlpSpec(2, (4,), 3), seed=6)
        a, b = tmp_path / "a.msqp", tmp_path / "b.msqp"
        save_params(params, a)
        save_params(params, b)
        assert a.read_bytes() == b.read_bytes()

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.msqp"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(FormatError) as err:
            load_params(path)
        assert err.value.offset == 0

    def test_truncation_rejected_with_offset(self, tmp_path):
        params = init_params(MlpSpec(2, (4,), 3), seed=7)
        path = tmp_path / "trunc.msqp"
        save_params(params, path)
        data = path.read_bytes()
        path.write_bytes(data[: len(data) // 2])
        with pytest.raises(FormatError) as err:
            load_params(path)
        assert err.value.offset is not None

    def test_infer_spec_roundtrip(self, tmp_path):
        mlp = MlpSpec(5, (8, 4), 3)
        path = tmp_path / "mlp.msqp"
        save_params(init_params(mlp, seed=8), path)
        got = infer_spec(load_params(path))
        assert (got.input_dim, got.hidden_dims, got.num_classes) == (5, (8, 4), 3)

        seg = SegNetSpec(3, 6, 4, 5, 2)
        save_params(init_params(seg, seed=9), path)
        got = infer_spec(load_params(path))
        assert (got.in_channels, got.trunk_channels, got.trunk_depth,
                got.num_classes) == (3, 6, 4, 5)
