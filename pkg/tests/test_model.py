import numpy as np
import pytest

from elastst.backbone import AttentionConfig
from elastst.errors import FormatError, ParameterError
from elastst.model import (
    CHECKPOINT_MAGIC,
    ElasTSTConfig,
    Forecast,
    ModelState,
    composite_loss,
    forward,
    forward_batch,
    load_model,
    read_checkpoint,
    write_checkpoint,
)
from elastst.numerics import Graph, Tensor, backward
from elastst.patching import Window
from elastst.trope import PeriodSpec


def small_config(sizes=(4, 8), instance_norm=True, lookback=16):
    return ElasTSTConfig(
        patch_sizes=sizes,
        period_spec=PeriodSpec(1.0, 1000.0, 8),
        attention=AttentionConfig(d_model=16, n_heads=2, head_dim=8, d_ff=24, n_layers=1),
        lookback=lookback,
        instance_norm=instance_norm,
    )


class TestConfig:
    def test_patch_sizes_validated(self):
        with pytest.raises(ParameterError):
            small_config(sizes=())
        with pytest.raises(ParameterError):
            small_config(sizes=(4, 4))
        with pytest.raises(ParameterError):
            small_config(sizes=(0, 4))

    def test_patch_sizes_sorted_ascending(self):
        assert small_config(sizes=(8, 4)).patch_sizes == (4, 8)


class TestForward:
    def test_single_size_assembled_equals_branch(self):
        state = ModelState.init(small_config(sizes=(4,)), seed=0)
        ctx = np.random.default_rng(0).standard_normal((2, 16))
        fc = forward_batch(state, ctx, 8)
        assert np.array_equal(fc.assembled.data, fc.per_size[0].data)

    def test_zero_decoders_forecast_the_context_mean(self):
        state = ModelState.init(small_config(), seed=0)
        for coder in state.coders.values():
            coder.dec_w2.data[:] = 0.0
            coder.dec_b2.data[:] = 0.0
        ctx = np.random.default_rng(1).standard_normal((3, 16))
        fc = forward_batch(state, ctx, 8)
        assert np.array_equal(fc.assembled.data, np.zeros((3, 8)))
        np.testing.assert_array_equal(fc.values, np.tile(fc.offset[:, None], (1, 8)))

    def test_forward_matches_forward_batch(self):
        state = ModelState.init(small_config(), seed=1)
        ctx = np.random.default_rng(2).standard_normal(16)
        single = forward(state, Window(ctx, 11)).values
        batched = forward_batch(state, ctx[None], 11).values
        assert np.array_equal(single, batched)

    def test_forward_is_deterministic(self):
        state = ModelState.init(small_config(), seed=2)
        ctx = np.random.default_rng(3).standard_normal((4, 16))
        assert np.array_equal(forward_batch(state, ctx, 9).values, forward_batch(state, ctx, 9).values)

    def test_horizon_extension_is_bitwise_invariant(self):
        state = ModelState.init(small_config(), seed=3)
        ctx = np.random.default_rng(4).standard_normal((4, 16))
        base = forward_batch(state, ctx, 8).values
        for horizon in (16, 24, 50):
            ext = forward_batch(state, ctx, horizon).values
            assert np.array_equal(ext[:, :8], base)

    def test_disabling_key_mask_breaks_invariance(self):
        state = ModelState.init(small_config(), seed=4)
        ctx = np.random.default_rng(5).standard_normal((4, 16))
        base = forward_batch(state, ctx, 8, use_key_mask=False).values
        ext = forward_batch(state, ctx, 40, use_key_mask=False).values
        assert np.max(np.abs(ext[:, :8] - base)) > 1e-6

    def test_constant_context_stays_finite(self):
        state = ModelState.init(small_config(), seed=5)
        fc = forward_batch(state, np.full((1, 16), 42.0), 8)
        assert np.all(np.isfinite(fc.values))

    def test_horizon_contract(self):
        state = ModelState.init(small_config(), seed=6)
        with pytest.raises(ParameterError):
            forward_batch(state, np.zeros((1, 16)), 0)


class TestCompositeLoss:
    def test_all_branches_equal_target_gives_zero(self):
        series = np.random.default_rng(6).standard_normal((2, 8))
        fc = Forecast(
            per_size=[Tensor(series.copy()), Tensor(series.copy())],
            assembled=Tensor(series.copy()),
            offset=np.zeros(2),
            denom=np.ones(2),
            values=series.copy(),
        )
        loss = composite_loss(fc, series, np.full(8, 1.0 / 8))
        assert loss.item() == 0.0

    def test_single_size_uniform_weights_equal_plain_mse(self):
        state = ModelState.init(small_config(sizes=(4,), instance_norm=False), seed=8)
        rng = np.random.default_rng(7)
        ctx = rng.standard_normal((3, 16))
        target = rng.standard_normal((3, 8))
        fc = forward_batch(state, ctx, 8)
        loss = composite_loss(fc, target, np.full(8, 1.0 / 8)).item()
        expected = np.mean(np.sum((fc.values - target) ** 2, axis=1) / 8) * 3  # per-window MSE, summed
        np.testing.assert_allclose(loss, expected, rtol=1e-12)

    def test_branch_average_arithmetic(self):
        # engineered branches with losses 2, 4 and assembled loss 1
        per = [Tensor(np.array([[1.0, 1.0]])), Tensor(np.array([[2.0, 0.0]]))]
        fc = Forecast(
            per_size=per,
            assembled=Tensor(np.array([[1.0, 0.0]])),
            offset=np.zeros(1),
            denom=np.ones(1),
            values=np.array([[1.0, 0.0]]),
        )
        loss = composite_loss(fc, np.array([[0.0, 0.0]]), np.array([[1.0, 1.0]]))
        assert loss.item() == pytest.approx((2.0 + 4.0 + 1.0) / 3.0, rel=1e-15)

    def test_loss_is_on_the_normalized_scale(self):
        state = ModelState.init(small_config(), seed=9)
        rng = np.random.default_rng(8)
        ctx = rng.standard_normal((2, 16))
        target = rng.standard_normal((2, 8))
        fc = forward_batch(state, ctx, 8)
        loss = composite_loss(fc, target, np.full(8, 1.0)).item()
        normalized_target = (target - fc.offset[:, None]) / fc.denom[:, None]
        manual = 0.0
        for series in fc.per_size + [fc.assembled]:
            manual += np.sum((series.data - normalized_target) ** 2)
        np.testing.assert_allclose(loss, manual / (len(fc.per_size) + 1), rtol=1e-12)

    def test_gradients_flow_to_every_parameter_group(self):
        state = ModelState.init(small_config(), seed=10)
        rng = np.random.default_rng(9)
        ctx = rng.standard_normal((2, 16))
        target = rng.standard_normal((2, 8))
        for _, p in state.parameters():
            p.grad = None
        with Graph():
            fc = forward_batch(state, ctx, 8)
            loss = composite_loss(fc, target, np.full(8, 1.0 / 8))
        backward(loss)
        for name, p in state.parameters():
            assert p.grad is not None, name


class TestCheckpoint:
    def test_round_trip_forward_is_bitwise(self, tmp_path):
        state = ModelState.init(small_config(), seed=11)
        path = tmp_path / "model.ckpt"
        write_checkpoint(path, state)
        loaded, _, _ = load_model(path)
        ctx = np.random.default_rng(10).standard_normal((3, 16))
        assert np.array_equal(
            forward_batch(state, ctx, 12).values, forward_batch(loaded, ctx, 12).values
        )

    def test_file_layout(self, tmp_path):
        state = ModelState.init(small_config(), seed=12)
        path = tmp_path / "model.ckpt"
        write_checkpoint(path, state, extra_echo={"epoch": "3"}, extra_arrays=[("opt.m.x", np.zeros(2))])
        raw = path.read_bytes()
        assert raw.startswith((CHECKPOINT_MAGIC + "\n").encode())
        echo, arrays, order = read_checkpoint(path)
        assert echo["epoch"] == "3"
        names = [n for n, _ in state.parameters()]
        assert order == names + ["opt.m.x"]  # model block first, extras after
        assert order[-2] == "trope.log_periods"  # periods close the model block
        for name, tensor in state.parameters():
            np.testing.assert_array_equal(arrays[name].reshape(tensor.data.shape), tensor.data)

    def test_vectors_serialize_as_single_rows(self, tmp_path):
        state = ModelState.init(small_config(), seed=13)
        path = tmp_path / "model.ckpt"
        write_checkpoint(path, state)
        _, arrays, _ = read_checkpoint(path)
        assert arrays["size4.enc.b1"].shape == (1, 16)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"not a checkpoint\n")
        with pytest.raises(FormatError):
            read_checkpoint(path)

    def test_missing_parameter_rejected(self, tmp_path):
        state = ModelState.init(small_config(), seed=14)
        path = tmp_path / "model.ckpt"
        write_checkpoint(path, state)
        echo, arrays, _ = read_checkpoint(path)
        del arrays["trope.log_periods"]
        from elastst.model import config_from_echo, state_from_arrays

        with pytest.raises(FormatError):
            state_from_arrays(config_from_echo(echo), arrays)

    def test_state_copy_is_independent(self):
        state = ModelState.init(small_config(), seed=15)
        clone = state.copy()
        clone.periods.log_periods.data += 1.0
        assert not np.array_equal(
            clone.periods.log_periods.data, state.periods.log_periods.data
        )
