import numpy as np
import pytest

from raincascade.derainnet import init_model, zero_model
from raincascade.rainmodel import RainConfig, make_scene, synthesize
from raincascade.tensorcore import ContractViolation, Tensor, backward
from raincascade.trainer import OptimizerState, TrainConfig, adam_step, augment_pair, batch_loss, train

from conftest import TINY_NOISE, TINY_RAIN


def tiny_dataset(n=4, size=16):
    pairs = []
    for i in range(n):
        x = make_scene(size, size, np.random.default_rng(i))
        p = synthesize(x, RainConfig(seed=i, streak_count=6))
        pairs.append((p.y, p.x))
    return pairs


class TestBatchLoss:
    def test_zero_when_output_matches(self, rng):
        y = Tensor(rng.random((2, 3, 8, 8)).astype(np.float32))
        assert batch_loss(zero_model(TINY_RAIN, TINY_NOISE), y, y).item() == 0.0

    def test_constant_offset(self, rng):
        x = rng.random((2, 3, 8, 8))
        loss = batch_loss(zero_model(TINY_RAIN, TINY_NOISE, dtype=np.float64), Tensor(x + 0.1), Tensor(x))
        assert loss.item() == pytest.approx(0.01, rel=1e-9)

    def test_shape_mismatch(self):
        with pytest.raises(ContractViolation):
            batch_loss(zero_model(), Tensor(np.zeros((1, 3, 8, 8), np.float32)), Tensor(np.zeros((2, 3, 8, 8), np.float32)))

    def test_every_parameter_receives_gradient(self, rng):
        model = init_model(TINY_RAIN, TINY_NOISE, seed=0)
        for p in model.parameters():
            p.data += 0.01 * rng.standard_normal(p.shape).astype(np.float32)
        y = Tensor(rng.random((2, 3, 8, 8)).astype(np.float32))
        x = Tensor(rng.random((2, 3, 8, 8)).astype(np.float32))
        backward(batch_loss(model, y, x))
        for name, p in model.named_parameters():
            assert p.grad is not None and np.any(p.grad != 0), name


class TestAdam:
    def test_zero_gradients_from_fresh_state_leave_parameters(self):
        p = Tensor(np.ones((1, 1, 2, 2), dtype=np.float32), requires_grad=True)
        state = OptimizerState.for_params([p])
        p.grad = np.zeros_like(p.data)
        adam_step([p], state, TrainConfig())
        np.testing.assert_array_equal(p.data, 1.0)
        assert p.grad is None and state.step == 1

    def test_zero_gradients_decay_moments(self):
        p = Tensor(np.ones((1, 1, 2, 2), dtype=np.float32), requires_grad=True)
        state = OptimizerState.for_params([p])
        state.first_moment[0][...] = 0.5
        state.second_moment[0][...] = 0.5
        p.grad = np.zeros_like(p.data)
        adam_step([p], state, TrainConfig())
        np.testing.assert_allclose(state.first_moment[0], 0.45)
        np.testing.assert_allclose(state.second_moment[0], 0.4995)
        assert np.all(p.data < 1.0)

    def test_first_step_magnitude(self):
        # bias-corrected m = g, v = g^2  ->  step = lr * g / (|g| + eps)
        p = Tensor(np.zeros((1, 1, 1, 1)), requires_grad=True)
        p.grad = np.ones_like(p.data)
        cfg = TrainConfig(learning_rate=1e-3)
        adam_step([p], OptimizerState.for_params([p]), cfg)
        assert p.data.item() == pytest.approx(-1e-3 / (1 + 1e-8), rel=1e-12)

    def test_missing_gradient(self):
        p = Tensor(np.zeros((1, 1, 1, 1)), requires_grad=True)
        with pytest.raises(ContractViolation):
            adam_step([p], OptimizerState.for_params([p]), TrainConfig())

    @pytest.mark.parametrize("seed", range(5))
    def test_single_small_step_does_not_increase_loss(self, seed):
        r = np.random.default_rng(seed)
        model = init_model(TINY_RAIN, TINY_NOISE, seed=seed)
        y = Tensor(r.random((2, 3, 8, 8)).astype(np.float32))
        x = Tensor(np.clip(y.data - 0.1 * r.random(y.shape).astype(np.float32), 0, 1))
        before = batch_loss(model, y, x)
        backward(before)
        adam_step(model.parameters(), OptimizerState.for_params(model.parameters()), TrainConfig(learning_rate=1e-4))
        assert batch_loss(model, y, x).item() <= before.item()


class TestAugment:
    def test_disabled_is_identity(self, rng):
        y, x = rng.random((3, 8, 8)), rng.random((3, 8, 8))
        ya, xa = augment_pair(y, x, rng, 4, enabled=False)
        assert ya is y and xa is x

    def test_flip_twice_restores(self, rng):
        y, x = rng.random((3, 8, 8)), rng.random((3, 8, 8))
        once = augment_pair(y, x, rng, 8, flip=True)
        twice = augment_pair(*once, rng, 8, flip=True)
        np.testing.assert_array_equal(twice[0], y)
        np.testing.assert_array_equal(twice[1], x)

    def test_pair_stays_aligned(self, rng):
        y, x = rng.random((3, 12, 12)), rng.random((3, 12, 12))
        diff = y - x
        for _ in range(20):
            ya, xa = augment_pair(y, x, rng, 6)
            found = False
            for flipped in (diff, diff[..., ::-1]):
                for top in range(7):
                    for left in range(7):
                        if np.array_equal(ya - xa, flipped[:, top:top + 6, left:left + 6]):
                            found = True
            assert found

    def test_too_small(self, rng):
        with pytest.raises(ContractViolation):
            augment_pair(rng.random((3, 4, 4)), rng.random((3, 4, 4)), rng, 8)


class TestTrain:
    def test_zero_epochs_returns_unchanged(self):
        model = init_model(TINY_RAIN, TINY_NOISE, seed=0)
        before = [p.data.copy() for p in model.parameters()]
        _, history = train(tiny_dataset(2), model, TrainConfig(epochs=0, patch_size=16))
        assert len(history) == 0
        for a, p in zip(before, model.parameters()):
            np.testing.assert_array_equal(a, p.data)

    def test_deterministic(self):
        data = tiny_dataset(3)
        cfg = TrainConfig(epochs=3, batch_size=2, patch_size=8, seed=5)
        a, ha = train(data, init_model(TINY_RAIN, TINY_NOISE, seed=1), cfg)
        b, hb = train(data, init_model(TINY_RAIN, TINY_NOISE, seed=1), cfg)
        assert ha.epoch_losses == hb.epoch_losses
        for p, q in zip(a.parameters(), b.parameters()):
            assert p.data.tobytes() == q.data.tobytes()

    def test_loss_decreases_and_nonnegative(self):
        _, history = train(tiny_dataset(4), init_model(TINY_RAIN, TINY_NOISE, seed=0),
                           TrainConfig(epochs=30, batch_size=2, patch_size=16))
        assert len(history) == 30
        assert min(history.epoch_losses) >= 0
        assert history.epoch_losses[-1] < history.epoch_losses[0]

    def test_patch_divisibility_checked(self):
        with pytest.raises(ContractViolation, match="divisible"):
            train(tiny_dataset(1), init_model(TINY_RAIN, TINY_NOISE), TrainConfig(patch_size=7))

    def test_empty_dataset(self):
        with pytest.raises(ContractViolation):
            train([], init_model(TINY_RAIN, TINY_NOISE), TrainConfig())

    def test_truncated_final_batch(self):
        calls = []
        train(tiny_dataset(3), init_model(TINY_RAIN, TINY_NOISE), TrainConfig(epochs=1, batch_size=2, patch_size=16),
              on_epoch=lambda e, loss, m: calls.append(e))
        assert calls == [1]
