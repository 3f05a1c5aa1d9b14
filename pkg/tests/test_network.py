# tests/test_network.py
"""Forward/backward passes, SGD and learning rate schedules"""

import numpy as np
import pytest

from lab.errors import ConfigError, ShapeMismatch
from lab.network import (
    LRSchedule, MLPSpec, Mode, ModelState, ScheduleKind, TaskData,
    evaluate, fit, forward, gradients, init_state, loss_and_grad, lr_at, predict, sgd_epoch,
)
from lab.neuron_theory import NeuronParams, loss_gradient, objective, synthesize_dataset
from lab.numerics import RngState
from lab.pruning import Mask


def _loss(state, mask, data):
    result = forward(state, mask, data.inputs, Mode.TRAIN)
    loss, _ = loss_and_grad(result.outputs, data.targets, data.is_classification)
    return loss


class TestSpec:

    def test_shapes(self):
        spec = MLPSpec(layer_widths=(4, 5, 3))
        assert spec.weight_shapes() == [(4, 5), (5, 3)]
        assert spec.use_batchnorm == (False,)
        assert not spec.has_batchnorm

    def test_wrong_number_of_bn_flags(self):
        with pytest.raises(ConfigError):
            MLPSpec(layer_widths=(4, 5, 3), use_batchnorm=(True, True))

    def test_state_checks_shapes(self, small_state):
        with pytest.raises(ShapeMismatch):
            ModelState(spec=small_state.spec, weights=small_state.weights[:-1], biases=small_state.biases)


class TestInit:

    def test_kaiming_scale(self):
        spec = MLPSpec(layer_widths=(400, 300, 2))
        state = init_state(spec, RngState(0))
        assert abs(state.weights[0].std() - np.sqrt(2 / 400)) < 0.005

    def test_deterministic(self, small_spec):
        a = init_state(small_spec, RngState(5))
        b = init_state(small_spec, RngState(5))
        for x, y in zip(a.weights, b.weights):
            np.testing.assert_array_equal(x, y)

    def test_checkpoint_arrays_round_trip(self, small_state):
        small_state.velocity['weight.0'] = np.ones_like(small_state.weights[0])
        restored = ModelState.from_arrays(small_state.spec, small_state.to_arrays())
        for name, value in small_state.to_arrays().items():
            np.testing.assert_array_equal(restored.to_arrays()[name], value)


class TestForward:

    def test_output_shape(self, small_state, small_task):
        outputs = predict(small_state, None, small_task.test.inputs)
        assert outputs.shape == (small_task.test.n, 3)

    def test_pure_in_train_mode(self, small_state, small_task):
        before = small_state.to_arrays()
        forward(small_state, None, small_task.train.inputs, Mode.TRAIN)
        for name, value in small_state.to_arrays().items():
            np.testing.assert_array_equal(value, before[name])

    def test_masked_weights_are_ignored(self, small_state, small_task):
        mask = Mask.dense(small_state.spec)
        mask.tensors[0][0, :] = False
        changed = small_state.copy()
        changed.weights[0][0, :] = 123.0
        a = forward(small_state, mask, small_task.test.inputs).outputs
        b = forward(changed, mask, small_task.test.inputs).outputs
        np.testing.assert_array_equal(a, b)

    def test_all_ones_mask_is_the_identity(self, small_state, small_task):
        dense = forward(small_state, Mask.dense(small_state.spec), small_task.test.inputs).outputs
        unmasked = forward(small_state, None, small_task.test.inputs).outputs
        np.testing.assert_array_equal(dense, unmasked)

    def test_all_zero_mask_without_bias_gives_zero_logits(self, small_task):
        spec = MLPSpec(layer_widths=(6, 8, 8, 3), use_bias=False)
        state = init_state(spec, RngState(2))
        empty = Mask([np.zeros(shape, dtype=bool) for shape in spec.weight_shapes()])
        outputs = forward(state, empty, small_task.test.inputs).outputs
        np.testing.assert_array_equal(outputs, np.zeros((small_task.test.n, 3)))

    def test_wrong_input_width(self, small_state):
        with pytest.raises(ShapeMismatch):
            forward(small_state, None, np.zeros((2, 5)))

    def test_cross_entropy_of_uniform_logits(self):
        loss, grad = loss_and_grad(np.zeros((4, 5)), np.array([0, 1, 2, 3]), True)
        assert loss == pytest.approx(np.log(5))
        np.testing.assert_allclose(grad.sum(axis=1), 0.0, atol=1e-15)


class TestBackward:

    @pytest.mark.parametrize('use_bn', [True, False])
    def test_matches_finite_differences(self, use_bn):
        spec = MLPSpec(layer_widths=(16, 32, 32, 4), use_batchnorm=(use_bn, use_bn))
        state = init_state(spec, RngState(1))
        generator = RngState(2).generator()
        data = TaskData(generator.standard_normal((24, 16)), generator.integers(0, 4, 24), 'train', 4)
        mask = Mask.dense(spec)
        _, grads = gradients(state, mask, data, Mode.TRAIN)

        h = 1e-6
        params = state.parameters()
        names = list(params)
        for probe in range(100):
            name = names[generator.integers(len(names))]
            index = tuple(generator.integers(s) for s in params[name].shape)
            original = params[name][index]
            params[name][index] = original + h
            up = _loss(state, mask, data)
            params[name][index] = original - h
            down = _loss(state, mask, data)
            params[name][index] = original
            numeric = (up - down) / (2 * h)
            analytic = grads[name][index]
            assert abs(analytic - numeric) <= 1e-4 * max(1.0, abs(numeric)), (name, index)

    def test_masked_gradients_are_zero(self, small_state, small_task):
        mask = Mask.dense(small_state.spec)
        mask.tensors[1][:, 0] = False
        _, grads = gradients(small_state, mask, small_task.train)
        assert np.all(grads['weight.1'][:, 0] == 0)


class TestTraining:

    def test_sgd_keeps_pruned_weights_at_zero(self, small_state, small_task):
        mask = Mask.dense(small_state.spec)
        mask.tensors[0][:3, :] = False
        state, loss = sgd_epoch(small_state, mask, small_task.train, 0.05, 0.9, 1e-4, 16, RngState(0))
        assert np.isfinite(loss)
        assert np.all(state.weights[0][:3, :] == 0)
        assert np.all(state.velocity['weight.0'][:3, :] == 0)

    def test_pruned_weights_stay_zero_for_100_epochs(self, small_state, small_task):
        mask = Mask.dense(small_state.spec)
        mask.tensors[0][:3, :] = False
        mask.tensors[2][:, 1] = False
        schedule = LRSchedule(base_lr=0.05, warmup_epochs=2, total_epochs=100)
        state, _ = fit(small_state, mask, small_task.train, schedule, 0.9, 1e-3, 16, RngState(5))
        for i, m in enumerate(mask.tensors):
            assert np.all(state.weights[i][~m] == 0)
            assert np.all(state.velocity[f'weight.{i}'][~m] == 0)
        assert np.all(state.weights[0][3:, :] != 0)

    def test_running_stats_settle_on_fixed_data(self, small_state, small_task):
        data = small_task.train
        state, previous = small_state, None
        for epoch in range(100):
            # full batches with a negligible step leave the weights in place
            state, _ = sgd_epoch(state, None, data, 1e-9, 0.0, 0.0, data.n, RngState(epoch))
            outputs = forward(state, None, data.inputs, Mode.EVAL).outputs
            if previous is not None and epoch >= 60:
                assert np.max(np.abs(outputs - previous)) <= 1e-3
            previous = outputs
        batch_outputs = forward(state, None, data.inputs, Mode.TRAIN).outputs
        np.testing.assert_allclose(previous, batch_outputs, atol=1e-3)

    def test_sgd_returns_a_copy(self, small_state, small_task):
        before = small_state.weights[0].copy()
        sgd_epoch(small_state, None, small_task.train, 0.05, 0.9, 0.0, 16, RngState(0))
        np.testing.assert_array_equal(small_state.weights[0], before)

    def test_running_stats_move(self, small_state, small_task):
        state, _ = sgd_epoch(small_state, None, small_task.train, 0.05, 0.9, 0.0, 16, RngState(0))
        assert not np.allclose(state.bn_running_mean[0], 0.0)

    def test_batch_of_one_is_skipped_with_bn(self, small_state, small_task):
        data = small_task.train.subset(np.arange(17))
        state, loss = sgd_epoch(small_state, None, data, 0.05, 0.0, 0.0, 16, RngState(0))
        assert np.isfinite(loss)

    def test_learns_separable_blobs(self):
        generator = RngState(4).generator()
        labels = generator.integers(0, 2, 400)
        inputs = generator.standard_normal((400, 2)) * 0.3 + np.where(labels[:, None] == 1, 2.0, -2.0)
        data = TaskData(inputs, labels, 'train', 2)
        spec = MLPSpec(layer_widths=(2, 16, 2))
        schedule = LRSchedule(ScheduleKind.CONSTANT, base_lr=0.05, warmup_epochs=0, total_epochs=50)
        state, _ = fit(init_state(spec, RngState(0)), None, data, schedule, 0.9, 0.0, 32, RngState(1))
        _, accuracy = evaluate(state, None, data)
        assert accuracy >= 0.99

    def test_fit_is_reproducible(self, small_state, small_task):
        schedule = LRSchedule(base_lr=0.05, warmup_epochs=1, total_epochs=3)
        a, _ = fit(small_state, None, small_task.train, schedule, 0.9, 1e-4, 16, RngState(3))
        b, _ = fit(small_state, None, small_task.train, schedule, 0.9, 1e-4, 16, RngState(3))
        for x, y in zip(a.weights, b.weights):
            np.testing.assert_array_equal(x, y)


class TestSchedules:

    def test_warmup_ramp(self):
        schedule = LRSchedule(base_lr=0.1, warmup_epochs=4, total_epochs=20)
        assert lr_at(schedule, 0) == pytest.approx(0.1 * 0.5 / 4)
        assert lr_at(schedule, 2) == pytest.approx(0.05)
        assert lr_at(schedule, 4) == pytest.approx(0.1)

    def test_cosine_decays_but_stays_positive(self):
        schedule = LRSchedule(base_lr=0.1, warmup_epochs=2, total_epochs=12)
        rates = [lr_at(schedule, e) for e in range(2, 12)]
        assert all(a > b for a, b in zip(rates, rates[1:]))
        assert rates[-1] > 0

    def test_step_schedule(self):
        schedule = LRSchedule(ScheduleKind.STEP_WARMUP, base_lr=0.1, warmup_epochs=1,
                              total_epochs=10, step_milestones=(4, 8), step_factor=0.1)
        assert lr_at(schedule, 3) == pytest.approx(0.1)
        assert lr_at(schedule, 5) == pytest.approx(0.01)
        assert lr_at(schedule, 9) == pytest.approx(0.001)

    def test_epoch_out_of_range(self):
        with pytest.raises(ValueError):
            lr_at(LRSchedule(total_epochs=5, warmup_epochs=1), 5)

    def test_invalid_warmup(self):
        with pytest.raises(ConfigError):
            LRSchedule(warmup_epochs=10, total_epochs=10)


class TestSingleNeuronNetwork:
    """A [d, 1, 1] network without bias or batch norm is the single hidden neuron"""

    D = 7

    @pytest.fixture
    def neuron_and_network(self):
        data = synthesize_dataset(300, self.D, 0.1, RngState(11))
        params = NeuronParams(a=-0.8, w=RngState(12).generator().standard_normal(self.D))
        state = init_state(MLPSpec(layer_widths=(self.D, 1, 1), use_bias=False), RngState(0))
        state.weights = [params.w.reshape(-1, 1).copy(), np.array([[params.a]])]
        return data, params, state

    def test_forward(self, neuron_and_network):
        data, params, state = neuron_and_network
        expected = params.a * np.maximum(data.X @ params.w, 0.0)
        outputs = forward(state, None, data.X, Mode.EVAL).outputs
        np.testing.assert_allclose(outputs[:, 0], expected, rtol=0, atol=1e-12)

    def test_loss_and_gradients(self, neuron_and_network):
        data, params, state = neuron_and_network
        loss, grads = gradients(state, None, TaskData(data.X, data.y), Mode.EVAL)
        expected = loss_gradient(params, data)
        assert loss == pytest.approx(objective(params, data), rel=1e-12)
        np.testing.assert_allclose(grads['weight.0'][:, 0], expected.w, rtol=1e-10, atol=1e-14)
        assert grads['weight.1'][0, 0] == pytest.approx(expected.a, rel=1e-10)
