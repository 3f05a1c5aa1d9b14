# tests/test_numerics.py
"""Seeded sampling, dense-matrix validation and the RK4 integrator"""

import math

import numpy as np
import pytest

from lab.errors import NonFiniteState, ShapeMismatch
from lab.numerics import RngState, as_dense, integrate_ode, sample_gaussian_inputs, time_grid


class TestRngState:

    def test_same_seed_same_draws(self):
        a = RngState(11).generator().standard_normal(5)
        b = RngState(11).generator().standard_normal(5)
        np.testing.assert_array_equal(a, b)

    def test_derived_streams_differ(self):
        root = RngState(11)
        a = root.derive(0).generator().standard_normal(5)
        b = root.derive(1).generator().standard_normal(5)
        assert not np.array_equal(a, b)

    def test_derive_is_deterministic(self):
        assert RngState(3).derive(2, 5) == RngState(3).derive(2, 5)
        assert RngState(3).derive(2, 5) != RngState(3).derive(5, 2)


class TestGaussianInputs:

    def test_column_variance_is_one_over_d(self):
        X = sample_gaussian_inputs(100_000, 4, RngState(0))
        variances = X.var(axis=0)
        assert np.all((variances > 0.2) & (variances < 0.3))

    def test_mean_near_zero(self):
        X = sample_gaussian_inputs(100_000, 1, RngState(1))
        assert abs(X.mean()) < 0.02

    def test_single_entry_is_reproducible(self):
        first = sample_gaussian_inputs(1, 1, RngState(42))
        second = sample_gaussian_inputs(1, 1, RngState(42))
        assert first.shape == (1, 1)
        np.testing.assert_array_equal(first, second)

    def test_rejects_empty_shapes(self):
        with pytest.raises(ValueError):
            sample_gaussian_inputs(0, 3, RngState(0))


class TestAsDense:

    def test_converts_lists(self):
        matrix = as_dense([[1, 2], [3, 4]])
        assert matrix.dtype == np.float64
        assert matrix.flags['C_CONTIGUOUS']

    def test_rejects_vectors(self):
        with pytest.raises(ShapeMismatch):
            as_dense([1.0, 2.0])

    def test_checks_expected_shape(self):
        with pytest.raises(ShapeMismatch):
            as_dense(np.zeros((2, 3)), cols=2)

    def test_rejects_nan(self):
        with pytest.raises(ValueError):
            as_dense([[np.nan]])


class TestIntegrateOde:

    def test_exponential_decay(self):
        trajectory = integrate_ode(lambda t, y: -y, [1.0], 1.0, 1e-3)
        assert abs(trajectory.final[0] - math.exp(-1.0)) < 1e-8

    def test_fourth_order_convergence(self):
        def error(step):
            return abs(integrate_ode(lambda t, y: -y, [1.0], 1.0, step).final[0] - math.exp(-1.0))

        errors = [error(step) for step in (0.1, 0.05, 0.025)]
        assert errors[0] / errors[1] >= 12
        assert errors[1] / errors[2] >= 12

    def test_fourth_order_convergence_on_a_cubic_flow(self):
        w0, C1, C2_tilde = 1.5, 0.7, 0.3

        def exact(t):
            u = np.exp(-2 * C2_tilde * t) / w0 ** 2 - C1 * np.expm1(-2 * C2_tilde * t) / C2_tilde
            return 1.0 / np.sqrt(u)

        def error(step):
            trajectory = integrate_ode(lambda t, y: -C1 * y ** 3 + C2_tilde * y, [w0], 2.0, step)
            return np.max(np.abs(trajectory.states[:, 0] - exact(trajectory.times)))

        assert error(0.02) / error(0.01) >= 12

    def test_grid_lands_on_t_end(self):
        times = time_grid(1.0, 0.3)
        assert times[-1] == 1.0
        assert np.all(np.diff(times) > 0)

    def test_records_every_grid_point(self):
        trajectory = integrate_ode(lambda t, y: np.zeros_like(y), [2.0, 3.0], 1.0, 0.25)
        assert len(trajectory) == 5
        np.testing.assert_array_equal(trajectory.states[-1], [2.0, 3.0])

    def test_blow_up_raises(self):
        with pytest.raises(NonFiniteState):
            integrate_ode(lambda t, y: y ** 2, [1.0], 10.0, 0.1)

    def test_non_positive_step_rejected(self):
        with pytest.raises(ValueError):
            integrate_ode(lambda t, y: -y, [1.0], 1.0, 0.0)
