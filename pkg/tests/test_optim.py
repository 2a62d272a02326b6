"""
Unit tests for learning-rate schedules and optimizer updates
"""

import math

import numpy as np
import pytest

from src.core import ConfigError
from src.core.module import Parameter
from src.training import (
    OptimizerKind,
    RecipeConfig,
    TrainState,
    adamw_cosine_step,
    cosine_lr,
    learning_rate,
    optimizer_step,
    poly_lr,
    sgd_poly_step,
)


class TestSchedules:
    """Test polynomial and cosine schedules"""

    def test_poly_endpoints(self):
        assert poly_lr(0, 0.01, 100) == pytest.approx(0.01)
        assert poly_lr(100, 0.01, 100) == 0.0
        assert poly_lr(50, 1.0, 100, power=1.0) == pytest.approx(0.5)

    def test_poly_decreasing(self):
        rates = [poly_lr(t, 0.01, 20) for t in range(21)]
        assert all(a > b for a, b in zip(rates, rates[1:]))

    def test_cosine_warmup(self):
        """Test the linear ramp then the cosine from base to min"""
        assert cosine_lr(0, 1.0, 10, warmup_iters=2, warmup_start_lr=0.0) == 0.0
        assert cosine_lr(1, 1.0, 10, warmup_iters=2) == pytest.approx(0.5)
        assert cosine_lr(2, 1.0, 10, warmup_iters=2) == pytest.approx(1.0)
        assert cosine_lr(6, 1.0, 10, warmup_iters=2) == pytest.approx(0.5)
        assert cosine_lr(10, 1.0, 10, warmup_iters=2, min_lr=0.1) == pytest.approx(0.1)

    def test_out_of_range_step(self):
        with pytest.raises(ValueError):
            poly_lr(11, 0.01, 10)
        with pytest.raises(ValueError):
            cosine_lr(-1, 0.01, 10)

    def test_learning_rate_dispatch(self):
        sgd = RecipeConfig(base_lr=0.1, max_iters=10, poly_power=1.0)
        adamw = RecipeConfig(optimizer=OptimizerKind.ADAMW_COSINE, base_lr=0.1, max_iters=10)
        assert learning_rate(5, sgd) == pytest.approx(0.05)
        assert learning_rate(5, adamw) == pytest.approx(0.05)


class TestRecipeConfig:
    """Test recipe defaults and validation"""

    def test_weight_decay_defaults(self):
        assert RecipeConfig().effective_weight_decay == 0.0
        assert RecipeConfig(optimizer=OptimizerKind.ADAMW_COSINE).effective_weight_decay == 0.05
        assert RecipeConfig(weight_decay=1e-4).effective_weight_decay == 1e-4

    def test_for_optimizer(self):
        """Test AdamW gets a 5% warm-up by default"""
        recipe = RecipeConfig.for_optimizer(OptimizerKind.ADAMW_COSINE, max_iters=200)
        assert recipe.warmup_iters == 10
        assert recipe.base_lr == 1e-3
        assert RecipeConfig.for_optimizer(OptimizerKind.SGD_POLY, base_lr=0.5).base_lr == 0.5

    @pytest.mark.parametrize("changes", [
        dict(max_iters=0),
        dict(base_lr=0.0),
        dict(warmup_iters=10, max_iters=10),
        dict(min_lr=1.0, base_lr=0.1),
        dict(eval_interval=-1),
    ])
    def test_invalid(self, changes):
        with pytest.raises(ConfigError):
            RecipeConfig(**changes).validate()


class TestSgdPoly:
    """Test momentum SGD against a hand trajectory"""

    def test_two_steps(self, float64):
        """Test p = 1, g = 1, momentum 0.9, lr 0.1 then 0.075"""
        p = Parameter(np.array([1.0]))
        recipe = RecipeConfig(base_lr=0.1, max_iters=4, poly_power=1.0, momentum=0.9, weight_decay=0.0)
        state = TrainState()
        state = sgd_poly_step(state, {"p": p}, {"p": np.array([1.0])}, recipe)
        assert p.data[0] == pytest.approx(0.9, abs=1e-12)
        assert state.step == 1 and state.lr == pytest.approx(0.1)
        state = sgd_poly_step(state, {"p": p}, {"p": np.array([1.0])}, recipe)
        assert p.data[0] == pytest.approx(0.9 - 0.075 * 1.9, abs=1e-12)
        np.testing.assert_allclose(state.moments["p"]["momentum"], [1.9])

    def test_weight_decay_is_coupled(self, float64):
        p = Parameter(np.array([2.0]))
        recipe = RecipeConfig(base_lr=0.1, max_iters=4, weight_decay=0.5)
        sgd_poly_step(TrainState(), {"p": p}, {"p": np.array([0.0])}, recipe)
        assert p.data[0] == pytest.approx(2.0 - 0.1 * 1.0, abs=1e-12)

    def test_missing_gradient_is_skipped(self):
        p = Parameter(np.array([1.0, 2.0]))
        state = sgd_poly_step(TrainState(), {"p": p}, {}, RecipeConfig(max_iters=2))
        np.testing.assert_array_equal(p.data, [1.0, 2.0])
        assert state.moments == {}

    def test_old_state_untouched(self):
        """Test the update returns a new state"""
        p = Parameter(np.array([1.0]))
        state = TrainState()
        new = sgd_poly_step(state, {"p": p}, {"p": np.array([1.0])}, RecipeConfig(max_iters=2))
        assert state.step == 0 and state.moments == {}
        assert new.step == 1

    def test_step_past_max_iters(self):
        p = Parameter(np.array([1.0]))
        with pytest.raises(ValueError):
            sgd_poly_step(TrainState(step=2), {"p": p}, {"p": np.array([1.0])}, RecipeConfig(max_iters=2))


class TestAdamwCosine:
    """Test AdamW against its closed form"""

    def _recipe(self, **changes):
        base = dict(optimizer=OptimizerKind.ADAMW_COSINE, base_lr=0.1, max_iters=10,
                    weight_decay=0.01, warmup_iters=0)
        base.update(changes)
        return RecipeConfig(**base)

    def test_first_step_closed_form(self, float64):
        """Test step one moves each weight by lr * g / (|g| + eps) after decay"""
        w = Parameter(np.array([[0.5, -1.0], [2.0, 0.0]]))
        b = Parameter(np.array([0.3, -0.3]))
        gw = np.array([[0.2, -0.4], [1.0, 3.0]])
        gb = np.array([-0.5, 0.1])
        recipe = self._recipe()
        adamw_cosine_step(TrainState(), {"w": w, "b": b}, {"w": gw, "b": gb}, recipe)
        expected_w = np.array([[0.5, -1.0], [2.0, 0.0]]) * (1 - 0.1 * 0.01) - 0.1 * gw / (np.abs(gw) + 1e-8)
        expected_b = np.array([0.3, -0.3]) - 0.1 * gb / (np.abs(gb) + 1e-8)
        np.testing.assert_allclose(w.data, expected_w, atol=1e-10, rtol=0)
        np.testing.assert_allclose(b.data, expected_b, atol=1e-10, rtol=0)

    def test_second_step_closed_form(self, float64):
        """Test bias-corrected moments after two different gradients"""
        p = Parameter(np.array([1.0]))
        recipe = self._recipe(weight_decay=0.0)
        g1, g2 = 0.5, -0.2
        state = adamw_cosine_step(TrainState(), {"p": p}, {"p": np.array([g1])}, recipe)
        after_one = p.data[0]
        state = adamw_cosine_step(state, {"p": p}, {"p": np.array([g2])}, recipe)
        m = (0.9 * 0.1 * g1 + 0.1 * g2) / (1 - 0.9 ** 2)
        v = (0.999 * 0.001 * g1 ** 2 + 0.001 * g2 ** 2) / (1 - 0.999 ** 2)
        lr = 0.05 * (1 + math.cos(math.pi * 1 / 10))
        assert p.data[0] == pytest.approx(after_one - lr * m / (math.sqrt(v) + 1e-8), abs=1e-10)
        assert state.step == 2 and state.lr == pytest.approx(lr)

    def test_dispatch(self, float64):
        p = Parameter(np.array([[1.0]]))
        state = optimizer_step(TrainState(), {"p": p}, {"p": np.array([[1.0]])}, self._recipe())
        assert set(state.moments["p"]) == {"exp_avg", "exp_avg_sq"}
