"""
Unit tests for the tensor and autodiff engine
"""

import numpy as np
import pytest

from src.core import (
    GradTape,
    GraphError,
    NonFiniteError,
    ShapeError,
    Tensor,
    backward,
    default_dtype,
    forward_rng,
    get_default_dtype,
    no_grad,
)
from src.core import functional as F


class TestTensorCreation:
    """Test dtype handling when wrapping arrays"""

    def test_default_dtype_is_float32(self):
        """Test Python data becomes float32"""
        t = Tensor([1, 2, 3])
        assert t.dtype == np.float32
        assert t.shape == (3,)

    def test_float64_array_is_kept(self):
        """Test float64 numpy buffers keep their dtype"""
        t = Tensor(np.zeros((2, 2), dtype=np.float64))
        assert t.dtype == np.float64

    def test_integer_array_is_converted(self):
        """Test integer arrays are converted to the default dtype"""
        t = Tensor(np.arange(4))
        assert t.dtype == np.float32

    def test_default_dtype_context(self):
        """Test default_dtype switches and restores"""
        with default_dtype(np.float64):
            assert get_default_dtype() == np.float64
            assert Tensor([1.0]).dtype == np.float64
        assert get_default_dtype() == np.float32

    def test_unsupported_default_dtype(self):
        """Test float16 is rejected"""
        with pytest.raises(TypeError):
            with default_dtype(np.float16):
                pass

    def test_item_and_repr(self):
        """Test scalar access and repr"""
        t = Tensor(np.array(2.5, dtype=np.float32), requires_grad=True)
        assert t.item() == 2.5
        assert "requires_grad=True" in repr(t)


class TestBackward:
    """Test gradient propagation through small graphs"""

    def test_product_rule(self):
        """Test d(x*y)/dx = y and d(x*y)/dy = x"""
        x = Tensor(np.array([2.0, 3.0], dtype=np.float32), requires_grad=True)
        y = Tensor(np.array([5.0, 7.0], dtype=np.float32), requires_grad=True)
        (x * y).sum().backward()
        np.testing.assert_allclose(x.grad, [5.0, 7.0])
        np.testing.assert_allclose(y.grad, [2.0, 3.0])

    def test_reused_tensor_accumulates(self):
        """Test a tensor used twice receives the summed gradient"""
        x = Tensor(np.array([1.0, -2.0], dtype=np.float32), requires_grad=True)
        y = x * x + x
        y.sum().backward()
        np.testing.assert_allclose(x.grad, 2 * x.data + 1)

    def test_gradient_dtype_matches_leaf(self):
        """Test leaf gradients are stored in the leaf's dtype"""
        x = Tensor(np.ones(3, dtype=np.float64), requires_grad=True)
        (x * 2.0).sum().backward()
        assert x.grad.dtype == np.float64

    def test_leaves_without_grad_are_skipped(self):
        """Test a constant input gets no gradient"""
        x = Tensor(np.ones(3, dtype=np.float32), requires_grad=True)
        c = Tensor(np.full(3, 4.0, dtype=np.float32))
        (x * c).sum().backward()
        assert c.grad is None
        np.testing.assert_allclose(x.grad, 4.0)

    def test_sub_and_neg(self):
        """Test subtraction and negation signs"""
        a = Tensor(np.ones(2, dtype=np.float32), requires_grad=True)
        b = Tensor(np.ones(2, dtype=np.float32), requires_grad=True)
        (-(a - b)).sum().backward()
        np.testing.assert_allclose(a.grad, -1.0)
        np.testing.assert_allclose(b.grad, 1.0)

    def test_trailing_broadcast_reduces_gradient(self):
        """Test adding a bias over the trailing axis sums its gradient"""
        x = Tensor(np.zeros((4, 3), dtype=np.float32), requires_grad=True)
        bias = Tensor(np.zeros(3, dtype=np.float32), requires_grad=True)
        F.add(x, bias).sum().backward()
        np.testing.assert_allclose(bias.grad, [4.0, 4.0, 4.0])

    def test_scalar_leaf_backward(self):
        """Test backward on a 0-d leaf sets its gradient to one"""
        x = Tensor(np.array(3.0, dtype=np.float32), requires_grad=True)
        backward(x)
        assert x.grad == 1.0


class TestGraphErrors:
    """Test invalid backward requests"""

    def test_non_scalar_loss(self):
        """Test backward on a vector raises GraphError"""
        x = Tensor(np.ones(3, dtype=np.float32), requires_grad=True)
        with pytest.raises(GraphError):
            (x * 2.0).backward()

    def test_second_backward_raises(self):
        """Test the graph is released after the first backward"""
        x = Tensor(np.ones(3, dtype=np.float32), requires_grad=True)
        loss = (x * x).sum()
        loss.backward()
        with pytest.raises(GraphError):
            loss.backward()

    def test_no_requires_grad_is_noop(self):
        """Test backward on a constant graph does nothing"""
        x = Tensor(np.ones(3, dtype=np.float32))
        loss = (x * x).sum()
        loss.backward()
        assert x.grad is None

    def test_implicit_broadcast_rejected(self):
        """Test non-suffix broadcasting raises ShapeError"""
        a = Tensor(np.ones((2, 3), dtype=np.float32))
        b = Tensor(np.ones((2, 1), dtype=np.float32))
        with pytest.raises(ShapeError):
            _ = a + b


class TestNonFinite:
    """Test forward ops refuse to produce NaN or Inf"""

    def test_overflow_raises(self):
        """Test exp overflow raises NonFiniteError"""
        x = Tensor(np.array([1000.0], dtype=np.float32))
        with pytest.raises(NonFiniteError):
            F.exp(x)

    def test_nan_input_raises(self):
        """Test NaN propagating through an op is reported"""
        x = Tensor(np.array([np.nan, 1.0], dtype=np.float32))
        with pytest.raises(NonFiniteError):
            F.add(x, x)


class TestGradMode:
    """Test no_grad and the recorded tape"""

    def test_no_grad_builds_no_graph(self):
        """Test outputs created under no_grad do not require grad"""
        x = Tensor(np.ones(3, dtype=np.float32), requires_grad=True)
        with no_grad():
            y = x * 2.0
        assert not y.requires_grad
        assert len(GradTape(y)) == 0

    def test_tape_is_execution_ordered(self):
        """Test GradTape lists nodes by creation order"""
        x = Tensor(np.ones(3, dtype=np.float32), requires_grad=True)
        a = x * 2.0
        b = F.relu(a)
        loss = b.sum()
        tape = GradTape(loss)
        assert len(tape) == 3
        seqs = [fn.seq for fn in tape.ops]
        assert seqs == sorted(seqs)
        assert [type(fn).__name__ for fn in tape.ops] == ["Mul", "ReLU", "Sum"]

    def test_tape_backward_visits_in_reverse(self):
        """Test replay walks the tape from the loss back to the inputs"""
        x = Tensor(np.ones(3, dtype=np.float32), requires_grad=True)
        loss = F.relu(x * 2.0).sum()
        visited = GradTape(loss).backward(np.ones_like(loss.data))
        assert [type(fn).__name__ for fn in visited] == ["Sum", "ReLU", "Mul"]
        np.testing.assert_allclose(x.grad, 2.0)


class TestForwardRng:
    """Test the generator used by stochastic layers"""

    def test_dropout_requires_rng_in_training(self):
        """Test dropout without forward_rng raises"""
        x = Tensor(np.ones((4, 4), dtype=np.float32))
        with pytest.raises(RuntimeError):
            F.dropout(x, 0.5, training=True)

    def test_dropout_is_reproducible(self):
        """Test equal seeds give equal masks"""
        x = Tensor(np.ones((8, 8), dtype=np.float32))
        with forward_rng(np.random.default_rng(5)):
            a = F.dropout(x, 0.5, training=True).data
        with forward_rng(np.random.default_rng(5)):
            b = F.dropout(x, 0.5, training=True).data
        np.testing.assert_array_equal(a, b)
        assert set(np.unique(a)) <= {0.0, 2.0}

    def test_dropout_eval_is_identity(self):
        """Test dropout passes input through in eval mode"""
        x = Tensor(np.ones((2, 2), dtype=np.float32))
        assert F.dropout(x, 0.5, training=False) is x
