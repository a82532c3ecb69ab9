import numpy as np
import pytest

from cloudifier import ops
from cloudifier.errors import NumericError, TapeError
from cloudifier.tensor import GradTape, Tensor, backward, default_dtype, float64_mode, make_result, no_grad


def test_default_dtype_is_float32_and_checking_mode_switches():
    assert Tensor([1.0]).dtype == np.float32
    with float64_mode():
        assert default_dtype() == np.float64
        assert Tensor([1.0]).dtype == np.float64
    assert default_dtype() == np.float32


def test_sum_gradient_is_ones():
    x = Tensor(np.arange(6.0).reshape(1, 1, 2, 3), requires_grad=True)
    with GradTape() as tape:
        loss = ops.reduce_sum(x)
    backward(loss, tape)
    np.testing.assert_array_equal(x.grad, np.ones((1, 1, 2, 3)))


def test_relu_subgradient():
    x = Tensor(np.array([-1.0, 2.0]).reshape(1, 1, 1, 2), requires_grad=True)
    with GradTape() as tape:
        loss = ops.reduce_sum(ops.relu(x))
    tape.backward(loss)
    np.testing.assert_array_equal(x.grad.ravel(), [0.0, 1.0])


def test_relu_gradient_at_zero_is_zero():
    x = Tensor(np.zeros((1, 1, 1, 1)), requires_grad=True)
    with GradTape() as tape:
        loss = ops.reduce_sum(ops.relu(x))
    tape.backward(loss)
    assert x.grad.item() == 0.0


def test_reused_value_accumulates():
    x = Tensor(np.full((1, 1, 1, 2), 3.0), requires_grad=True)
    with GradTape() as tape:
        y = ops.add(x, x)
        loss = ops.reduce_sum(ops.add(y, x))
    tape.backward(loss)
    np.testing.assert_array_equal(x.grad.ravel(), [3.0, 3.0])


def test_loss_not_on_tape_is_an_error():
    x = Tensor(np.ones((1, 1, 1, 1)), requires_grad=True)
    loss = ops.reduce_sum(x)  # recorded nowhere
    with GradTape() as tape:
        ops.relu(x)
    with pytest.raises(TapeError):
        backward(loss, tape)


def test_non_scalar_loss_is_an_error():
    x = Tensor(np.ones((1, 1, 1, 2)), requires_grad=True)
    with GradTape() as tape:
        y = ops.relu(x)
    with pytest.raises(TapeError):
        tape.backward(y)


def test_cycle_is_detected():
    x = Tensor(np.ones((1, 1, 1, 1)), requires_grad=True)
    with GradTape() as tape:
        a = ops.relu(x)
        b = ops.relu(a)
    # forge a record whose input is produced later on the tape
    tape.nodes[0].inputs = [b]
    with pytest.raises(TapeError):
        tape.backward(ops_sum(b, tape))


def ops_sum(t, tape):
    with tape:
        return ops.reduce_sum(t)


def test_no_grad_suspends_recording():
    x = Tensor(np.ones((1, 1, 1, 1)), requires_grad=True)
    with GradTape() as tape:
        with no_grad():
            ops.relu(x)
        assert len(tape) == 0
        ops.relu(x)
    assert len(tape) == 1


def test_nothing_recorded_without_grad_inputs():
    x = Tensor(np.ones((1, 1, 1, 1)))
    with GradTape() as tape:
        y = ops.relu(x)
    assert len(tape) == 0 and not y.requires_grad


def test_non_finite_result_raises():
    with pytest.raises(NumericError):
        make_result("bad", np.array([np.nan]), [], lambda g: ())


def test_gradients_accumulate_into_existing_slot():
    x = Tensor(np.ones((1, 1, 1, 1)), requires_grad=True)
    for _ in range(2):
        with GradTape() as tape:
            loss = ops.reduce_sum(x)
        tape.backward(loss)
    assert x.grad.item() == 2.0
