import numpy as np
import pytest
from hypothesis import given, strategies as st

from odernn import autodiff as ad
from odernn.errors import UsageError
from odernn.tensor import Tensor
from odernn.training import fd_check


def scalar(x):
    return Tensor([float(x)])


def test_record_examples():
    tape = ad.Tape()
    x, y = tape.var(scalar(2)), tape.var(scalar(3))
    assert ad.mul(x, y).value.item() == 6.0
    assert ad.sigmoid(tape.var(scalar(0))).value.item() == 0.5
    A = Tensor([[1.0, 2.0], [3.0, 4.0]])
    assert ad.matmul(tape.var(Tensor(np.eye(2))), tape.var(A)).value == A


def test_untaped_inputs_return_tensors():
    out = ad.add(Tensor([1.0]), Tensor([2.0]))
    assert isinstance(out, Tensor) and out.item() == 3.0


def test_backward_power_rule():
    tape = ad.Tape()
    x = tape.var(scalar(3))
    grads = tape.backward(ad.mul(x, x))
    assert grads[x.id].item() == 6.0
    assert x.grad.item() == 6.0


def test_backward_sigmoid_at_zero():
    tape = ad.Tape()
    x = tape.var(scalar(0))
    tape.backward(ad.sigmoid(x))
    assert x.grad.item() == 0.25


def _euler_mse(a, y0, targets, dt, steps):
    y = y0
    preds = []
    for _ in range(steps):
        y = ad.add(y, ad.scale(ad.mul(a, y), dt))
        preds.append(y)
    total = None
    for p, t in zip(preds, targets):
        d = ad.sub(p, t)
        s = ad.sum_(ad.mul(d, d))
        total = s if total is None else ad.add(total, s)
    return ad.scale(total, 1.0 / len(preds))


def test_mse_through_ten_euler_steps_matches_central_differences():
    targets = [Tensor([np.exp(-0.1 * (k + 1))]) for k in range(10)]
    a0, y00 = -0.7, 1.3
    tape = ad.Tape()
    a, y0 = tape.var(scalar(a0)), tape.var(scalar(y00))
    tape.backward(_euler_mse(a, y0, targets, 0.1, 10))

    def f(av, yv):
        return _euler_mse(scalar(av), scalar(yv), targets, 0.1, 10).item()

    h = 1e-6
    fd_a = (f(a0 + h, y00) - f(a0 - h, y00)) / (2 * h)
    fd_y = (f(a0, y00 + h) - f(a0, y00 - h)) / (2 * h)
    assert abs(a.grad.item() - fd_a) / abs(fd_a) < 1e-6
    assert abs(y0.grad.item() - fd_y) / abs(fd_y) < 1e-6


def test_accumulation_is_additive():
    vals = Tensor([1.5, -0.5])
    tape = ad.Tape()
    x = tape.var(vals)
    tape.backward(ad.sum_(ad.mul(x, x)))
    # Same product with the two factors as separate leaves: each gets one path.
    tape2 = ad.Tape()
    u, w = tape2.var(vals), tape2.var(vals)
    tape2.backward(ad.sum_(ad.mul(u, w)))
    assert np.array_equal(x.grad.array, u.grad.array + w.grad.array)
    assert np.array_equal(x.grad.array, 2 * vals.array)


def test_backward_on_constant_leaves_others_zero():
    tape = ad.Tape()
    c = tape.var(scalar(4.0))
    other = tape.var(Tensor([1.0, 2.0]))
    ad.mul(other, other)  # recorded but unrelated to the loss
    grads = tape.backward(c)
    assert grads[c.id].item() == 1.0
    assert other.id not in grads
    assert other.grad == Tensor([0.0, 0.0])


def test_non_scalar_loss_rejected():
    tape = ad.Tape()
    x = tape.var(Tensor([1.0, 2.0]))
    with pytest.raises(UsageError):
        tape.backward(ad.mul(x, x))


def test_mixing_tapes_rejected():
    a, b = ad.Tape(), ad.Tape()
    with pytest.raises(UsageError):
        ad.add(a.var(scalar(1)), b.var(scalar(2)))


def test_cleared_tape_invalidates_vars():
    tape = ad.Tape()
    x = tape.var(scalar(1))
    tape.clear()
    assert len(tape) == 0
    with pytest.raises(UsageError):
        ad.add(x, tape.var(scalar(1)))


def test_grad_shape_matches_value():
    tape = ad.Tape()
    W = tape.var(Tensor(np.ones((3, 2))))
    x = tape.var(Tensor([1.0, 2.0]))
    tape.backward(ad.sum_(ad.matmul(W, x)))
    assert W.grad.shape == (3, 2) and x.grad.shape == (2,)


def test_node_ids_ordered_parents_first():
    tape = ad.Tape()
    x = tape.var(scalar(1))
    y = ad.tanh(ad.sigmoid(x))
    pid, tag = y.parents[0]
    assert pid < y.id and tag == "tanh"


def test_replay_reproduces_values():
    tape = ad.Tape()
    x = tape.var(Tensor([0.3, -1.2]))
    W = tape.var(Tensor([[0.5, -0.25], [1.0, 2.0]]))
    ad.sum_(ad.tanh(ad.add(ad.matmul(W, x), ad.sigmoid(x))))
    assert tape.replay()


rand = st.floats(-2, 2, allow_nan=False)


@st.composite
def mats(draw, rows, cols):
    vals = draw(st.lists(rand, min_size=rows * cols, max_size=rows * cols))
    return Tensor(vals, (rows, cols))


UNARY = {
    "sigmoid": ad.sigmoid,
    "tanh": ad.tanh,
    "exp": ad.exp,
    "reshape": lambda a: ad.reshape(a, (6,)),
    "scale": lambda a: ad.scale(a, -1.7),
}
BINARY = {"add": ad.add, "sub": ad.sub, "mul": ad.mul}


def _weighted(out):
    # non-uniform read-out so every element's gradient differs
    v = ad.value(out)
    w = Tensor(np.linspace(0.5, 1.5, v.size).reshape(v.shape))
    return ad.sum_(ad.mul(out, w))


@pytest.mark.parametrize("name", sorted(UNARY))
@given(a=mats(2, 3))
def test_unary_rules_match_central_differences(name, a):
    res = fd_check(lambda v: _weighted(UNARY[name](v["a"])), {"a": a})
    assert res.worst < 1e-6


@pytest.mark.parametrize("name", sorted(BINARY))
@given(a=mats(2, 3), b=mats(2, 3))
def test_binary_rules_match_central_differences(name, a, b):
    res = fd_check(lambda v: _weighted(BINARY[name](v["a"], v["b"])), {"a": a, "b": b})
    assert res.worst < 1e-6


@given(a=mats(2, 3), b=mats(3, 2), x=mats(3, 1))
def test_matmul_rule(a, b, x):
    res = fd_check(lambda v: _weighted(ad.matmul(v["a"], v["b"])), {"a": a, "b": b})
    assert res.worst < 1e-6
    xv = Tensor(x.array.ravel())
    res = fd_check(lambda v: _weighted(ad.matmul(v["a"], v["x"])), {"a": a, "x": xv})
    assert res.worst < 1e-6


@given(a=mats(2, 3))
def test_log_rule(a):
    pos = Tensor(np.abs(a.array) + 0.5)
    assert fd_check(lambda v: _weighted(ad.log(v["a"])), {"a": pos}).worst < 1e-6


@given(a=mats(3, 4), labels=st.lists(st.integers(0, 2), min_size=4, max_size=4))
def test_cross_entropy_rule(a, labels):
    assert fd_check(lambda v: ad.cross_entropy(v["a"], labels), {"a": a}).worst < 1e-6


@given(a=mats(2, 3))
def test_mean_rule(a):
    assert fd_check(lambda v: ad.mean(ad.mul(v["a"], v["a"])), {"a": a}).worst < 1e-6
