import numpy as np
import pytest

from scriptorium import autograd as ag
from scriptorium import layers


def t(arr, grad=True):
    return ag.Tensor(np.asarray(arr, dtype=np.float64), requires_grad=grad)


def test_matmul_identity():
    x = t([[1.0, 2.0], [3.0, 4.0]], grad=False)
    eye = t(np.eye(2), grad=False)
    out = ag.matmul(eye, x)
    assert np.array_equal(out.data, x.data)


def test_relu_definition():
    out = ag.relu(t([-1.0, 2.0], grad=False))
    assert np.array_equal(out.data, [0.0, 2.0])


def test_softmax_symmetry():
    out = ag.softmax(t([0.0, 0.0], grad=False))
    assert np.allclose(out.data, [0.5, 0.5], atol=1e-12)


def test_sum_of_squares_gradient():
    x = t([1.0, 2.0])
    ag.backward(ag.tsum(ag.mul(x, x)))
    assert np.allclose(x.grad, [2.0, 4.0], atol=1e-12)


def test_product_rule():
    x = t(3.0)
    y = t(5.0)
    ag.backward(ag.mul(x, y))
    assert float(x.grad) == 5.0
    assert float(y.grad) == 3.0


def test_fanout_accumulates_both_paths():
    # z = x*x + 3*x  =>  dz/dx = 2x + 3
    x = t(4.0)
    z = ag.add(ag.mul(x, x), ag.scale(x, 3.0))
    ag.backward(z)
    assert float(x.grad) == 2 * 4.0 + 3.0


def test_grad_accumulates_across_backward_calls():
    x = t([2.0])
    ag.backward(ag.tsum(ag.mul(x, x)))
    ag.backward(ag.tsum(ag.mul(x, x)))
    assert np.allclose(x.grad, [8.0])


def test_non_scalar_loss_rejected():
    x = t([1.0, 2.0])
    with pytest.raises(ag.GraphError):
        ag.backward(ag.mul(x, x))


def test_shape_mismatch_names_shapes():
    a = t(np.zeros((2, 3)))
    b = t(np.zeros((3, 3)))
    with pytest.raises(ag.ShapeError, match=r"\(2, 3\).*\(3, 3\)"):
        ag.add(a, b)
    with pytest.raises(ag.ShapeError, match="matmul"):
        ag.matmul(t(np.zeros((2, 3))), t(np.zeros((2, 3))))


def test_scalar_broadcast_only():
    a = t(np.ones((2, 2)))
    s = t(3.0)
    out = ag.mul(a, s)
    ag.backward(ag.tsum(out))
    assert np.allclose(a.grad, 3.0)
    assert float(s.grad) == 4.0


def test_sgd_step():
    p = t(np.array([1.0]))
    p.grad = np.array([2.0])
    ag.sgd_step([p], 0.1)
    assert np.allclose(p.data, [0.8])
    assert p.grad is None
    # lr = 0 leaves params unchanged
    q = t(np.array([1.5]))
    q.grad = np.array([7.0])
    ag.sgd_step([q], 0.0)
    assert np.allclose(q.data, [1.5])
    # zero grad leaves params unchanged
    r = t(np.array([2.5]))
    r.grad = np.zeros(1)
    ag.sgd_step([r], 0.3)
    assert np.allclose(r.data, [2.5])


def test_determinism_bit_identical():
    rng = np.random.default_rng(7)
    xd = rng.normal(size=(4, 5))
    wd = rng.normal(size=(5, 3))

    def run():
        x = t(xd.copy(), grad=False)
        w = t(wd.copy())
        out = ag.softmax(ag.matmul(ag.tanh(x), w))
        loss = ag.tsum(ag.mul(out, out))
        ag.backward(loss)
        return out.data.copy(), w.grad.copy()

    o1, g1 = run()
    o2, g2 = run()
    assert np.array_equal(o1, o2)
    assert np.array_equal(g1, g2)


# --- finite-difference agreement for every primitive -----------------------

def _check(fn, params, tol=1e-6, eps=1e-5):
    err = ag.grad_check(fn, params, epsilon=eps)
    assert err <= tol, f"finite-difference mismatch: {err}"


RNG = np.random.default_rng(20240)


def test_fd_add_mul_scale():
    a = t(RNG.normal(size=(3, 4)))
    b = t(RNG.normal(size=(3, 4)))
    s = t(RNG.normal())
    _check(lambda: ag.tsum(ag.mul(ag.add(a, b), ag.add(a, s))), [a, b, s])


def test_fd_matmul():
    a = t(RNG.normal(size=(3, 4)))
    b = t(RNG.normal(size=(4, 2)))
    _check(lambda: ag.tsum(ag.matmul(a, b)), [a, b])


def test_fd_bias_add():
    x = t(RNG.normal(size=(3, 4)))
    b = t(RNG.normal(size=(4,)))
    _check(lambda: ag.tsum(ag.tanh(ag.bias_add(x, b))), [x, b])


@pytest.mark.parametrize("stride,padding", [((1, 1), (0, 0)), ((2, 1), (1, 2)), ((2, 2), (1, 1))])
def test_fd_conv2d(stride, padding):
    x = t(RNG.normal(size=(2, 3, 6, 7)))
    w = t(RNG.normal(size=(4, 3, 3, 3)) * 0.5)
    b = t(RNG.normal(size=(4,)))
    _check(lambda: ag.tsum(ag.tanh(ag.conv2d(x, w, b, stride, padding))), [x, w, b], tol=1e-4)


def test_fd_maxpool():
    x = t(RNG.normal(size=(2, 2, 6, 8)))
    _check(lambda: ag.tsum(ag.mul(ag.maxpool2d(x, (2, 2)), ag.maxpool2d(x, (2, 2)))), [x],
           tol=1e-4)


def test_fd_activations():
    x = t(RNG.normal(size=(4, 3)))
    _check(lambda: ag.tsum(ag.relu(x)), [x], tol=1e-4)
    _check(lambda: ag.tsum(ag.tanh(x)), [x])
    _check(lambda: ag.tsum(ag.sigmoid(x)), [x])


def test_fd_softmax_logsoftmax():
    x = t(RNG.normal(size=(3, 5)))
    w = t(RNG.normal(size=(3, 5)))
    _check(lambda: ag.tsum(ag.mul(ag.softmax(x), w)), [x, w])
    _check(lambda: ag.tsum(ag.mul(ag.log_softmax(x), w)), [x, w])


def test_fd_concat_slice():
    a = t(RNG.normal(size=(2, 3)))
    b = t(RNG.normal(size=(2, 2)))
    _check(lambda: ag.tsum(ag.tanh(ag.slice_axis(ag.concat([a, b], axis=1), 1, 1, 4))), [a, b])


def test_fd_reshape_transpose():
    x = t(RNG.normal(size=(2, 3, 4)))
    _check(lambda: ag.tsum(ag.tanh(ag.reshape(ag.transpose(x, (2, 0, 1)), (4, 6)))), [x])


def test_fd_take_rows_pick_per_row():
    x = t(RNG.normal(size=(5, 4)))
    _check(lambda: ag.tsum(ag.tanh(ag.take_rows(x, [0, 2, 2, 4]))), [x])
    _check(lambda: ag.tsum(ag.pick_per_row(x, [1, 3, 0, 2, 2])), [x])


def test_fd_smooth_l1():
    # keep sample points away from the |x| = 1 kink
    vals = RNG.normal(size=(4, 3))
    vals[np.abs(np.abs(vals) - 1.0) < 0.05] = 0.5
    x = t(vals)
    _check(lambda: ag.tsum(ag.smooth_l1(x)), [x], tol=1e-4)


def test_fd_sum_mean():
    x = t(RNG.normal(size=(3, 3)))
    _check(lambda: ag.mean(ag.mul(x, x)), [x])


# --- composite graphs -------------------------------------------------------

def test_fd_linear_layer():
    rng = np.random.default_rng(5)
    lin = layers.Linear(rng, 6, 4)
    x = t(rng.normal(size=(2, 6)))
    _check(lambda: ag.tsum(ag.tanh(lin(x))), [x, lin.w, lin.b])


def test_fd_lstm_cell_single_step():
    rng = np.random.default_rng(6)
    cell = layers.LSTMCell(rng, 5, 7)
    x = t(rng.normal(size=(1, 5)))

    def fn():
        h, c = cell.initial()
        h2, _ = cell.step(x, h, c)
        return ag.tsum(ag.mul(h2, h2))

    _check(fn, [x, cell.w, cell.b], tol=1e-4)


def test_fd_softmax_cross_entropy():
    rng = np.random.default_rng(8)
    logits = t(rng.normal(size=(4, 6)))
    targets = [1, 0, 5, 3]
    _check(lambda: layers.cross_entropy_rows(logits, targets), [logits])
