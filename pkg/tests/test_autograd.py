import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from unidyg import autograd as ag
from unidyg.autograd import AdamState, Parameter, Tape, adam_step, backward, grad_check
from unidyg.errors import InvalidArgumentError, NumericError


def grads_of(fn, *values):
    params = [Parameter(v, name=f"p{i}") for i, v in enumerate(values)]
    with Tape() as tape:
        loss = fn(*params)
    backward(tape, loss)
    return [p.grad.copy() for p in params]


def test_sum_of_squares_gradient():
    (g,) = grads_of(lambda x: ag.tsum(ag.mul(x, x)), np.array([1.0, 2.0]))
    np.testing.assert_array_equal(g, [2.0, 4.0])


def test_dc_component_gradient_is_all_ones():
    def fn(x):
        return ag.getitem(ag.fft(ag.complex_from_real(x)), (0, 0))

    (g,) = grads_of(fn, np.random.default_rng(0).standard_normal(8))
    np.testing.assert_allclose(g, np.ones(8), atol=1e-14)


def test_non_scalar_loss_rejected():
    x = Parameter(np.ones(3))
    with Tape() as tape:
        y = ag.mul(x, 2.0)
    with pytest.raises(InvalidArgumentError):
        backward(tape, y)


def test_unreachable_parameter_gets_zero():
    a, b = Parameter(np.ones(2), "a"), Parameter(np.ones(2), "b")
    with Tape() as tape:
        loss = ag.tsum(ag.mul(a, 3.0))
        ag.mul(b, 2.0)
    backward(tape, loss)
    assert np.all(b.grad == 0) and np.all(a.grad == 3)


def test_tape_ids_increase_and_outside_tape_nothing_records():
    x = Parameter(np.ones(3))
    y = ag.mul(x, 2.0)
    assert not y.requires_grad
    with Tape() as tape:
        ag.tsum(ag.exp(ag.mul(x, 2.0)))
    ids = [n.id for n in tape.nodes]
    assert ids == sorted(ids) and len(set(ids)) == len(ids)
    assert all(all(i < n.id for i in n.inputs if i is not None) for n in tape.nodes)


def test_no_grad_suspends_recording():
    x = Parameter(np.ones(3))
    with Tape() as tape:
        with ag.no_grad():
            y = ag.mul(x, 2.0)
        z = ag.mul(x, 3.0)
    assert not y.requires_grad and z.requires_grad
    assert len(tape) == 2  # param leaf + mul


def test_grad_check_linear_is_exact():
    w = np.random.default_rng(1).standard_normal(6)
    err = grad_check(lambda x: ag.tsum(ag.mul(x, w)), [np.ones(6)])
    assert err < 1e-10


def test_grad_check_magnitude_away_from_origin():
    def fn(z):
        return ag.tsum(ag.cabs(z))

    err = grad_check(fn, [np.array([[0.3, -0.5], [0.4, 0.2]])])
    assert err < 1e-5


def test_grad_check_excludes_magnitude_kink_at_origin():
    res = grad_check(lambda z: ag.tsum(ag.cabs(z)), [np.zeros((2, 1))], details=True)
    assert res.excluded == 2 and res.checked == 0


def test_grad_check_rejects_bad_eps_and_nonfinite():
    with pytest.raises(InvalidArgumentError):
        grad_check(lambda x: ag.tsum(x), [np.ones(2)], eps=1e-2)
    with pytest.raises(NumericError):
        grad_check(lambda x: ag.tsum(ag.log(x)), [np.array([-1.0])])


# -- every differentiable op at 20 random points ---------------------------

def _ops():
    rng = np.random.default_rng(42)
    w3 = rng.standard_normal((3, 4))
    mask = np.array([[True, True, False, True], [False, False, False, False], [True, False, True, True]])
    weights = rng.standard_normal((3, 4))
    w36 = rng.standard_normal((3, 6))
    w238 = rng.standard_normal((2, 3, 8))
    w25 = rng.standard_normal((2, 5))
    w234 = rng.standard_normal((2, 3, 4))
    return {
        "add": (lambda a, b: ag.tsum(ag.mul(ag.add(a, b), weights)), [(3, 4), (4,)]),
        "sub": (lambda a, b: ag.tsum(ag.mul(ag.sub(a, b), weights)), [(3, 4), (3, 1)]),
        "neg": (lambda a: ag.tsum(ag.mul(ag.neg(a), weights)), [(3, 4)]),
        "mul": (lambda a, b: ag.tsum(ag.mul(a, b)), [(3, 4), (3, 4)]),
        "div": (lambda a, b: ag.tsum(ag.div(a, ag.add(ag.mul(b, b), 1.0))), [(3, 4), (3, 4)]),
        "matmul": (lambda a, b: ag.tsum(ag.mul(ag.matmul(a, b), 0.5)), [(2, 3), (3, 4)]),
        "einsum": (lambda a, b: ag.tsum(ag.mul(ag.einsum("bf,bjf->bj", a, b), weights[:2, :3])), [(2, 5), (2, 3, 5)]),
        "mean": (lambda a: ag.mean(ag.mul(a, weights), axis=1).sum(), [(3, 4)]),
        "reshape": (lambda a: ag.tsum(ag.mul(ag.reshape(a, (3, 4)), weights)), [(12,)]),
        "getitem": (lambda a: ag.tsum(ag.mul(ag.getitem(a, (slice(None), slice(1, 3))), weights[:, 1:3])), [(3, 4)]),
        "take": (lambda a: ag.tsum(ag.mul(ag.take(a, np.array([[0, 2], [2, 2]]), axis=0), 1.3)), [(3, 4)]),
        "concat": (lambda a, b: ag.tsum(ag.mul(ag.concat([a, b], axis=1), w36)), [(3, 4), (3, 2)]),
        "pad": (lambda a: ag.tsum(ag.mul(ag.pad_last(a, 6), w36)), [(3, 4)]),
        "broadcast": (lambda a: ag.tsum(ag.mul(ag.broadcast_to(a, (3, 4)), weights)), [(1, 4)]),
        "relu": (lambda a: ag.tsum(ag.mul(ag.relu(a), weights)), [(3, 4)]),
        "sigmoid": (lambda a: ag.tsum(ag.mul(ag.sigmoid(a), weights)), [(3, 4)]),
        "exp": (lambda a: ag.tsum(ag.exp(ag.mul(a, 0.3))), [(3, 4)]),
        "log": (lambda a: ag.tsum(ag.log(ag.add(ag.mul(a, a), 0.5))), [(3, 4)]),
        "masked_softmax": (lambda a: ag.tsum(ag.mul(ag.masked_softmax(a, mask), weights)), [(3, 4)]),
        "bce": (lambda a: ag.bce_with_logits(a, (weights > 0).astype(float)), [(3, 4)]),
        "complex+real": (lambda a: ag.tsum(ag.mul(ag.real(ag.complex_from_real(a)), weights)), [(3, 4)]),
        "fft": (lambda z: ag.tsum(ag.mul(ag.fft(z), w238)), [(2, 3, 8)]),
        "fft-odd": (lambda z: ag.tsum(ag.mul(ag.fft(z), w25)), [(2, 5)]),
        "ifft": (lambda z: ag.tsum(ag.mul(ag.ifft(z), w238)), [(2, 3, 8)]),
        "cmul": (lambda a, b: ag.tsum(ag.mul(ag.cmul(a, b), w234)), [(2, 4), (2, 3, 4)]),
        "cabs": (lambda z: ag.tsum(ag.mul(ag.cabs(z), w3)), [(2, 3, 4)]),
    }


OPS = _ops()


@pytest.mark.parametrize("name", sorted(OPS))
def test_every_op_passes_grad_check(name):
    fn, shapes = OPS[name]
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    for _ in range(20):
        inputs = [rng.standard_normal(s) for s in shapes]
        assert grad_check(fn, inputs, eps=1e-6) < 1e-4, name


def test_backward_is_linear_in_the_loss():
    rng = np.random.default_rng(3)
    x0 = rng.standard_normal(5)

    def f1(x):
        return ag.tsum(ag.sigmoid(x))

    def f2(x):
        return ag.tsum(ag.mul(x, x))

    (g1,) = grads_of(f1, x0)
    (g2,) = grads_of(f2, x0)
    (g12,) = grads_of(lambda x: ag.add(f1(x), f2(x)), x0)
    np.testing.assert_allclose(g12, g1 + g2, atol=1e-14)


def test_backward_is_deterministic():
    x0 = np.random.default_rng(4).standard_normal((2, 3, 8))
    fn = OPS["fft"][0]
    a, = grads_of(fn, x0)
    b, = grads_of(fn, x0)
    assert np.array_equal(a, b)


def test_gradients_accumulate_across_calls():
    p = Parameter(np.array([1.0, -1.0]))
    for _ in range(2):
        with Tape() as tape:
            loss = ag.tsum(ag.mul(p, 3.0))
        backward(tape, loss)
    np.testing.assert_array_equal(p.grad, [6.0, 6.0])


# -- Adam ---------------------------------------------------------------------

def test_adam_first_step_moves_by_lr():
    p = Parameter(np.array([0.5, -2.0, 3.0]))
    p.grad[:] = [0.1, -4.0, 1e-3]
    adam_step([p], AdamState(), lr=0.01)
    np.testing.assert_allclose(np.abs(p.value - [0.5, -2.0, 3.0]), 0.01, rtol=1e-4)
    assert np.all(p.grad == 0)


def test_adam_zero_gradient_leaves_params():
    p = Parameter(np.array([1.0, 2.0]))
    adam_step([p], AdamState(), lr=0.1)
    np.testing.assert_array_equal(p.value, [1.0, 2.0])


def test_adam_three_steps_match_hand_recurrence():
    lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
    p = Parameter(np.array([1.0]))
    state = AdamState()
    x, m, v = 1.0, 0.0, 0.0
    for step in range(1, 4):
        with Tape() as tape:
            loss = ag.tsum(ag.mul(p, p))
        backward(tape, loss)
        adam_step([p], state, lr)
        g = 2 * x
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        x = x - lr * (m / (1 - b1 ** step)) / (np.sqrt(v / (1 - b2 ** step)) + eps)
        assert abs(p.value[0] - x) < 1e-10


def test_adam_treats_complex_planes_independently():
    p = Parameter(np.array([[1.0, 1.0], [1.0, 1.0]]))
    p.grad[:] = [[1.0, 0.0], [0.0, -1.0]]
    adam_step([p], AdamState(), lr=0.5)
    np.testing.assert_allclose(p.value, [[0.5, 1.0], [1.0, 1.5]], atol=1e-6)


def test_adam_nan_aborts_without_mutation():
    p = Parameter(np.array([1.0, 2.0]))
    q = Parameter(np.array([3.0]))
    p.grad[:] = [1.0, 1.0]
    q.grad[:] = [np.nan]
    state = AdamState()
    with pytest.raises(NumericError):
        adam_step([p, q], state, lr=0.1)
    np.testing.assert_array_equal(p.value, [1.0, 2.0])
    assert state.step == 0


def test_adam_rejects_negative_lr():
    with pytest.raises(InvalidArgumentError):
        adam_step([Parameter(np.ones(1))], AdamState(), lr=-1.0)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=8))
def test_gradient_shape_matches_value(values):
    x = np.array(values)
    (g,) = grads_of(lambda p: ag.tsum(ag.sigmoid(p)), x)
    assert g.shape == x.shape and np.all(np.isfinite(g))
